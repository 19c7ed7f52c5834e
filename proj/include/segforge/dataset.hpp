#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segforge/metrics.hpp"
#include "segforge/tensor.hpp"
#include "segforge/volume_io.hpp"

namespace segforge {

// Input modalities in channel order. T1 is not used.
enum class Modality { T1ce = 0, T2 = 1, Flair = 2 };
inline constexpr std::array<const char*, 3> kModalityNames{"t1ce", "t2", "flair"};
inline constexpr int kNumModalities = 3;
inline constexpr int kNumClasses = 4;

struct VolumeSample {
  std::string case_id;
  std::array<FloatVolume, kNumModalities> modalities;
  LabelVolume label;  // raw labels {0,1,2,4}
  std::optional<std::array<float, 3>> spacing;
  // Header of the source segmentation / first modality when read from NIfTI.
  std::optional<std::vector<std::uint8_t>> nifti_header;
};

// Loads `<root>/<case_id>/`: `<case_id>_<modality>.nii` files, falling back to
// `<case_id>_<modality>.svol` and `<modality>.svol`. Modalities are t1ce, t2,
// flair and seg. Throws DataError naming the missing or mismatched file.
// Without a label the segmentation is not read and `label` is all zeros.
VolumeSample load_case(const std::filesystem::path& root, const std::string& case_id,
                       bool with_label = true);

// Same, for a directory that is itself the case (case id = directory name).
VolumeSample load_case_dir(const std::filesystem::path& case_dir, bool with_label = true);

// Writes a sample as `<root>/<case_id>/<modality>.svol` (+ seg.svol).
void write_case_svol(const std::filesystem::path& root, const VolumeSample& sample);

// Sorted subdirectory names of `root`.
std::vector<std::string> list_cases(const std::filesystem::path& root);

// z-score over nonzero voxels, sigma floored at 1e-8; zeros stay zero.
FloatVolume normalize_modality(const FloatVolume& volume);

// BraTS raw labels {0,1,2,4} -> {0,1,2,3}. Any other value is a DataError.
LabelVolume remap_labels(const LabelVolume& raw);

struct SliceConfig {
  int crop_h = 128;
  int crop_w = 128;
  double min_foreground_fraction = 0.001;
};

enum class SlicePurpose { Training, Evaluation };

// One axial slice: normalized modalities stacked [3,H,W] and remapped labels [H,W].
struct SliceSample {
  std::string case_id;
  int slice_index = 0;
  int height = 0, width = 0;
  std::vector<float> image;
  std::vector<std::uint8_t> labels;
};

// Center-crops every axial slice. For Training, slices whose foreground
// fraction is below the threshold are dropped; Evaluation keeps them all.
std::vector<SliceSample> extract_slices(const VolumeSample& sample, const SliceConfig& cfg,
                                        SlicePurpose purpose);

// Crop origin used by extract_slices for a volume extent.
inline int crop_offset(std::int64_t extent, int crop) { return static_cast<int>((extent - crop) / 2); }

template <typename T>
struct SliceBatch {
  BasicTensor<T> images;   // [N,3,H,W]
  BasicTensor<T> targets;  // one-hot [N,4,H,W]
  LabelMap labels;         // [N,H,W]
  std::vector<std::pair<std::string, int>> source;
};

template <typename T>
SliceBatch<T> make_batch(const std::vector<SliceSample>& slices,
                         const std::vector<std::size_t>& indices);

// --- synthetic data ----------------------------------------------------------

struct Ellipsoid {
  std::array<double, 3> center;  // z, y, x in voxel coordinates
  std::array<double, 3> radii;   // z, y, x in voxels

  bool contains(double z, double y, double x) const {
    const double dz = (z - center[0]) / radii[0];
    const double dy = (y - center[1]) / radii[1];
    const double dx = (x - center[2]) / radii[2];
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

// Nested lesion shells: edema (2) outside, necrotic core (1) inside it and
// enhancing tumor (raw 4, remapped 3) innermost.
struct Lesion {
  Ellipsoid edema, core, enhancing;
};

struct SynthGeometry {
  Ellipsoid brain;
  std::vector<Lesion> lesions;
};

// Geometry used by synth_case for the same arguments.
SynthGeometry synth_geometry(std::uint64_t seed, std::array<int, 3> dims, int num_lesions);

// Deterministic synthetic multi-modal case. dims = {D,H,W} >= {8,64,64}.
VolumeSample synth_case(std::uint64_t seed, std::array<int, 3> dims, int num_lesions);

// --- splits -------------------------------------------------------------------

inline constexpr double kDefaultTrainFraction = 369.0 / 494.0;

// Shuffled split by case id; round(fraction * n) cases go to training, at
// least one on each side.
std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const std::vector<std::string>& case_ids, double train_fraction, std::uint64_t seed);

}  // namespace segforge
