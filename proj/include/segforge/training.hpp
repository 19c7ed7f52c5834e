#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segforge/checkpoint.hpp"
#include "segforge/config.hpp"
#include "segforge/dataset.hpp"
#include "segforge/metrics.hpp"

namespace segforge {

// Published figures for the full-scale model. Reported next to measured
// values for orientation only; nothing here is reproduced at desk scale.
struct PublishedRow {
  const char* method;
  double dice;
};
inline constexpr std::array<PublishedRow, 4> kPublishedDice{{
    {"AMMGS", 0.8172},
    {"Enc-Dec VAE", 0.8154},
    {"SLIC", 0.8593},
    {"SeResNet152-U-Net", 0.8726},
}};
inline constexpr double kPublishedAccuracy = 0.8912;
inline constexpr double kPublishedIou = 0.88;
inline constexpr double kPublishedMeanIou = 0.82;
inline constexpr double kPublishedHeadlineDice = 0.87;
inline constexpr const char* kPublishedLabel = "published, not reproduced";

// Case ids and cropped slices for one run.
struct RunData {
  std::vector<std::string> train_ids, val_ids;
  std::vector<SliceSample> train_slices;  // foreground-filtered
  std::vector<SliceSample> val_slices;    // every slice
};

// Synthetic cases are named case_000, case_001, ... and seeded with
// mix_seed(spec.seed, index).
std::vector<VolumeSample> synth_dataset(const SyntheticSpec& spec);
RunData prepare_data(const RunConfig& cfg);

struct TrainResult {
  std::vector<MetricRecord> records;
  BestRecord best;
  std::filesystem::path output_dir;
};

// Writes run.json, curves.csv, last.ckpt and best.ckpt into cfg.output_dir.
TrainResult train(const RunConfig& cfg, std::ostream* log = nullptr);

enum class SplitSelection { Train, Val, All };
SplitSelection parse_split(const std::string& name);

struct EvalOptions {
  std::string data_root;  // empty: the checkpoint's own data source
  SplitSelection split = SplitSelection::Val;
  std::optional<std::filesystem::path> save_masks;
  std::optional<ModelConfig> expected_model;  // mismatch is a ConfigError
};

struct EvalReport {
  std::int64_t cases = 0, slices = 0;
  double loss = 0.0;
  double dice = 0.0, iou = 0.0, mean_iou = 0.0, accuracy = 0.0;
  double mean_class_dice = 0.0;
  std::array<double, kNumClasses> class_dice{}, class_iou{};

  nlohmann::json to_json() const;
  std::string table() const;
};

// Eval-mode pass over the selected cases. Every slice of a selected case is
// scored (no foreground filter). With save_masks, writes
// `<case>_pred.svol` and `<case>_truth.svol` holding the cropped label volumes.
EvalReport evaluate(const std::filesystem::path& checkpoint, const EvalOptions& options);

// Segments every axial slice of a case directory (no label required) and
// writes the mask at the input's full dims, 0 outside the crop window. When
// the input was NIfTI a .nii copy with the source geometry is written next to
// `out`.
LabelVolume predict(const std::filesystem::path& checkpoint, const std::filesystem::path& case_dir,
                    const std::filesystem::path& out);

// Forward pass on a slice list in eval mode, batch by batch.
LabelMap predict_slices(SegModel<float>& model, const std::vector<SliceSample>& slices,
                        int batch_size);

// Header `epoch,split,loss,dice,iou,mean_iou,accuracy`, rows sorted by epoch
// then split, values with 6 decimals.
std::string format_curves(std::vector<MetricRecord> records);
void export_curves(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> parse_curves(const std::string& text);

}  // namespace segforge
