#include "segforge/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "segforge/random.hpp"

namespace segforge {
namespace fs = std::filesystem;

namespace {

constexpr const char* kSegName = "seg";

struct LoadedVolume {
  FloatVolume voxels;
  std::optional<std::vector<std::uint8_t>> header;
  std::optional<std::array<float, 3>> spacing;
  fs::path path;
  bool labels_from_svol = false;
  SvolArray svol;
};

std::optional<fs::path> find_modality_file(const fs::path& dir, const std::string& case_id,
                                           const std::string& name) {
  const fs::path candidates[] = {dir / (case_id + "_" + name + ".nii"),
                                 dir / (case_id + "_" + name + ".svol"), dir / (name + ".svol")};
  for (const auto& p : candidates) {
    if (fs::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

LoadedVolume load_volume(const fs::path& dir, const std::string& case_id, const std::string& name) {
  const auto path = find_modality_file(dir, case_id, name);
  if (!path) {
    if (fs::exists(dir / (case_id + "_" + name + ".nii.gz"))) {
      throw DataError("compressed " + (dir / (case_id + "_" + name + ".nii.gz")).string() +
                      " is not supported; decompress it first");
    }
    throw DataError("case " + case_id + ": missing " + name + " volume (looked for " +
                    (dir / (case_id + "_" + name + ".nii")).string() + " and .svol variants)");
  }
  LoadedVolume out;
  out.path = *path;
  if (path->extension() == ".nii") {
    auto img = read_nifti(*path);
    out.voxels = std::move(img.volume);
    out.header = std::move(img.header);
    out.spacing = img.spacing;
  } else {
    out.svol = read_svol(*path);
    out.labels_from_svol = true;
    if (name != kSegName) out.voxels = svol_to_float(out.svol);
  }
  return out;
}

LabelVolume float_to_labels(const FloatVolume& v, const fs::path& path) {
  LabelVolume out(v.depth, v.height, v.width);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float x = v.voxels[i];
    if (!(x >= 0.0f && x <= 255.0f) || std::nearbyint(x) != x) {
      throw DataError(path.string() + ": segmentation value " + std::to_string(x) +
                      " is not a label");
    }
    out.voxels[i] = static_cast<std::uint8_t>(x);
  }
  return out;
}

}  // namespace

VolumeSample load_case(const fs::path& root, const std::string& case_id, bool with_label) {
  const auto dir = root / case_id;
  if (!fs::is_directory(dir)) throw DataError("case directory " + dir.string() + " not found");
  VolumeSample s;
  s.case_id = case_id;
  std::optional<std::array<std::int64_t, 3>> dims;
  fs::path first;
  auto check_dims = [&](const std::array<std::int64_t, 3>& d, const fs::path& p) {
    if (!dims) {
      dims = d;
      first = p;
    } else if (*dims != d) {
      auto str = [](const std::array<std::int64_t, 3>& a) {
        return std::to_string(a[0]) + "x" + std::to_string(a[1]) + "x" + std::to_string(a[2]);
      };
      throw DataError(p.string() + ": dims " + str(d) + " differ from " + first.string() + " (" +
                      str(*dims) + ")");
    }
  };
  for (int m = 0; m < kNumModalities; ++m) {
    auto loaded = load_volume(dir, case_id, kModalityNames[m]);
    check_dims(loaded.voxels.dims(), loaded.path);
    if (!s.spacing && loaded.spacing) s.spacing = loaded.spacing;
    if (!s.nifti_header && loaded.header) s.nifti_header = loaded.header;
    s.modalities[m] = std::move(loaded.voxels);
  }
  if (!with_label) {
    const auto& m0 = s.modalities[0];
    s.label = LabelVolume(m0.depth, m0.height, m0.width);
    return s;
  }
  auto seg = load_volume(dir, case_id, kSegName);
  if (seg.labels_from_svol) {
    try {
      s.label = svol_to_labels(seg.svol);
    } catch (const DataError& e) {
      throw DataError(seg.path.string() + ": " + e.what());
    }
  } else {
    s.label = float_to_labels(seg.voxels, seg.path);
    s.nifti_header = seg.header;
  }
  check_dims(s.label.dims(), seg.path);
  return s;
}

VolumeSample load_case_dir(const fs::path& case_dir, bool with_label) {
  auto dir = case_dir;
  if (dir.filename().empty()) dir = dir.parent_path();
  return load_case(dir.parent_path(), dir.filename().string(), with_label);
}

void write_case_svol(const fs::path& root, const VolumeSample& sample) {
  const auto dir = root / sample.case_id;
  fs::create_directories(dir);
  for (int m = 0; m < kNumModalities; ++m) {
    write_svol(dir / (std::string(kModalityNames[m]) + ".svol"), sample.modalities[m]);
  }
  write_svol(dir / (std::string(kSegName) + ".svol"), sample.label);
}

std::vector<std::string> list_cases(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("data root " + root.string() + " is not a directory");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------

FloatVolume normalize_modality(const FloatVolume& volume) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const float v : volume.voxels) {
    if (v != 0.0f) {
      sum += v;
      ++count;
    }
  }
  FloatVolume out = volume;
  if (count == 0) return out;
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (const float v : volume.voxels) {
    if (v != 0.0f) ss += (v - mean) * (v - mean);
  }
  const double sigma = std::max(std::sqrt(ss / static_cast<double>(count)), 1e-8);
  for (auto& v : out.voxels) {
    if (v != 0.0f) v = static_cast<float>((v - mean) / sigma);
  }
  return out;
}

LabelVolume remap_labels(const LabelVolume& raw) {
  LabelVolume out = raw;
  for (auto& v : out.voxels) {
    switch (v) {
      case 0:
      case 1:
      case 2: break;
      case 4: v = 3; break;
      default: throw DataError("unexpected segmentation label " + std::to_string(v) +
                               " (expected 0, 1, 2 or 4)");
    }
  }
  return out;
}

std::vector<SliceSample> extract_slices(const VolumeSample& sample, const SliceConfig& cfg,
                                        SlicePurpose purpose) {
  const auto& lab = sample.label;
  if (cfg.crop_h < 32 || cfg.crop_w < 32 || cfg.crop_h % 32 || cfg.crop_w % 32) {
    throw ConfigError("crop " + std::to_string(cfg.crop_h) + "x" + std::to_string(cfg.crop_w) +
                      " must be a positive multiple of 32");
  }
  if (cfg.crop_h > lab.height || cfg.crop_w > lab.width) {
    throw ConfigError("crop " + std::to_string(cfg.crop_h) + "x" + std::to_string(cfg.crop_w) +
                      " larger than volume slice " + std::to_string(lab.height) + "x" +
                      std::to_string(lab.width) + " of case " + sample.case_id);
  }
  for (const auto& m : sample.modalities) {
    if (!m.same_dims(lab)) throw DataError("case " + sample.case_id + ": modality/label dims differ");
  }
  const auto labels = remap_labels(lab);
  std::array<FloatVolume, kNumModalities> norm;
  for (int m = 0; m < kNumModalities; ++m) norm[m] = normalize_modality(sample.modalities[m]);

  const int h = cfg.crop_h, w = cfg.crop_w;
  const int oy = crop_offset(lab.height, h), ox = crop_offset(lab.width, w);
  std::vector<SliceSample> out;
  for (std::int64_t z = 0; z < lab.depth; ++z) {
    std::int64_t fg = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) fg += labels.at(z, oy + y, ox + x) > 0;
    }
    const double fraction = static_cast<double>(fg) / static_cast<double>(h * w);
    if (purpose == SlicePurpose::Training && fraction < cfg.min_foreground_fraction) continue;
    SliceSample s;
    s.case_id = sample.case_id;
    s.slice_index = static_cast<int>(z);
    s.height = h;
    s.width = w;
    s.image.resize(static_cast<std::size_t>(kNumModalities * h * w));
    s.labels.resize(static_cast<std::size_t>(h * w));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int m = 0; m < kNumModalities; ++m) {
          s.image[(m * h + y) * w + x] = norm[m].at(z, oy + y, ox + x);
        }
        s.labels[y * w + x] = labels.at(z, oy + y, ox + x);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
SliceBatch<T> make_batch(const std::vector<SliceSample>& slices,
                         const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const auto& first = slices.at(indices.front());
  const std::int64_t n = static_cast<std::int64_t>(indices.size()), h = first.height,
                     w = first.width;
  std::vector<T> images(static_cast<std::size_t>(n * kNumModalities * h * w));
  SliceBatch<T> batch;
  batch.labels = LabelMap(n, h, w);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = slices.at(indices[i]);
    if (s.height != h || s.width != w) throw ShapeError("make_batch: slices differ in size");
    std::copy(s.image.begin(), s.image.end(), images.begin() + i * kNumModalities * h * w);
    std::copy(s.labels.begin(), s.labels.end(), batch.labels.labels.begin() + i * h * w);
    batch.source.emplace_back(s.case_id, s.slice_index);
  }
  batch.images = BasicTensor<T>(Shape{n, kNumModalities, h, w}, std::move(images));
  batch.targets = one_hot<T>(batch.labels, kNumClasses);
  return batch;
}

template SliceBatch<float> make_batch(const std::vector<SliceSample>&,
                                      const std::vector<std::size_t>&);
template SliceBatch<double> make_batch(const std::vector<SliceSample>&,
                                       const std::vector<std::size_t>&);

// ---------------------------------------------------------------------------

namespace {

// Intensity offsets above the brain baseline of 1.0, indexed by remapped class.
constexpr double kOffsets[kNumModalities][kNumClasses] = {
    {0.0, -0.4, 0.1, 1.2},  // T1ce: dark necrosis, bright enhancing rim
    {0.0, 0.6, 0.9, 0.4},   // T2: bright edema and core
    {0.0, 0.3, 1.1, 0.5},   // FLAIR: bright edema
};
constexpr double kNoiseSigma = 0.05;

}  // namespace

SynthGeometry synth_geometry(std::uint64_t seed, std::array<int, 3> dims, int num_lesions) {
  if (dims[0] < 8 || dims[1] < 64 || dims[2] < 64) {
    throw ContractError("synth_case: dims must be at least 8x64x64");
  }
  if (num_lesions < 0) throw ContractError("synth_case: negative lesion count");
  Rng rng(mix_seed(seed, 0));
  SynthGeometry g;
  for (int a = 0; a < 3; ++a) g.brain.center[a] = (dims[a] - 1) / 2.0;
  g.brain.radii = {dims[0] * 0.45, dims[1] * 0.42, dims[2] * 0.40};
  for (int i = 0; i < num_lesions; ++i) {
    Lesion l;
    l.edema.radii = {dims[0] * rng.uniform(0.22, 0.32), dims[1] * rng.uniform(0.10, 0.17),
                     dims[2] * rng.uniform(0.10, 0.17)};
    for (int a = 0; a < 3; ++a) {
      const double slack = 0.5 * (g.brain.radii[a] - l.edema.radii[a]);
      l.edema.center[a] = g.brain.center[a] + rng.uniform(-slack, slack);
    }
    l.core = {l.edema.center, {l.edema.radii[0] * 0.6, l.edema.radii[1] * 0.6, l.edema.radii[2] * 0.6}};
    l.enhancing = {l.edema.center,
                   {l.edema.radii[0] * 0.35, l.edema.radii[1] * 0.35, l.edema.radii[2] * 0.35}};
    g.lesions.push_back(l);
  }
  return g;
}

VolumeSample synth_case(std::uint64_t seed, std::array<int, 3> dims, int num_lesions) {
  const auto g = synth_geometry(seed, dims, num_lesions);
  const int d = dims[0], h = dims[1], w = dims[2];
  VolumeSample s;
  s.case_id = "synth_" + std::to_string(seed);
  s.label = LabelVolume(d, h, w);
  std::vector<std::int8_t> cls(static_cast<std::size_t>(d) * h * w, -1);  // -1 = outside brain
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!g.brain.contains(z, y, x)) continue;
        // Overlapping lesions: enhancing beats core beats edema.
        int rank = 0;
        for (const auto& l : g.lesions) {
          if (l.enhancing.contains(z, y, x)) {
            rank = 3;
          } else if (l.core.contains(z, y, x)) {
            rank = std::max(rank, 2);
          } else if (l.edema.contains(z, y, x)) {
            rank = std::max(rank, 1);
          }
        }
        constexpr int kClassOfRank[] = {0, 2, 1, 3};
        const int c = kClassOfRank[rank];
        const auto idx = (static_cast<std::size_t>(z) * h + y) * w + x;
        cls[idx] = static_cast<std::int8_t>(c);
        s.label.voxels[idx] = static_cast<std::uint8_t>(c == 3 ? 4 : c);
      }
    }
  }
  for (int m = 0; m < kNumModalities; ++m) {
    Rng noise(mix_seed(seed, static_cast<std::uint64_t>(m) + 1));
    FloatVolume v(d, h, w, 0.0f);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (cls[i] < 0) continue;
      v.voxels[i] = static_cast<float>(1.0 + kOffsets[m][cls[i]] + noise.normal(0.0, kNoiseSigma));
    }
    s.modalities[m] = std::move(v);
  }
  s.spacing = std::array<float, 3>{1.0f, 1.0f, 1.0f};
  return s;
}

// ---------------------------------------------------------------------------

std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const std::vector<std::string>& case_ids, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ContractError("split fraction must lie in (0, 1)");
  }
  const auto n = case_ids.size();
  if (n < 2) throw ContractError("split_dataset needs at least 2 cases");
  auto ids = case_ids;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::string> val(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return {std::move(train), std::move(val)};
}

}  // namespace segforge
