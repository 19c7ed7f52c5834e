#include "segforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <tuple>

#include "segforge/autograd.hpp"
#include "segforge/ops.hpp"
#include "segforge/optimizer.hpp"
#include "segforge/random.hpp"

namespace segforge {
namespace fs = std::filesystem;

namespace {

SliceConfig slice_config(const RunConfig& cfg) {
  return SliceConfig{cfg.crop[0], cfg.crop[1], cfg.min_foreground_fraction};
}

std::string case_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", i);
  return buf;
}

// All cases of a run, keyed by id, loaded on demand.
class CaseSource {
 public:
  CaseSource(const RunConfig& cfg, const std::string& data_root) {
    if (!data_root.empty()) {
      root_ = data_root;
      if (!fs::is_directory(root_)) throw DataError("data root " + data_root + " is not a directory");
      ids_ = list_cases(root_);
    } else if (cfg.synthetic) {
      synth_ = synth_dataset(*cfg.synthetic);
      for (const auto& s : synth_) ids_.push_back(s.case_id);
    } else {
      throw ConfigError("no data source: data_root is empty and no synthetic spec is set");
    }
    if (ids_.empty()) throw DataError("no cases found under " + data_root);
  }

  const std::vector<std::string>& ids() const { return ids_; }

  VolumeSample load(const std::string& id) const {
    if (root_.empty()) {
      for (const auto& s : synth_) {
        if (s.case_id == id) return s;
      }
      throw DataError("unknown synthetic case " + id);
    }
    return load_case(root_, id);
  }

 private:
  fs::path root_;
  std::vector<VolumeSample> synth_;
  std::vector<std::string> ids_;
};

std::vector<SliceSample> slices_of(const CaseSource& src, const std::vector<std::string>& ids,
                                   const SliceConfig& sc, SlicePurpose purpose) {
  std::vector<SliceSample> out;
  for (const auto& id : ids) {
    auto s = extract_slices(src.load(id), sc, purpose);
    std::move(s.begin(), s.end(), std::back_inserter(out));
  }
  return out;
}

template <typename T>
BasicTensor<T> run_loss(const BasicTensor<T>& logits, const BasicTensor<T>& targets, const RunConfig& cfg) {
  BasicTensor<T> loss;
  if (cfg.dice_weight > 0.0) loss = scale(soft_dice_loss(logits, targets), static_cast<T>(cfg.dice_weight));
  if (cfg.ce_weight > 0.0) {
    auto ce = scale(cross_entropy(logits, targets), static_cast<T>(cfg.ce_weight));
    loss = loss.defined() ? add(loss, ce) : ce;
  }
  return loss;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  auto idx = iota(n);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& order, int batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// Eval-mode pass; loss is the configured objective, for reporting only.
MetricRecord validate_pass(SegModel<float>& model, const std::vector<SliceSample>& slices,
                           const RunConfig& cfg, int epoch, const std::string& split) {
  EpochAccumulator acc(kNumClasses);
  if (slices.empty()) return acc.finish(epoch, split);
  NoGradGuard no_grad;
  const Mode previous = model.mode();
  model.set_mode(Mode::Eval);
  for (const auto& b : batches(iota(slices.size()), cfg.batch_size)) {
    auto batch = make_batch<float>(slices, b);
    auto logits = model.forward(batch.images);
    const double loss = run_loss(logits, batch.targets, cfg).item();
    acc.add_batch(logits_to_mask(logits), batch.labels, loss);
  }
  model.set_mode(previous);
  return acc.finish(epoch, split);
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void log_record(std::ostream* log, const MetricRecord& r) {
  if (!log) return;
  *log << "epoch " << r.epoch << " " << r.split << " loss " << fmt6(r.loss) << " dice " << fmt6(r.dice)
       << " iou " << fmt6(r.iou) << " mean_iou " << fmt6(r.mean_iou) << " acc " << fmt6(r.accuracy)
       << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::unique_ptr<SegModel<float>> model_from(const Checkpoint& ckpt) {
  auto model = std::make_unique<SegModel<float>>(ckpt.config.model);
  restore_model(ckpt, *model);
  model->set_mode(Mode::Eval);
  return model;
}

}  // namespace

std::vector<VolumeSample> synth_dataset(const SyntheticSpec& spec) {
  std::vector<VolumeSample> out;
  for (int i = 0; i < spec.cases; ++i) {
    auto s = synth_case(mix_seed(spec.seed, static_cast<std::uint64_t>(i)),
                        {spec.depth, spec.height, spec.width}, spec.lesions);
    s.case_id = case_name(i);
    out.push_back(std::move(s));
  }
  return out;
}

RunData prepare_data(const RunConfig& cfg) {
  CaseSource src(cfg, cfg.data_root);
  RunData d;
  std::tie(d.train_ids, d.val_ids) = split_dataset(src.ids(), cfg.split_fraction, cfg.split_seed);
  const auto sc = slice_config(cfg);
  d.train_slices = slices_of(src, d.train_ids, sc, SlicePurpose::Training);
  d.val_slices = slices_of(src, d.val_ids, sc, SlicePurpose::Evaluation);
  if (d.train_slices.empty()) throw DataError("no training slices pass the foreground filter");
  return d;
}

LabelMap predict_slices(SegModel<float>& model, const std::vector<SliceSample>& slices, int batch_size) {
  if (slices.empty()) throw DataError("nothing to predict: empty slice selection");
  NoGradGuard no_grad;
  const Mode previous = model.mode();
  model.set_mode(Mode::Eval);
  const auto h = slices.front().height, w = slices.front().width;
  LabelMap out(static_cast<std::int64_t>(slices.size()), h, w);
  std::size_t at = 0;
  for (const auto& b : batches(iota(slices.size()), batch_size)) {
    auto batch = make_batch<float>(slices, b);
    const auto mask = logits_to_mask(model.forward(batch.images));
    std::copy(mask.labels.begin(), mask.labels.end(), out.labels.begin() + static_cast<std::ptrdiff_t>(at));
    at += mask.labels.size();
  }
  model.set_mode(previous);
  return out;
}

TrainResult train(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const fs::path out_dir = cfg.output_dir;
  fs::create_directories(out_dir);
  write_text(out_dir / "run.json", to_json(cfg).dump(2) + "\n");

  const auto data = prepare_data(cfg);
  if (log) {
    *log << "train cases " << data.train_ids.size() << " (" << data.train_slices.size() << " slices), val cases "
         << data.val_ids.size() << " (" << data.val_slices.size() << " slices)\n";
  }

  SegModel<float> model(cfg.model);
  init_parameters(model, cfg.seed);
  model.set_mode(Mode::Train);
  auto params = model.parameters().params;
  AdamState<float> adam;

  TrainResult result;
  result.output_dir = out_dir;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochAccumulator acc(kNumClasses);
    const auto order = shuffled(data.train_slices.size(), mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (const auto& b : batches(order, cfg.batch_size)) {
      auto batch = make_batch<float>(data.train_slices, b);
      auto logits = model.forward(batch.images);
      auto loss = run_loss(logits, batch.targets, cfg);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        Tape<float>::active().clear();
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      acc.add_batch(logits_to_mask(logits), batch.labels, value);
      backward(loss);
      adam_step(params, adam, cfg.optimizer);
      model.zero_grad();
    }
    const auto train_rec = acc.finish(epoch, "train");
    const auto val_rec = validate_pass(model, data.val_slices, cfg, epoch, "val");
    result.records.push_back(train_rec);
    result.records.push_back(val_rec);
    log_record(log, train_rec);
    log_record(log, val_rec);

    export_curves(out_dir / "curves.csv", result.records);
    const bool improved = val_rec.dice > result.best.dice;
    if (improved) result.best = BestRecord{epoch, val_rec.dice};
    const auto ckpt = make_checkpoint(model, adam, cfg, epoch, result.best);
    save_checkpoint(out_dir / "last.ckpt", ckpt);
    if (improved) save_checkpoint(out_dir / "best.ckpt", ckpt);
  }
  return result;
}

SplitSelection parse_split(const std::string& name) {
  if (name == "train") return SplitSelection::Train;
  if (name == "val") return SplitSelection::Val;
  if (name == "all") return SplitSelection::All;
  throw ConfigError("unknown split '" + name + "' (expected train, val or all)");
}

EvalReport evaluate(const fs::path& checkpoint, const EvalOptions& options) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto& cfg = ckpt.config;
  if (options.expected_model && !(*options.expected_model == cfg.model)) {
    throw ConfigError("architecture mismatch:\n  expected   " + to_json(*options.expected_model).dump() +
                      "\n  checkpoint " + to_json(cfg.model).dump());
  }
  auto model = model_from(ckpt);

  CaseSource src(cfg, options.data_root);
  std::vector<std::string> ids;
  if (options.split == SplitSelection::All) {
    ids = src.ids();
  } else {
    auto [tr, va] = split_dataset(src.ids(), cfg.split_fraction, cfg.split_seed);
    ids = options.split == SplitSelection::Train ? tr : va;
  }
  if (ids.empty()) throw DataError("empty evaluation selection");
  if (options.save_masks) fs::create_directories(*options.save_masks);

  const auto sc = slice_config(cfg);
  EpochAccumulator acc(kNumClasses);
  EvalReport rep;
  for (const auto& id : ids) {
    const auto slices = extract_slices(src.load(id), sc, SlicePurpose::Evaluation);
    if (slices.empty()) continue;
    const auto pred = predict_slices(*model, slices, cfg.batch_size);
    LabelMap truth(pred.n, pred.h, pred.w);
    for (std::size_t i = 0; i < slices.size(); ++i) {
      std::copy(slices[i].labels.begin(), slices[i].labels.end(),
                truth.labels.begin() + static_cast<std::ptrdiff_t>(i * slices[i].labels.size()));
    }
    acc.add_batch(pred, truth, 0.0);
    ++rep.cases;
    rep.slices += pred.n;
    if (options.save_masks) {
      LabelVolume pv(pred.n, pred.h, pred.w), tv(pred.n, pred.h, pred.w);
      pv.voxels = pred.labels;
      tv.voxels = truth.labels;
      write_svol(*options.save_masks / (id + "_pred.svol"), pv);
      write_svol(*options.save_masks / (id + "_truth.svol"), tv);
    }
  }
  if (rep.slices == 0) throw DataError("empty evaluation selection: no slices");

  const auto& cm = acc.confusion();
  rep.dice = cm.binary_dice();
  rep.iou = cm.binary_iou();
  rep.mean_iou = cm.mean_iou();
  rep.accuracy = cm.accuracy();
  rep.mean_class_dice = cm.mean_class_dice();
  for (int c = 0; c < kNumClasses; ++c) {
    rep.class_dice[static_cast<std::size_t>(c)] = cm.class_dice(c);
    rep.class_iou[static_cast<std::size_t>(c)] = cm.class_iou(c);
  }
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json ref = nlohmann::json::array();
  for (const auto& r : kPublishedDice) ref.push_back({{"method", r.method}, {"dice", r.dice}, {"note", kPublishedLabel}});
  return {{"cases", cases},
          {"slices", slices},
          {"dice", dice},
          {"iou", iou},
          {"mean_iou", mean_iou},
          {"accuracy", accuracy},
          {"mean_class_dice", mean_class_dice},
          {"class_dice", class_dice},
          {"class_iou", class_iou},
          {"reference",
           {{"note", kPublishedLabel},
            {"table", ref},
            {"headline",
             {{"dice", kPublishedHeadlineDice},
              {"accuracy", kPublishedAccuracy},
              {"iou", kPublishedIou},
              {"mean_iou", kPublishedMeanIou}}}}}};
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "cases " << cases << ", slices " << slices << "\n\n";
  os << "metric            measured\n";
  os << "dice (binary)     " << dice << "\n";
  os << "iou (binary)      " << iou << "\n";
  os << "mean iou          " << mean_iou << "\n";
  os << "accuracy          " << accuracy << "\n";
  os << "mean class dice   " << mean_class_dice << "\n\n";
  os << "class   dice     iou\n";
  for (std::size_t c = 0; c < class_dice.size(); ++c) {
    os << c << "       " << class_dice[c] << "   " << class_iou[c] << "\n";
  }
  os << "\nreference dice (" << kPublishedLabel << ")\n";
  for (const auto& r : kPublishedDice) {
    os << "  " << std::left << std::setw(20) << r.method << std::right << r.dice << "\n";
  }
  os << "  headline: dice " << kPublishedHeadlineDice << ", accuracy " << kPublishedAccuracy << ", iou "
     << kPublishedIou << ", mean iou " << kPublishedMeanIou << "\n";
  return os.str();
}

LabelVolume predict(const fs::path& checkpoint, const fs::path& case_dir, const fs::path& out) {
  const auto ckpt = load_checkpoint(checkpoint);
  auto model = model_from(ckpt);
  const auto sample = load_case_dir(case_dir, false);
  const auto& ref = sample.modalities[0];
  const auto sc = slice_config(ckpt.config);
  if (ref.height < sc.crop_h || ref.width < sc.crop_w) {
    throw DataError("volume " + std::to_string(ref.height) + "x" + std::to_string(ref.width) +
                    " is smaller than the model crop " + std::to_string(sc.crop_h) + "x" +
                    std::to_string(sc.crop_w));
  }
  const auto slices = extract_slices(sample, sc, SlicePurpose::Evaluation);
  const auto pred = predict_slices(*model, slices, ckpt.config.batch_size);

  LabelVolume mask(ref.depth, ref.height, ref.width);
  const int oy = crop_offset(ref.height, sc.crop_h), ox = crop_offset(ref.width, sc.crop_w);
  for (std::int64_t z = 0; z < pred.n; ++z) {
    for (std::int64_t y = 0; y < pred.h; ++y) {
      for (std::int64_t x = 0; x < pred.w; ++x) {
        mask.at(z, oy + y, ox + x) = pred.labels[static_cast<std::size_t>((z * pred.h + y) * pred.w + x)];
      }
    }
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_svol(out, mask);
  if (sample.nifti_header) {
    auto nii = out;
    nii.replace_extension(".nii");
    write_nifti_labels(nii, mask, &*sample.nifti_header);
  }
  return mask;
}

std::string format_curves(std::vector<MetricRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const MetricRecord& a, const MetricRecord& b) {
    return std::tie(a.epoch, a.split) < std::tie(b.epoch, b.split);
  });
  std::string s = "epoch,split,loss,dice,iou,mean_iou,accuracy\n";
  for (const auto& r : records) {
    s += std::to_string(r.epoch) + "," + r.split + "," + fmt6(r.loss) + "," + fmt6(r.dice) + "," + fmt6(r.iou) +
         "," + fmt6(r.mean_iou) + "," + fmt6(r.accuracy) + "\n";
  }
  return s;
}

void export_curves(const fs::path& path, const std::vector<MetricRecord>& records) {
  if (records.empty()) throw ContractError("export_curves: no records");
  write_text(path, format_curves(records));
}

std::vector<MetricRecord> parse_curves(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,split,loss,dice,iou,mean_iou,accuracy") {
    throw DataError("curves: missing or unexpected header");
  }
  std::vector<MetricRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw DataError("curves line " + std::to_string(lineno) + ": expected 7 fields");
    try {
      MetricRecord r;
      r.epoch = std::stoi(f[0]);
      r.split = f[1];
      r.loss = std::stod(f[2]);
      r.dice = std::stod(f[3]);
      r.iou = std::stod(f[4]);
      r.mean_iou = std::stod(f[5]);
      r.accuracy = std::stod(f[6]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError("curves line " + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

}  // namespace segforge
