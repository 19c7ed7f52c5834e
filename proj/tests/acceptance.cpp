// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "segforge/checkpoint.hpp"
#include "segforge/error.hpp"
#include "segforge/training.hpp"
#include "segforge/volume_io.hpp"
#include "support/gradient_cases.hpp"
#include "support/metric_oracle.hpp"
#include "support/nifti_fixture.hpp"
#include "support/temp_dir.hpp"

using namespace segforge;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass;
  std::string detail;
};

Outcome published_constants() {
  bool ok = kPublishedDice.size() == 4 && std::string(kPublishedLabel) == "published, not reproduced";
  const double expected[4] = {0.8172, 0.8154, 0.8593, 0.8726};
  for (int i = 0; i < 4; ++i) ok = ok && kPublishedDice[i].dice == expected[i];
  ok = ok && kPublishedAccuracy == 0.8912 && kPublishedIou == 0.88 && kPublishedMeanIou == 0.82 &&
       kPublishedHeadlineDice == 0.87;
  EvalReport empty;
  const auto j = empty.to_json();
  ok = ok && j.at("reference").at("note") == kPublishedLabel && j.at("reference").at("table").size() == 4;
  ok = ok && empty.table().find(kPublishedLabel) != std::string::npos;
  return {ok, "4 table rows + headline figures, labeled '" + std::string(kPublishedLabel) + "'"};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 0.0;
  std::string failures;
  int layers = 0;
  for (const auto& c : testing::gradient_cases()) {
    ++layers;
    double case_worst = 0.0;
    for (int s = 0; s < c.instances; ++s) {
      const auto r = c.run(s);
      case_worst = std::max(case_worst, r.max_rel_error);
      if (r.significant == 0 || !(r.max_rel_error < 1e-4)) ok = false;
    }
    // Layer cases need at least 10 seeds; the whole-model case is a composite.
    if (c.name != "tiny_model_end_to_end" && c.instances < 10) ok = false;
    if (case_worst >= 1e-4) failures += " " + c.name;
    worst = std::max(worst, case_worst);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 180.0;
  return {ok, std::to_string(layers) + " cases, max rel error " + fmt("%.2e", worst) + ", " + fmt("%.1f", secs) +
                  " s" + (failures.empty() ? "" : ", failing:" + failures)};
}

Outcome metric_oracle() {
  int mismatches = 0;
  double worst_identity = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto [p, t] = testing::random_mask_pair(seed, 8, 8);
    const auto o = testing::oracle_scores(p, t, 4);
    const double d = dice_coefficient(p, t, DiceMode::BinaryForeground);
    const double i = iou_score(p, t, DiceMode::BinaryForeground);
    if (d != o.binary_dice || i != o.binary_iou || dice_coefficient(p, t, DiceMode::PerClassMean) != o.mean_class_dice ||
        mean_iou(p, t, 4) != o.mean_iou || pixel_accuracy(p, t) != o.accuracy)
      ++mismatches;
    worst_identity = std::max(worst_identity, std::abs(d - 2.0 * i / (1.0 + i)));
  }
  return {mismatches == 0 && worst_identity <= 1e-12,
          "200 pairs, " + std::to_string(mismatches) + " mismatches, identity gap " + fmt("%.1e", worst_identity)};
}

Outcome shape_contract() {
  NoGradGuard ng;
  const auto t0 = Clock::now();
  SegModel<float> full(ModelConfig::full());
  init_parameters(full, 1);
  full.set_mode(Mode::Eval);
  const auto x = Tensor::create({1, 3, 128, 128}, NormalFill{0.0, 1.0, 2});
  const auto taps = full.encode(x);
  bool ok = true;
  const int channels[5] = {64, 256, 512, 1024, 2048};
  std::string tap_text;
  for (int i = 0; i < 5; ++i) {
    ok = ok && taps[i].shape()[1] == channels[i] && taps[i].shape()[2] == (128 >> (i + 1));
    tap_text += (i ? "/" : "") + std::to_string(taps[i].shape()[1]);
  }
  const auto y = full.forward(x);
  const double secs = seconds_since(t0);
  ok = ok && y.shape() == Shape({1, 4, 128, 128}) && secs < 60.0;

  SegModel<float> desk(ModelConfig::desk());
  init_parameters(desk, 3);
  const auto yd = desk.forward(Tensor::create({2, 3, 64, 64}, NormalFill{0.0, 1.0, 4}));
  ok = ok && yd.shape() == Shape({2, 4, 64, 64});
  return {ok, "full [1,4,128,128] taps " + tap_text + " in " + fmt("%.2f", secs) + " s; desk [2,4,64,64]"};
}

Outcome se_and_residual() {
  NoGradGuard ng;
  bool ok = true;
  SEBlock<double> se(16, 4);
  ParamSet<double> set;
  se.collect("se", set);
  init_parameters(set, 5);
  const auto x = Tensor64::create({2, 16, 4, 4}, NormalFill{0.0, 3.0, 6});
  double lo = 1.0, hi = 0.0;
  const auto gate = se.gate(x);
  for (double g : gate.data()) {
    lo = std::min(lo, g);
    hi = std::max(hi, g);
  }
  ok = ok && lo > 0.0 && hi < 1.0;

  for (auto& v : se.fc2.weight.data()) v = 0.0;
  for (auto& v : se.fc2.bias.data()) v = 0.0;
  const auto halved = se.forward(x);
  for (std::int64_t i = 0; i < x.numel(); ++i) ok = ok && halved[i] == 0.5 * x[i];

  for (Mode mode : {Mode::Train, Mode::Eval}) {
    Bottleneck<float> block(32, 8, 1, 4);
    ParamSet<float> bset;
    block.collect("b", bset);
    init_parameters(bset, 7);
    for (auto* conv : {&block.conv1, &block.conv2, &block.conv3})
      for (auto& v : conv->weight.data()) v = 0.0f;
    const auto xb = Tensor::create({2, 32, 4, 4}, NormalFill{0.0, 1.0, 8});
    const auto yb = block.forward(xb, mode);
    for (std::int64_t i = 0; i < xb.numel(); ++i) ok = ok && yb[i] == std::max(xb[i], 0.0f);
  }
  return {ok, "gate range [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) + "], zero fc2 halves, zero branch = relu(x)"};
}

Outcome desk_overfit(const fs::path& tmp) {
  const auto t0 = Clock::now();
  auto cfg = RunConfig::desk_preset();
  cfg.output_dir = (tmp / "desk").string();
  const auto result = train(cfg);
  const double train_secs = seconds_since(t0);

  std::vector<MetricRecord> tr;
  for (const auto& r : result.records)
    if (r.split == "train") tr.push_back(r);
  const double final_dice = tr.back().dice;

  EvalOptions opt;
  opt.split = SplitSelection::Train;
  const auto rep = evaluate(fs::path(cfg.output_dir) / "last.ckpt", opt);
  const double gap = std::abs(rep.dice - final_dice);

  // Mean train loss over epochs 3..7 versus 23..27.
  auto window = [&](int centre) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : tr)
      if (std::abs(r.epoch - centre) <= 2) s += r.loss, ++n;
    return n ? s / n : NAN;
  };
  const double early = window(5), late = window(25);

  // Background accuracy of predict on the first training case.
  const auto data = prepare_data(cfg);
  const auto cases = synth_dataset(*cfg.synthetic);
  const auto& sample = *std::find_if(cases.begin(), cases.end(),
                                     [&](const VolumeSample& c) { return c.case_id == data.train_ids.front(); });
  write_case_svol(tmp / "data", sample);
  const auto mask = predict(fs::path(cfg.output_dir) / "last.ckpt", tmp / "data" / sample.case_id,
                            tmp / "pred" / "mask.svol");
  std::int64_t bg = 0, bg_hit = 0;
  for (std::size_t i = 0; i < mask.voxels.size(); ++i) {
    if (sample.label.voxels[i] != 0) continue;
    ++bg;
    bg_hit += mask.voxels[i] == 0;
  }
  const double bg_acc = bg ? double(bg_hit) / double(bg) : 1.0;
  const double secs = seconds_since(t0);

  const bool ok = final_dice >= 0.95 && gap <= 0.02 && late < early && bg_acc >= 0.95 && secs < 600.0;
  return {ok, "final train Dice " + fmt("%.4f", final_dice) + ", eval-on-train " + fmt("%.4f", rep.dice) +
                  " (gap " + fmt("%.4f", gap) + "), loss " + fmt("%.4f", early) + " -> " + fmt("%.4f", late) +
                  ", predict background acc " + fmt("%.4f", bg_acc) + ", train " + fmt("%.1f", train_secs) +
                  " s, total " + fmt("%.1f", secs) + " s"};
}

Outcome reproducibility(const fs::path& tmp) {
  auto cfg = RunConfig::desk_preset();
  cfg.epochs = 2;
  cfg.output_dir = (tmp / "repro").string();
  train(cfg);
  const auto curves = slurp(tmp / "repro" / "curves.csv");
  const auto ckpt_bytes = slurp(tmp / "repro" / "last.ckpt");
  train(cfg);
  bool curves_same = slurp(tmp / "repro" / "curves.csv") == curves;
  bool ckpt_same = slurp(tmp / "repro" / "last.ckpt") == ckpt_bytes;

  // Checkpoint round trip gives a bit-identical forward pass.
  const auto ck = load_checkpoint(tmp / "repro" / "last.ckpt");
  SegModel<float> a(ck.config.model), b(ck.config.model);
  restore_model(ck, a);
  save_checkpoint(tmp / "copy.ckpt", ck);
  restore_model(load_checkpoint(tmp / "copy.ckpt"), b);
  a.set_mode(Mode::Eval);
  b.set_mode(Mode::Eval);
  bool forward_same;
  {
    NoGradGuard ng;
    const auto x = Tensor::create({2, 3, 64, 64}, NormalFill{0.0, 1.0, 11});
    const auto ya = a.forward(x), yb = b.forward(x);
    forward_same = std::memcmp(ya.data().data(), yb.data().data(), ya.data().size_bytes()) == 0;
  }
  forward_same = forward_same && encode_checkpoint(ck) == read_file(tmp / "copy.ckpt");

  // Volume formats.
  auto s = synth_case(7, {8, 64, 64}, 2);
  s.case_id = "c7";
  write_case_svol(tmp / "svol", s);
  const auto back = load_case(tmp / "svol", "c7");
  bool svol_same = back.label == s.label;
  for (int m = 0; m < kNumModalities; ++m) svol_same = svol_same && back.modalities[m] == s.modalities[m];

  bool nifti_same = true;
  const std::vector<float> values{0.5f, -1.25f, 3.0f, 4.75f, 1e-3f, 100.0f, -7.5f, 2.0f};
  for (bool big : {false, true}) {
    testing::NiftiFixture f{{2, 2, 2}, 16, big};
    nifti_same = nifti_same && parse_nifti(f.bytes_f32(values)).volume.voxels == values;
  }
  testing::NiftiFixture lf{{4, 3, 2}, 16, true};
  const auto src = parse_nifti(lf.bytes_f32(std::vector<float>(24, 0.0f)));
  LabelVolume labels(2, 3, 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels.voxels[i] = static_cast<std::uint8_t>(i % 4);
  write_nifti_labels(tmp / "seg.nii", labels, &src.header);
  const auto lb = read_nifti(tmp / "seg.nii");
  for (std::size_t i = 0; i < labels.size(); ++i) nifti_same = nifti_same && lb.volume.voxels[i] == labels.voxels[i];

  auto yn = [](bool b) { return b ? "same" : "DIFFERENT"; };
  return {curves_same && ckpt_same && forward_same && svol_same && nifti_same,
          std::string("curves ") + yn(curves_same) + ", last.ckpt " + yn(ckpt_same) + ", restored forward " +
              yn(forward_same) + ", .svol " + yn(svol_same) + ", NIfTI " + yn(nifti_same)};
}

Outcome split_counts() {
  std::vector<std::string> ids;
  for (int i = 0; i < 494; ++i) ids.push_back("case_" + std::to_string(i));
  const auto [train_ids, val_ids] = split_dataset(ids, kDefaultTrainFraction, 1);
  std::set<std::string> t(train_ids.begin(), train_ids.end());
  std::size_t overlap = 0;
  for (const auto& id : val_ids) overlap += t.count(id);
  const bool ok = train_ids.size() == 369 && val_ids.size() == 125 && overlap == 0 &&
                  t.size() + val_ids.size() == ids.size();
  return {ok, std::to_string(train_ids.size()) + "/" + std::to_string(val_ids.size()) + ", overlap " +
                  std::to_string(overlap)};
}

}  // namespace

int main() {
  testing::TempDir tmp;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"published reference values encoded and labeled", published_constants},
      {"gradient checks for every layer", gradient_suite},
      {"metrics match brute-force oracle", metric_oracle},
      {"forward shape contract", shape_contract},
      {"SE gating and residual identities", se_and_residual},
      {"desk overfit and eval agreement", [&] { return desk_overfit(tmp.path); }},
      {"reproducibility and format round trips", [&] { return reproducibility(tmp.path); }},
      {"train/val split of 494 cases", split_counts},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " -- "
              << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
