#include "segforge/config.hpp"

#include <fstream>
#include <set>

namespace segforge {
using nlohmann::json;

namespace {

// Reads known keys out of one JSON object and rejects anything else.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), ctx_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(ctx_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(ctx_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + ctx_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"stage_depths", c.stage_depths},       {"stage_widths", c.stage_widths},
              {"stem_channels", c.stem_channels},     {"reduction_ratio", c.reduction_ratio},
              {"in_channels", c.in_channels},         {"num_classes", c.num_classes},
              {"input_size", c.input_size},           {"decoder_channels", c.decoder_channels}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  ObjectReader r(j, "model");
  r.get("stage_depths", c.stage_depths);
  r.get("stage_widths", c.stage_widths);
  r.get("stem_channels", c.stem_channels);
  r.get("reduction_ratio", c.reduction_ratio);
  r.get("in_channels", c.in_channels);
  r.get("num_classes", c.num_classes);
  r.get("input_size", c.input_size);
  r.get("decoder_channels", c.decoder_channels);
  r.finish();
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["model"] = to_json(c.model);
  j["optimizer"] = {{"kind", c.optimizer.kind},
                    {"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["data_root"] = c.data_root;
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["synthetic"] = {{"cases", s.cases}, {"seed", s.seed},     {"depth", s.depth},
                      {"height", s.height}, {"width", s.width}, {"lesions", s.lesions}};
  } else {
    j["synthetic"] = nullptr;
  }
  j["split"] = {{"fraction", c.split_fraction}, {"seed", c.split_seed}};
  j["crop"] = c.crop;
  j["min_foreground_fraction"] = c.min_foreground_fraction;
  j["loss"] = {{"dice_weight", c.dice_weight}, {"ce_weight", c.ce_weight}};
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  if (const auto* m = r.child("model")) c.model = model_config_from_json(*m);
  if (const auto* o = r.child("optimizer")) {
    ObjectReader ro(*o, "optimizer");
    ro.get("kind", c.optimizer.kind);
    ro.get("lr", c.optimizer.lr);
    ro.get("beta1", c.optimizer.beta1);
    ro.get("beta2", c.optimizer.beta2);
    ro.get("eps", c.optimizer.eps);
    ro.finish();
  }
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("seed", c.seed);
  r.get("data_root", c.data_root);
  if (const auto* s = r.child("synthetic"); s && !s->is_null()) {
    SyntheticSpec spec;
    ObjectReader rs(*s, "synthetic");
    rs.get("cases", spec.cases);
    rs.get("seed", spec.seed);
    rs.get("depth", spec.depth);
    rs.get("height", spec.height);
    rs.get("width", spec.width);
    rs.get("lesions", spec.lesions);
    rs.finish();
    c.synthetic = spec;
  }
  if (const auto* s = r.child("split")) {
    ObjectReader rs(*s, "split");
    rs.get("fraction", c.split_fraction);
    rs.get("seed", c.split_seed);
    rs.finish();
  }
  r.get("crop", c.crop);
  r.get("min_foreground_fraction", c.min_foreground_fraction);
  if (const auto* l = r.child("loss")) {
    ObjectReader rl(*l, "loss");
    rl.get("dice_weight", c.dice_weight);
    rl.get("ce_weight", c.ce_weight);
    rl.finish();
  }
  r.get("output_dir", c.output_dir);
  r.finish();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

void RunConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& msg) { throw ConfigError("run config: " + msg); };
  if (optimizer.kind != "adam") fail("optimizer.kind must be \"adam\"");
  if (!(optimizer.lr > 0.0)) fail("optimizer.lr must be > 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail("optimizer.beta1 must be in [0,1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail("optimizer.beta2 must be in [0,1)");
  if (!(optimizer.eps > 0.0)) fail("optimizer.eps must be > 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) fail("split.fraction must be in (0,1)");
  for (int s : crop) {
    if (s < 32 || s % 32 != 0) fail("crop sizes must be positive multiples of 32");
  }
  if (!(min_foreground_fraction >= 0.0 && min_foreground_fraction <= 1.0)) {
    fail("min_foreground_fraction must be in [0,1]");
  }
  if (dice_weight < 0.0 || ce_weight < 0.0 || dice_weight + ce_weight <= 0.0) {
    fail("loss weights must be non-negative and not both zero");
  }
  if (output_dir.empty()) fail("output_dir must be set");
  if (data_root.empty()) {
    if (!synthetic) fail("either data_root or synthetic must be given");
    const auto& s = *synthetic;
    if (s.cases < 2) fail("synthetic.cases must be >= 2");
    if (s.depth < 8 || s.height < 64 || s.width < 64) fail("synthetic dims must be >= 8x64x64");
    if (s.lesions < 0) fail("synthetic.lesions must be >= 0");
    if (crop[0] > s.height || crop[1] > s.width) fail("crop larger than synthetic slices");
  }
}

RunConfig RunConfig::desk_preset() {
  RunConfig c;
  c.model = ModelConfig::desk();
  c.optimizer.lr = 1e-2;
  c.epochs = 30;
  c.batch_size = 4;
  c.seed = 1;
  c.synthetic = SyntheticSpec{};
  c.crop = {64, 64};
  c.output_dir = "runs/desk";
  return c;
}

}  // namespace segforge
