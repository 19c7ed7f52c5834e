#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

#include "segforge/config.hpp"
#include "segforge/dataset.hpp"
#include "segforge/training.hpp"
#include "segforge/volume_io.hpp"

namespace fs = std::filesystem;
using namespace segforge;

namespace {

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  return 4;
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = to_json(RunConfig{});
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json file;
    try {
      in >> file;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
    doc = file;
  }
  for (const auto& o : overrides) apply_override(doc, o);
  auto cfg = run_config_from_json(doc);
  cfg.validate();
  return cfg;
}

void convert(const fs::path& in, const fs::path& out) {
  const auto in_ext = in.extension(), out_ext = out.extension();
  if (in_ext == ".nii" && out_ext == ".svol") {
    const auto img = read_nifti(in);
    const bool unscaled = img.scl_slope == 0.0f || (img.scl_slope == 1.0f && img.scl_inter == 0.0f);
    if (unscaled && img.datatype == NiftiType::UInt8) {
      LabelVolume v(img.volume.depth, img.volume.height, img.volume.width);
      for (std::size_t i = 0; i < v.size(); ++i) v.voxels[i] = static_cast<std::uint8_t>(img.volume.voxels[i]);
      write_svol(out, v);
    } else if (unscaled && img.datatype == NiftiType::Int16) {
      Volume<std::int16_t> v(img.volume.depth, img.volume.height, img.volume.width);
      for (std::size_t i = 0; i < v.size(); ++i) v.voxels[i] = static_cast<std::int16_t>(img.volume.voxels[i]);
      write_svol(out, v);
    } else {
      write_svol(out, img.volume);
    }
  } else if (in_ext == ".svol" && out_ext == ".nii") {
    write_nifti_labels(out, svol_to_labels(read_svol(in)));
  } else {
    throw ConfigError("convert supports .nii -> .svol and label .svol -> .nii, got " + in.string() + " -> " +
                      out.string());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segforge: brain tumor segmentation (SE-ResNet encoder, U-Net decoder)"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  train_cmd->add_option("--config", config_path, "run config JSON");
  train_cmd->add_option("--override", overrides, "key=value override (repeatable)");
  bool desk = false;
  train_cmd->add_flag("--desk", desk, "start from the desk preset instead of the defaults");

  std::string ckpt, data_root, split = "val", save_masks, json_out, eval_config;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval_cmd->add_option("--data", data_root, "data root (default: the checkpoint's data source)");
  eval_cmd->add_option("--split", split, "train, val or all");
  eval_cmd->add_option("--save-masks", save_masks, "directory for predicted masks");
  eval_cmd->add_option("--json", json_out, "write the report as JSON here");
  eval_cmd->add_option("--config", eval_config, "run config whose model must match the checkpoint");

  std::string in_path, out_path;
  auto* predict_cmd = app.add_subcommand("predict", "segment one case directory");
  predict_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  predict_cmd->add_option("--in", in_path, "case directory")->required();
  predict_cmd->add_option("--out", out_path, "output mask .svol")->required();

  SyntheticSpec spec;
  auto* synth_cmd = app.add_subcommand("synth", "write synthetic cases as .svol");
  synth_cmd->add_option("--seed", spec.seed);
  synth_cmd->add_option("--cases", spec.cases);
  synth_cmd->add_option("--depth", spec.depth);
  synth_cmd->add_option("--height", spec.height);
  synth_cmd->add_option("--width", spec.width);
  synth_cmd->add_option("--lesions", spec.lesions);
  synth_cmd->add_option("--out", out_path, "output root")->required();

  auto* convert_cmd = app.add_subcommand("convert", "convert between .nii and .svol");
  convert_cmd->add_option("--in", in_path)->required();
  convert_cmd->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      RunConfig cfg;
      if (desk) {
        nlohmann::json doc = to_json(RunConfig::desk_preset());
        for (const auto& o : overrides) apply_override(doc, o);
        cfg = run_config_from_json(doc);
        if (!config_path.empty()) throw ConfigError("--desk and --config are exclusive");
      } else {
        cfg = resolve_config(config_path, overrides);
      }
      const auto result = train(cfg, &std::cout);
      std::cout << "best val dice " << result.best.dice << " at epoch " << result.best.epoch << ", outputs in "
                << result.output_dir.string() << "\n";
    } else if (*eval_cmd) {
      EvalOptions opt;
      opt.data_root = data_root;
      opt.split = parse_split(split);
      if (!save_masks.empty()) opt.save_masks = save_masks;
      if (!eval_config.empty()) opt.expected_model = load_run_config(eval_config).model;
      const auto report = evaluate(ckpt, opt);
      std::cout << report.table();
      if (!json_out.empty()) {
        const auto text = report.to_json().dump(2) + "\n";
        write_file_atomic(json_out, std::vector<std::uint8_t>(text.begin(), text.end()));
      }
    } else if (*predict_cmd) {
      const auto mask = predict(ckpt, in_path, out_path);
      std::cout << "wrote " << out_path << " (" << mask.depth << "x" << mask.height << "x" << mask.width << ")\n";
    } else if (*synth_cmd) {
      if (spec.cases < 1) throw ConfigError("--cases must be >= 1");
      if (spec.depth < 8 || spec.height < 64 || spec.width < 64)
        throw ConfigError("--depth/--height/--width must be at least 8/64/64");
      if (spec.lesions < 0) throw ConfigError("--lesions must be >= 0");
      for (const auto& s : synth_dataset(spec)) {
        write_case_svol(out_path, s);
        std::cout << (fs::path(out_path) / s.case_id).string() << "\n";
      }
    } else if (*convert_cmd) {
      convert(in_path, out_path);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
