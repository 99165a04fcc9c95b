// ckfr command line front end. Argument handling lives here; all real work
// happens behind the C API of the ckfr shared library.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ckfr/ckfr.h"
#include "json.hpp"

namespace {

using nlohmann::json;

int report_status(ckfr_status status) {
  if (status == CKFR_OK) return 0;
  std::cerr << "ckfr: error: " << ckfr_last_error() << "\n";
  return status == CKFR_BAD_CONFIG ? 2 : 1;
}

std::string read_file_or_die(const std::string& path, int& rc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "ckfr: error: cannot open config '" << path << "'\n";
    rc = 2;
    return "";
  }
  std::ostringstream os;
  os << in.rdbuf();
  rc = 0;
  return os.str();
}

// Applies CLI overrides on top of the config document.
std::string apply_overrides(const std::string& text, const std::optional<uint64_t>& seed,
                            const std::string& preset, bool seed_synth, int& rc) {
  rc = 0;
  if (!seed && preset.empty()) return text;
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    std::cerr << "ckfr: error: invalid config JSON: " << e.what() << "\n";
    rc = 2;
    return "";
  }
  if (seed) {
    j["train"]["seed"] = *seed;
    if (seed_synth && j.contains("dataset") && j["dataset"].contains("synth")) {
      j["dataset"]["synth"]["seed"] = *seed;
    }
  }
  if (!preset.empty()) {
    j["eval"] = json{{"preset", preset}};
  }
  return j.dump();
}

std::vector<double> parse_list(const std::string& text, int& rc) {
  rc = 0;
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      std::cerr << "ckfr: error: bad numeric list element '" << item << "'\n";
      rc = 2;
      return {};
    }
  }
  if (out.empty()) {
    std::cerr << "ckfr: error: empty value list\n";
    rc = 2;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-fused recognition laboratory"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, out_dir, tree_path, classes_path, checkpoint;
  std::string preset, alpha_list, ell_list, method = "cam";
  std::string csv_path, x_column = "value", y_column = "top1_acc";
  std::optional<uint64_t> seed;
  double edge_weight = 1.0;
  int count = 8;

  auto* gen = app.add_subcommand("gen", "synthesize a tree-blobs dataset");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--seed", seed, "override the generator seed");

  auto* distances = app.add_subcommand("distances", "export the prior distance matrix as CSV");
  distances->add_option("--tree", tree_path, "tree file")->required();
  distances->add_option("--classes", classes_path, "class mapping file")->required();
  distances->add_option("--k", edge_weight, "default edge weight");
  distances->add_option("--out", out_dir, "output CSV path")->required();

  auto* train = app.add_subcommand("train", "fit a model and write checkpoint + history");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--seed", seed, "override the training seed");

  auto* eval = app.add_subcommand("eval", "classification + localization metrics");
  eval->add_option("--config", config_path, "run config JSON")->required();
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--out", out_dir, "output directory");
  eval->add_option("--preset", preset, "threshold preset (convnet|vit)")
      ->check(CLI::IsMember({"convnet", "vit"}));

  auto* cam = app.add_subcommand("cam", "emit per-image activation maps and box overlays");
  cam->add_option("--config", config_path, "run config JSON")->required();
  cam->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  cam->add_option("--out", out_dir, "output directory");
  cam->add_option("--count", count, "number of validation images");
  cam->add_option("--method", method, "cam|gradcam")->check(CLI::IsMember({"cam", "gradcam"}));
  cam->add_option("--preset", preset, "threshold preset (convnet|vit)")
      ->check(CLI::IsMember({"convnet", "vit"}));

  auto* sweep = app.add_subcommand("sweep", "repeat train/eval over alpha or ell values");
  sweep->add_option("--config", config_path, "run config JSON")->required();
  sweep->add_option("--alpha", alpha_list, "comma-separated alpha values");
  sweep->add_option("--ell", ell_list, "comma-separated ell values");
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--seed", seed, "override the training seed");

  auto* latent3d = app.add_subcommand("latent3d", "export the 3-unit latent visualization CSV");
  latent3d->add_option("--config", config_path, "run config JSON")->required();
  latent3d->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  latent3d->add_option("--out", out_dir, "output directory");

  auto* report = app.add_subcommand("report", "SVG line plot from a sweep CSV");
  report->add_option("--csv", csv_path, "input sweep CSV")->required();
  report->add_option("--x", x_column, "x column name");
  report->add_option("--y", y_column, "y column name");
  report->add_option("--out", out_dir, "output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ckfr: error: " << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 2;
  }

  int rc = 0;
  const auto load_config = [&](bool seed_for_synth) {
    std::string text = read_file_or_die(config_path, rc);
    if (rc) return text;
    text = apply_overrides(text, seed, preset, seed_for_synth, rc);
    return text;
  };
  const auto resolve_out = [&](const std::string& text) {
    if (!out_dir.empty()) return out_dir;
    try {
      const json j = json::parse(text);
      if (j.contains("out_dir")) return j.at("out_dir").get<std::string>();
    } catch (const std::exception&) {
    }
    return std::string("out");
  };

  if (gen->parsed()) {
    const std::string cfg = load_config(true);
    if (rc) return rc;
    return report_status(ckfr_cmd_gen(cfg.c_str(), resolve_out(cfg).c_str()));
  }
  if (distances->parsed()) {
    return report_status(
        ckfr_cmd_distances(tree_path.c_str(), classes_path.c_str(), edge_weight, out_dir.c_str()));
  }
  if (train->parsed()) {
    const std::string cfg = load_config(false);
    if (rc) return rc;
    return report_status(ckfr_cmd_train(cfg.c_str(), resolve_out(cfg).c_str()));
  }
  if (eval->parsed()) {
    const std::string cfg = load_config(false);
    if (rc) return rc;
    return report_status(
        ckfr_cmd_eval(cfg.c_str(), checkpoint.c_str(), resolve_out(cfg).c_str()));
  }
  if (cam->parsed()) {
    const std::string cfg = load_config(false);
    if (rc) return rc;
    return report_status(ckfr_cmd_cam(cfg.c_str(), checkpoint.c_str(), resolve_out(cfg).c_str(),
                                      count, method.c_str()));
  }
  if (sweep->parsed()) {
    if (alpha_list.empty() == ell_list.empty()) {
      std::cerr << "ckfr: error: sweep needs exactly one of --alpha or --ell\n";
      return 2;
    }
    const std::string param = alpha_list.empty() ? "ell" : "alpha";
    const std::vector<double> values = parse_list(alpha_list.empty() ? ell_list : alpha_list, rc);
    if (rc) return rc;
    const std::string cfg = load_config(false);
    if (rc) return rc;
    return report_status(ckfr_cmd_sweep(cfg.c_str(), param.c_str(), values.data(), values.size(),
                                        resolve_out(cfg).c_str()));
  }
  if (latent3d->parsed()) {
    const std::string cfg = load_config(false);
    if (rc) return rc;
    return report_status(
        ckfr_cmd_latent3d(cfg.c_str(), checkpoint.c_str(), resolve_out(cfg).c_str()));
  }
  if (report->parsed()) {
    return report_status(
        ckfr_cmd_report(csv_path.c_str(), x_column.c_str(), y_column.c_str(), out_dir.c_str()));
  }
  std::cerr << app.help() << "\n";
  return 2;
}
