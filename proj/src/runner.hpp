#pragma once

#include <optional>
#include <string>
#include <vector>

#include "backbone.hpp"
#include "synth.hpp"
#include "trainer.hpp"
#include "wsol.hpp"

namespace ckfr {

// Malformed configuration or usage; the CLI turns this into exit code 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

[[noreturn]] inline void fail_config(const std::string& msg) { throw ConfigError(msg); }

// Experiment configuration: a JSON document with sections dataset, backbone,
// train, loss, eval and out_dir. Unknown keys are rejected.
struct RunConfig {
  std::optional<SynthConfig> synth;  // exactly one of synth / dataset_path
  std::string dataset_path;
  BackboneSpec backbone;
  bool backbone_shape_given = false;  // input extents/classes explicitly set
  TrainConfig train;
  EvalConfig eval;
  std::string out_dir = "out";

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json_text() const;  // fully resolved form
};

// Loaded experiment inputs.
struct ExperimentData {
  Dataset train;
  Dataset val;
  KnowledgeTree tree;
  ClassMapping mapping;
};

ExperimentData load_experiment_data(const RunConfig& cfg);

// Resolves dataset-derived backbone fields (input extents, class count).
void resolve_backbone(RunConfig& cfg, const Dataset& ds);

// Subcommand bodies shared by the C API and the CLI. All artifacts land under
// out_dir; every run writes resolved-config.json there.
void run_gen(const RunConfig& cfg, const std::string& out_dir);
void run_distances(const std::string& tree_path, const std::string& classes_path,
                   double default_weight, const std::string& out_csv);
void run_train(const RunConfig& cfg, const std::string& out_dir);

struct EvalRow {
  double top1 = 0.0, top5 = 0.0;
  LocalizationMetrics single;
  LocalizationMetrics dual;
  double align_pearson = 0.0;
  double mass_outside = 0.0;  // mean activation mass outside the gt box
};

EvalRow evaluate_checkpoint(const RunConfig& cfg, const Model& model, const ExperimentData& data);
void run_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_dir);
void run_cam(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_dir,
             int max_images, const std::string& method);
void run_sweep(const RunConfig& cfg, const std::string& param, const std::vector<double>& values,
               const std::string& out_dir);
void run_latent3d(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_dir);
void run_report(const std::string& sweep_csv, const std::string& x_column,
                const std::string& y_column, const std::string& out_svg);

}  // namespace ckfr
