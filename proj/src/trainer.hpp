#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "backbone.hpp"
#include "objective.hpp"
#include "optim.hpp"
#include "synth.hpp"
#include "tree.hpp"

namespace ckfr {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr_initial = 1e-3;  // linear decay between the endpoints
  double lr_final = 1e-4;
  OptimConfig optim;
  LossConfig loss;
  AugmentConfig augment;
  uint64_t seed = 0;
  int eval_batch = 64;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_ce = 0.0;
  double mean_qtr = 0.0;
  double val_top1 = 0.0;
  double val_top5 = 0.0;
  double align_pearson = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::string to_csv() const;
};

struct TrainResult {
  Model model;
  TrainHistory history;
  int64_t skipped_steps = 0;  // steps dropped because of non-finite gradients
};

// Prior matrix whose rows follow class_names, with distances taken between the
// mapped tree nodes.
DistanceMatrix build_prior_matrix(const KnowledgeTree& tree, const ClassMapping& mapping,
                                  const std::vector<std::string>& class_names);

// One optimization step couples a classification batch with one sampled
// triplet: the anchor's cross-entropy joins the batch mean and the ratio term
// is weighted by alpha. With alpha = 0 the triplet machinery is not built at
// all and the loop reduces to plain supervised training.
struct StepGraph {
  Graph graph;
  int loss = -1;
  int ce = -1;
  int qtr = -1;  // -1 when alpha == 0
  bool has_triplet = false;
};

StepGraph build_step_graph(const BackboneSpec& spec, int batch_size, int num_classes,
                           const LossConfig& loss);

TrainResult train(const TrainConfig& cfg, const BackboneSpec& spec, const Dataset& train_set,
                  const Dataset& val_set, const KnowledgeTree& tree, const ClassMapping& mapping);

// Validation-time forward pass outputs.
struct EvalOutputs {
  double top1 = 0.0;  // percentages
  double top5 = 0.0;
  std::vector<std::vector<int>> ranked;  // per image, classes by descending logit (top 5)
  std::vector<LatentVector> latents;     // per image
};

EvalOutputs evaluate_classifier(const Model& model, const Dataset& ds, int eval_batch = 64);

// Alignment between per-class validation latents and the prior, as measured
// on class centroids.
AlignmentReport alignment_on_dataset(const std::vector<LatentVector>& latents,
                                     const std::vector<int>& labels,
                                     const std::vector<std::string>& class_names,
                                     const DistanceMatrix& prior, double ell);

double linear_lr(double lr_initial, double lr_final, int64_t step, int64_t total_steps);

}  // namespace ckfr
