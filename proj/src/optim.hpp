#pragma once

#include <functional>
#include <string>

#include "backbone.hpp"

namespace ckfr {

enum class OptimKind { kSgd, kAdam };

struct OptimConfig {
  OptimKind kind = OptimKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool sam = false;       // sharpness-aware wrapper: perturb along the gradient,
  double sam_rho = 0.05;  // recompute, then step from the original weights

  void validate() const;
};

OptimKind optim_kind_from_string(const std::string& s);
std::string optim_kind_to_string(OptimKind k);

// Recomputes gradients at the given (perturbed) weights; required when SAM is on.
using GradFn = std::function<NamedTensors(const NamedTensors& weights)>;

class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg);

  // Applies one update in place. Returns false and leaves the weights
  // untouched when any gradient value is non-finite.
  bool step(NamedTensors& weights, const NamedTensors& grads, double lr,
            const GradFn& recompute = nullptr);

  int64_t steps_taken() const { return t_; }

 private:
  void apply(NamedTensors& weights, const NamedTensors& grads, double lr);

  OptimConfig cfg_;
  int64_t t_ = 0;
  NamedTensors m_;
  NamedTensors v_;
};

}  // namespace ckfr
