#include "optim.hpp"

#include <cmath>

namespace ckfr {

void OptimConfig::validate() const {
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("optimizer: betas must be in [0,1)");
  if (eps <= 0.0) fail("optimizer: eps must be positive");
  if (sam_rho < 0.0) fail("optimizer: sam rho must be nonnegative");
}

OptimKind optim_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimKind::kSgd;
  if (s == "adam") return OptimKind::kAdam;
  fail("optimizer: unknown kind '" + s + "'");
}

std::string optim_kind_to_string(OptimKind k) {
  return k == OptimKind::kSgd ? "sgd" : "adam";
}

Optimizer::Optimizer(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

namespace {

bool grads_finite(const NamedTensors& grads) {
  for (const auto& [name, g] : grads) {
    (void)name;
    if (!g.all_finite()) return false;
  }
  return true;
}

void check_shapes(const NamedTensors& weights, const NamedTensors& grads) {
  for (const auto& [name, w] : weights) {
    auto it = grads.find(name);
    if (it == grads.end()) fail("optimizer: missing gradient for '" + name + "'");
    if (!it->second.same_shape(w)) fail("optimizer: gradient shape mismatch for '" + name + "'");
  }
}

double global_norm(const NamedTensors& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads) {
    (void)name;
    for (int64_t i = 0; i < g.size(); ++i) ss += g[i] * g[i];
  }
  return std::sqrt(ss);
}

}  // namespace

void Optimizer::apply(NamedTensors& weights, const NamedTensors& grads, double lr) {
  ++t_;
  for (auto& [name, w] : weights) {
    const Tensor& g = grads.at(name);
    if (cfg_.kind == OptimKind::kSgd) {
      for (int64_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      continue;
    }
    Tensor& m = m_.try_emplace(name, Tensor::zeros(w.shape())).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::zeros(w.shape())).first->second;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (int64_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

bool Optimizer::step(NamedTensors& weights, const NamedTensors& grads, double lr,
                     const GradFn& recompute) {
  check_shapes(weights, grads);
  if (!grads_finite(grads)) return false;

  if (!cfg_.sam || cfg_.sam_rho == 0.0) {
    apply(weights, grads, lr);
    return true;
  }
  if (!recompute) fail("optimizer: SAM requires a gradient recompute callback");

  const double norm = global_norm(grads);
  if (norm == 0.0) {
    apply(weights, grads, lr);
    return true;
  }
  const double scale = cfg_.sam_rho / norm;
  NamedTensors perturbed = weights;
  for (auto& [name, w] : perturbed) {
    const Tensor& g = grads.at(name);
    for (int64_t i = 0; i < w.size(); ++i) w[i] += scale * g[i];
  }
  const NamedTensors sharp_grads = recompute(perturbed);
  check_shapes(weights, sharp_grads);
  if (!grads_finite(sharp_grads)) return false;
  apply(weights, sharp_grads, lr);
  return true;
}

}  // namespace ckfr
