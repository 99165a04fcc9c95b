#include "metric.hpp"

#include <cmath>

namespace ckfr {

namespace {
constexpr double kSigmaEps = 1e-12;

void validate(const LatentVector& z) {
  if (z.size() < 2) fail("latent vector length must be >= 2");
  for (double v : z) {
    if (!std::isfinite(v)) fail("latent vector has non-finite entries");
  }
}
}  // namespace

LatentVector standardize(const LatentVector& z) {
  validate(z);
  const double m = static_cast<double>(z.size());
  double mu = 0.0;
  for (double v : z) mu += v;
  mu /= m;
  double var = 0.0;
  for (double v : z) var += (v - mu) * (v - mu);
  const double sigma = std::sqrt(var / m);
  LatentVector out(z.size(), 0.0);
  if (sigma < kSigmaEps) return out;
  for (size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - mu) / sigma;
  return out;
}

double standardized_distance(const LatentVector& za, const LatentVector& zb, double ell) {
  if (za.size() != zb.size()) fail("latent_distance: length mismatch");
  if (ell < 1.0) fail("latent_distance: exponent must be >= 1");
  double acc = 0.0;
  for (size_t i = 0; i < za.size(); ++i) {
    acc += std::pow(std::fabs(za[i] - zb[i]), ell);
  }
  return acc;
}

double latent_distance(const LatentVector& za, const LatentVector& zb, double ell) {
  if (za.size() != zb.size()) fail("latent_distance: length mismatch");
  return standardized_distance(standardize(za), standardize(zb), ell);
}

std::vector<std::vector<double>> pairwise_distances(const std::vector<LatentVector>& batch,
                                                    double ell) {
  if (batch.empty()) fail("pairwise_distances: empty batch");
  const size_t n = batch.size();
  std::vector<LatentVector> hat(n);
  for (size_t i = 0; i < n; ++i) hat[i] = standardize(batch[i]);
  std::vector<std::vector<double>> table(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const double d = standardized_distance(hat[i], hat[j], ell);
      table[i][j] = d;
      table[j][i] = d;
    }
  }
  return table;
}

MetricAxiomReport check_metric_axioms(const std::vector<LatentVector>& samples, double ell,
                                      double tol) {
  if (samples.size() < 3) fail("check_metric_axioms: need at least 3 samples");
  const int n = static_cast<int>(samples.size());
  std::vector<LatentVector> hat(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) hat[i] = standardize(samples[i]);

  MetricAxiomReport report;
  const auto record = [&](bool& flag, int a, int b, int c) {
    if (flag) {
      flag = false;
      if (!report.counterexample) report.counterexample = {a, b, c};
    }
  };

  std::vector<std::vector<double>> d(samples.size(), std::vector<double>(samples.size(), 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      d[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          standardized_distance(hat[static_cast<size_t>(i)], hat[static_cast<size_t>(j)], ell);
    }
  }

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double dij = d[static_cast<size_t>(i)][static_cast<size_t>(j)];
      if (dij < 0.0) record(report.nonnegativity, i, j, j);
      if (std::fabs(dij - d[static_cast<size_t>(j)][static_cast<size_t>(i)]) > tol) {
        record(report.symmetry, i, j, j);
      }
      const bool equal_hat = hat[static_cast<size_t>(i)] == hat[static_cast<size_t>(j)];
      if (equal_hat != (dij <= tol)) record(report.identity_of_indiscernibles, i, j, j);
    }
  }
  for (int i = 0; i < n && report.triangle_inequality; ++i) {
    for (int j = 0; j < n && report.triangle_inequality; ++j) {
      for (int k = 0; k < n; ++k) {
        const double lhs = d[static_cast<size_t>(i)][static_cast<size_t>(k)];
        const double rhs = d[static_cast<size_t>(i)][static_cast<size_t>(j)] +
                           d[static_cast<size_t>(j)][static_cast<size_t>(k)];
        if (lhs > rhs + tol) {
          record(report.triangle_inequality, i, j, k);
          break;
        }
      }
    }
  }
  return report;
}

}  // namespace ckfr
