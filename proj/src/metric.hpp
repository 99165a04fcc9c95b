#pragma once

#include <array>
#include <optional>
#include <vector>

#include "tensor.hpp"

namespace ckfr {

using LatentVector = std::vector<double>;

// Per-vector standardization: subtract the mean and divide by the population
// standard deviation (divisor m). Vectors with sigma < 1e-12 standardize to
// the zero vector.
LatentVector standardize(const LatentVector& z);

// Latent distance: standardize both vectors, then sum the ell-th powers of the
// absolute coordinate differences. No ell-th root is taken.
double latent_distance(const LatentVector& za, const LatentVector& zb, double ell);

// Distance assuming inputs are already standardized.
double standardized_distance(const LatentVector& za, const LatentVector& zb, double ell);

// Symmetric zero-diagonal table of latent_distance over a batch.
std::vector<std::vector<double>> pairwise_distances(const std::vector<LatentVector>& batch,
                                                    double ell);

struct MetricAxiomReport {
  bool nonnegativity = true;
  bool identity_of_indiscernibles = true;  // on the standardized space
  bool symmetry = true;
  bool triangle_inequality = true;
  // Indices into the sample list witnessing the first failed axiom.
  std::optional<std::array<int, 3>> counterexample;

  bool all_pass() const {
    return nonnegativity && identity_of_indiscernibles && symmetry && triangle_inequality;
  }
};

// Exhaustively tests all triples of the sample set. Identity of indiscernibles
// is asserted on the standardized space: d == 0 exactly when the standardized
// forms coincide.
MetricAxiomReport check_metric_axioms(const std::vector<LatentVector>& samples, double ell,
                                      double tol = 1e-9);

}  // namespace ckfr
