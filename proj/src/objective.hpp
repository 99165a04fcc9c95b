#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graph.hpp"
#include "metric.hpp"
#include "rng.hpp"
#include "tree.hpp"

namespace ckfr {

struct Triplet {
  int64_t anchor = 0;
  int64_t pairing_b = 0;
  int64_t pairing_c = 0;
};

struct LossConfig {
  double alpha = 0.0;        // weight of the ratio-alignment term
  double ell = 1.0;          // latent distance exponent, in [1, 4]
  bool symmetrized = false;  // average the objective over all three anchor rotations

  void validate() const;
};

// Three independent uniform draws over sample indices, with replacement.
Triplet sample_triplet(int64_t dataset_size, Pcg32& rng);

// Margin-free triplet term: |dz(a,b) * D(a,c) - dz(a,c) * D(a,b)|. Zero exactly
// when the latent distance ratio matches the prior distance ratio.
double ratio_triplet_loss(double dz_ab, double dz_ac, double prior_ab, double prior_ac);

// -log softmax(logits)[label], computed with max subtraction.
double cross_entropy(const std::vector<double>& logits, int label);

// Graph builders. These append to an existing graph so the loss can sit on top
// of a backbone forward pass; all return the id of a scalar node.

// dz = sum_i |standardize(za)_i - standardize(zb)_i|^ell for vector nodes [m].
int build_latent_distance(Graph& g, int za, int zb, double ell);

// |dz_ab * prior_ac - dz_ac * prior_ab| from scalar nodes.
int build_ratio_triplet_loss(Graph& g, int dz_ab, int dz_ac, int prior_ab, int prior_ac);

// Eq-style combined objective for a single triplet: anchor cross-entropy plus
// alpha times the ratio term; with cfg.symmetrized, the mean over all three
// anchor rotations of both terms.
//
// latents: three [m] vector nodes; logits: three [num_classes] vector nodes;
// labels: class indices into the distance matrix.
int build_total_objective(Graph& g, const std::array<int, 3>& latents,
                          const std::array<int, 3>& logits, const std::array<int, 3>& labels,
                          const DistanceMatrix& prior, const LossConfig& cfg);

struct AlignmentReport {
  double lambda = 0.0;    // least-squares scale between latent and prior distances
  double residual = 0.0;  // rms of dz - lambda * dT over class pairs
  double pearson = 0.0;   // correlation between dz and dT over class pairs
  int64_t pairs = 0;
};

// Measures how well class-centroid latent distances align with the prior
// matrix over all unordered class pairs. Centroids are means of standardized
// latents; distances between centroids use the standard latent metric.
AlignmentReport measure_alignment(const std::map<std::string, std::vector<LatentVector>>& class_latents,
                                  const DistanceMatrix& prior, double ell);

}  // namespace ckfr
