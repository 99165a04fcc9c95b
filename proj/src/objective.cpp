#include "objective.hpp"

#include <array>
#include <cmath>

namespace ckfr {

void LossConfig::validate() const {
  if (alpha < 0.0) fail("loss config: alpha must be nonnegative");
  if (ell < 1.0 || ell > 4.0) fail("loss config: ell must be in [1, 4]");
}

Triplet sample_triplet(int64_t dataset_size, Pcg32& rng) {
  if (dataset_size < 1) fail("sample_triplet: empty dataset");
  Triplet t;
  t.anchor = rng.next_below(static_cast<uint32_t>(dataset_size));
  t.pairing_b = rng.next_below(static_cast<uint32_t>(dataset_size));
  t.pairing_c = rng.next_below(static_cast<uint32_t>(dataset_size));
  return t;
}

double ratio_triplet_loss(double dz_ab, double dz_ac, double prior_ab, double prior_ac) {
  if (dz_ab < 0.0 || dz_ac < 0.0 || prior_ab < 0.0 || prior_ac < 0.0) {
    fail("ratio_triplet_loss: distances must be nonnegative");
  }
  return std::fabs(dz_ab * prior_ac - dz_ac * prior_ab);
}

double cross_entropy(const std::vector<double>& logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size())) fail("cross_entropy: invalid label");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double lse = 0.0;
  for (double v : logits) lse += std::exp(v - mx);
  return mx + std::log(lse) - logits[static_cast<size_t>(label)];
}

int build_latent_distance(Graph& g, int za, int zb, double ell) {
  if (ell < 1.0) fail("build_latent_distance: exponent must be >= 1");
  const int diff = g.sub(g.standardize(za), g.standardize(zb));
  const int mag = g.abs(diff);
  return g.sum(ell == 1.0 ? mag : g.pow(mag, ell));
}

int build_ratio_triplet_loss(Graph& g, int dz_ab, int dz_ac, int prior_ab, int prior_ac) {
  return g.abs(g.sub(g.mul(dz_ab, prior_ac), g.mul(dz_ac, prior_ab)));
}

namespace {

int build_onehot_ce(Graph& g, int logits_vec, int num_classes, int label) {
  std::vector<double> onehot(static_cast<size_t>(num_classes), 0.0);
  onehot[static_cast<size_t>(label)] = 1.0;
  const int row = g.reshape(logits_vec, {1, num_classes});
  const int y = g.constant(Tensor({1, static_cast<int64_t>(num_classes)}, std::move(onehot)));
  return g.sum(g.softmax_cross_entropy(row, y));
}

}  // namespace

int build_total_objective(Graph& g, const std::array<int, 3>& latents,
                          const std::array<int, 3>& logits, const std::array<int, 3>& labels,
                          const DistanceMatrix& prior, const LossConfig& cfg) {
  cfg.validate();
  const int num_classes = prior.size();
  for (int label : labels) {
    if (label < 0 || label >= num_classes) fail("total objective: label missing from prior matrix");
  }
  const int rotations = cfg.symmetrized ? 3 : 1;
  std::vector<int> terms;
  for (int r = 0; r < rotations; ++r) {
    const int a = r, b = (r + 1) % 3, c = (r + 2) % 3;
    int term = build_onehot_ce(g, logits[static_cast<size_t>(a)], num_classes, labels[static_cast<size_t>(a)]);
    if (cfg.alpha > 0.0) {
      const int dz_ab = build_latent_distance(g, latents[static_cast<size_t>(a)], latents[static_cast<size_t>(b)], cfg.ell);
      const int dz_ac = build_latent_distance(g, latents[static_cast<size_t>(a)], latents[static_cast<size_t>(c)], cfg.ell);
      const int p_ab = g.constant(Tensor::scalar(prior.at(labels[static_cast<size_t>(a)], labels[static_cast<size_t>(b)])));
      const int p_ac = g.constant(Tensor::scalar(prior.at(labels[static_cast<size_t>(a)], labels[static_cast<size_t>(c)])));
      const int qtr = build_ratio_triplet_loss(g, dz_ab, dz_ac, p_ab, p_ac);
      term = g.add(term, g.scalar_mul(qtr, cfg.alpha));
    }
    terms.push_back(term);
  }
  int total = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  if (rotations > 1) total = g.scalar_mul(total, 1.0 / rotations);
  return total;
}

AlignmentReport measure_alignment(const std::map<std::string, std::vector<LatentVector>>& class_latents,
                                  const DistanceMatrix& prior, double ell) {
  if (class_latents.size() < 2) fail("measure_alignment: need at least 2 classes");
  std::vector<std::string> names;
  std::vector<LatentVector> centroids;
  for (const auto& [name, latents] : class_latents) {
    if (latents.empty()) fail("measure_alignment: class '" + name + "' has no latents");
    LatentVector centroid(latents[0].size(), 0.0);
    for (const auto& z : latents) {
      const LatentVector hat = standardize(z);
      if (hat.size() != centroid.size()) fail("measure_alignment: latent length mismatch");
      for (size_t i = 0; i < hat.size(); ++i) centroid[i] += hat[i];
    }
    for (auto& v : centroid) v /= static_cast<double>(latents.size());
    names.push_back(name);
    centroids.push_back(std::move(centroid));
  }

  std::vector<double> dz, dt;
  for (size_t i = 0; i < names.size(); ++i) {
    for (size_t j = i + 1; j < names.size(); ++j) {
      dz.push_back(latent_distance(centroids[i], centroids[j], ell));
      dt.push_back(prior.at(names[i], names[j]));
    }
  }

  AlignmentReport report;
  report.pairs = static_cast<int64_t>(dz.size());
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < dz.size(); ++i) {
    num += dz[i] * dt[i];
    den += dt[i] * dt[i];
  }
  report.lambda = den > 0.0 ? num / den : 0.0;
  double ss = 0.0;
  for (size_t i = 0; i < dz.size(); ++i) {
    const double r = dz[i] - report.lambda * dt[i];
    ss += r * r;
  }
  report.residual = std::sqrt(ss / static_cast<double>(dz.size()));

  const double n = static_cast<double>(dz.size());
  double mz = 0.0, mt = 0.0;
  for (size_t i = 0; i < dz.size(); ++i) {
    mz += dz[i];
    mt += dt[i];
  }
  mz /= n;
  mt /= n;
  double cov = 0.0, vz = 0.0, vt = 0.0;
  for (size_t i = 0; i < dz.size(); ++i) {
    cov += (dz[i] - mz) * (dt[i] - mt);
    vz += (dz[i] - mz) * (dz[i] - mz);
    vt += (dt[i] - mt) * (dt[i] - mt);
  }
  report.pearson = (vz > 0.0 && vt > 0.0) ? cov / std::sqrt(vz * vt) : 0.0;
  return report;
}

}  // namespace ckfr
