#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <sstream>

namespace ckfr {

void TrainConfig::validate() const {
  if (epochs < 1) fail("train config: epochs must be >= 1");
  if (batch_size < 1) fail("train config: batch size must be >= 1");
  if (lr_initial <= 0.0 || lr_final <= 0.0) fail("train config: learning rates must be positive");
  if (eval_batch < 1) fail("train config: eval batch must be >= 1");
  optim.validate();
  loss.validate();
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,mean_ce,mean_qtr,val_top1,val_top5,align_pearson\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.mean_ce,
                  r.mean_qtr, r.val_top1, r.val_top5, r.align_pearson);
    os << buf;
  }
  return os.str();
}

DistanceMatrix build_prior_matrix(const KnowledgeTree& tree, const ClassMapping& mapping,
                                  const std::vector<std::string>& class_names) {
  const int n = static_cast<int>(class_names.size());
  std::vector<double> values(static_cast<size_t>(n) * n, 0.0);
  std::vector<int> nodes;
  nodes.reserve(class_names.size());
  for (const auto& c : class_names) {
    auto it = mapping.to_tree_node.find(c);
    if (it == mapping.to_tree_node.end()) fail("prior: class '" + c + "' missing from mapping");
    nodes.push_back(tree.index_of(it->second));
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = tree.distance_by_index(nodes[static_cast<size_t>(i)], nodes[static_cast<size_t>(j)]);
      values[static_cast<size_t>(i * n + j)] = d;
      values[static_cast<size_t>(j * n + i)] = d;
    }
  return DistanceMatrix(class_names, std::move(values));
}

double linear_lr(double lr_initial, double lr_final, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return lr_initial;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_initial + (lr_final - lr_initial) * t;
}

StepGraph build_step_graph(const BackboneSpec& spec, int batch_size, int num_classes,
                           const LossConfig& loss) {
  spec.validate();
  loss.validate();
  if (num_classes != spec.num_classes) fail("step graph: class count mismatch");

  StepGraph sg;
  Graph& g = sg.graph;
  const auto weights = declare_weight_inputs(g, spec);
  const int images = g.input("images", {batch_size, spec.in_channels, spec.height, spec.width}, false);
  const int labels = g.input("labels_onehot", {batch_size, num_classes}, false);
  const ForwardTaps batch_taps = build_forward(g, spec, images, weights, true, 0);
  const int ce_vec = g.softmax_cross_entropy(batch_taps.logits, labels);

  if (loss.alpha <= 0.0) {
    sg.ce = g.mean(ce_vec);
    sg.loss = sg.ce;
    g.mark_output("loss", sg.loss);
    g.mark_output("ce", sg.ce);
    return sg;
  }

  sg.has_triplet = true;
  const int trip_images = g.input("trip_images", {3, spec.in_channels, spec.height, spec.width}, false);
  const int trip_labels = g.input("trip_labels_onehot", {3, num_classes}, false);
  const int p01 = g.input("prior_01", {}, false);
  const int p02 = g.input("prior_02", {}, false);
  const int p12 = g.input("prior_12", {}, false);
  const ForwardTaps trip_taps = build_forward(g, spec, trip_images, weights, true, 1);
  const int trip_ce_vec = g.softmax_cross_entropy(trip_taps.logits, trip_labels);

  const std::array<int, 3> z = {g.slice_row(trip_taps.latent, 0), g.slice_row(trip_taps.latent, 1),
                                g.slice_row(trip_taps.latent, 2)};
  const auto prior_of = [&](int i, int j) {
    const int lo = std::min(i, j), hi = std::max(i, j);
    if (lo == 0 && hi == 1) return p01;
    if (lo == 0 && hi == 2) return p02;
    return p12;
  };

  const int rotations = loss.symmetrized ? 3 : 1;
  std::vector<int> ce_terms, qtr_terms;
  for (int r = 0; r < rotations; ++r) {
    const int a = r, b = (r + 1) % 3, c = (r + 2) % 3;
    ce_terms.push_back(g.slice_row(trip_ce_vec, a));
    const int dz_ab = build_latent_distance(g, z[static_cast<size_t>(a)], z[static_cast<size_t>(b)], loss.ell);
    const int dz_ac = build_latent_distance(g, z[static_cast<size_t>(a)], z[static_cast<size_t>(c)], loss.ell);
    qtr_terms.push_back(build_ratio_triplet_loss(g, dz_ab, dz_ac, prior_of(a, b), prior_of(a, c)));
  }
  const auto mean_of = [&](const std::vector<int>& terms) {
    int acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
    return terms.size() > 1 ? g.scalar_mul(acc, 1.0 / static_cast<double>(terms.size())) : acc;
  };
  const int anchor_ce = mean_of(ce_terms);
  sg.qtr = mean_of(qtr_terms);

  // The anchor's cross-entropy joins the batch mean.
  const int ce_total = g.scalar_mul(g.add(g.sum(ce_vec), anchor_ce), 1.0 / (batch_size + 1.0));
  sg.ce = ce_total;
  sg.loss = g.add(ce_total, g.scalar_mul(sg.qtr, loss.alpha));
  g.mark_output("loss", sg.loss);
  g.mark_output("ce", sg.ce);
  g.mark_output("qtr", sg.qtr);
  return sg;
}

namespace {

void fill_onehot(Tensor& t, const std::vector<int>& labels, int num_classes) {
  std::fill(t.data(), t.data() + t.size(), 0.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    t[static_cast<int64_t>(i) * num_classes + labels[i]] = 1.0;
  }
}

uint64_t step_dropout_seed(uint64_t seed, int64_t step) {
  return seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(step + 1));
}

std::vector<int> ranked_classes(const double* logits, int num_classes, int k) {
  std::vector<int> idx(static_cast<size_t>(num_classes));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  idx.resize(static_cast<size_t>(std::min(k, num_classes)));
  return idx;
}

}  // namespace

EvalOutputs evaluate_classifier(const Model& model, const Dataset& ds, int eval_batch) {
  if (ds.count() == 0) fail("evaluate_classifier: empty dataset");
  const BackboneSpec& spec = model.spec;
  EvalOutputs out;
  out.ranked.reserve(static_cast<size_t>(ds.count()));
  out.latents.reserve(static_cast<size_t>(ds.count()));

  // One graph per distinct chunk size (the tail chunk is usually smaller).
  std::map<int, std::pair<Graph, ForwardTaps>> graphs;
  const auto graph_for = [&](int n) -> std::pair<Graph, ForwardTaps>& {
    auto it = graphs.find(n);
    if (it != graphs.end()) return it->second;
    auto& entry = graphs[n];
    const auto weights = declare_weight_inputs(entry.first, spec);
    const int images = entry.first.input("images", {n, spec.in_channels, spec.height, spec.width}, false);
    entry.second = build_forward(entry.first, spec, images, weights, false, 0);
    entry.first.mark_output("logits", entry.second.logits);
    entry.first.mark_output("latent", entry.second.latent);
    return entry;
  };

  int64_t correct1 = 0, correct5 = 0;
  for (int64_t at = 0; at < ds.count(); at += eval_batch) {
    const int n = static_cast<int>(std::min<int64_t>(eval_batch, ds.count() - at));
    auto& [graph, taps] = graph_for(n);
    Bindings bindings;
    bind_weights(bindings, model);
    Tensor images({n, spec.in_channels, spec.height, spec.width});
    std::memcpy(images.data(), ds.image_ptr(at),
                sizeof(double) * static_cast<size_t>(images.size()));
    bindings["images"] = std::move(images);
    const Values vals = evaluate(graph, bindings);
    const Tensor& logits = vals.of(taps.logits);
    const Tensor& latent = vals.of(taps.latent);
    for (int i = 0; i < n; ++i) {
      const int label = ds.labels[static_cast<size_t>(at + i)];
      auto ranked = ranked_classes(logits.data() + static_cast<int64_t>(i) * spec.num_classes,
                                   spec.num_classes, 5);
      if (!ranked.empty() && ranked[0] == label) ++correct1;
      if (std::find(ranked.begin(), ranked.end(), label) != ranked.end()) ++correct5;
      out.ranked.push_back(std::move(ranked));
      const double* zp = latent.data() + static_cast<int64_t>(i) * spec.latent_dim;
      out.latents.emplace_back(zp, zp + spec.latent_dim);
    }
  }
  out.top1 = 100.0 * static_cast<double>(correct1) / static_cast<double>(ds.count());
  out.top5 = 100.0 * static_cast<double>(correct5) / static_cast<double>(ds.count());
  return out;
}

AlignmentReport alignment_on_dataset(const std::vector<LatentVector>& latents,
                                     const std::vector<int>& labels,
                                     const std::vector<std::string>& class_names,
                                     const DistanceMatrix& prior, double ell) {
  std::map<std::string, std::vector<LatentVector>> grouped;
  for (size_t i = 0; i < latents.size(); ++i) {
    grouped[class_names.at(static_cast<size_t>(labels[i]))].push_back(latents[i]);
  }
  return measure_alignment(grouped, prior, ell);
}

TrainResult train(const TrainConfig& cfg, const BackboneSpec& spec, const Dataset& train_set,
                  const Dataset& val_set, const KnowledgeTree& tree, const ClassMapping& mapping) {
  cfg.validate();
  spec.validate();
  train_set.validate();
  val_set.validate();
  if (train_set.class_names.empty()) fail("train: dataset has no classes");
  if (static_cast<int>(train_set.class_names.size()) != spec.num_classes) {
    fail("train: spec class count does not match dataset");
  }

  // Precomputed once, before the loop.
  const DistanceMatrix prior = build_prior_matrix(tree, mapping, train_set.class_names);

  const int batch = static_cast<int>(std::min<int64_t>(cfg.batch_size, train_set.count()));
  const int64_t steps_per_epoch = train_set.count() / batch;  // partial tail batches are dropped
  if (steps_per_epoch < 1) fail("train: dataset smaller than one batch");
  const int64_t total_steps = steps_per_epoch * cfg.epochs;

  Pcg32 init_rng(cfg.seed, rng_stream::kInit);
  Pcg32 batch_rng(cfg.seed, rng_stream::kBatch);
  Pcg32 aug_rng(cfg.seed, rng_stream::kAugment);
  Pcg32 trip_rng(cfg.seed, rng_stream::kTriplet);

  TrainResult result;
  result.model = build_backbone(spec, init_rng);
  Model& model = result.model;

  StepGraph sg = build_step_graph(spec, batch, spec.num_classes, cfg.loss);
  Optimizer optimizer(cfg.optim);

  const int64_t img_elems = train_set.image_size();
  std::vector<int64_t> order(static_cast<size_t>(train_set.count()));
  std::iota(order.begin(), order.end(), 0);

  const auto fill_images = [&](Tensor& dst, const std::vector<int64_t>& ids) {
    for (size_t i = 0; i < ids.size(); ++i) {
      if (cfg.augment.any()) {
        const Tensor img = augment(train_set.image(ids[i]), cfg.augment, aug_rng);
        std::memcpy(dst.data() + static_cast<int64_t>(i) * img_elems, img.data(),
                    sizeof(double) * static_cast<size_t>(img_elems));
      } else {
        std::memcpy(dst.data() + static_cast<int64_t>(i) * img_elems, train_set.image_ptr(ids[i]),
                    sizeof(double) * static_cast<size_t>(img_elems));
      }
    }
  };

  int64_t global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle on the batch stream.
    for (int64_t i = train_set.count() - 1; i > 0; --i) {
      const int64_t j = batch_rng.next_below(static_cast<uint32_t>(i + 1));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double ce_sum = 0.0, qtr_sum = 0.0;
    for (int64_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
      Bindings bindings;
      bind_weights(bindings, model);

      std::vector<int64_t> ids(order.begin() + step * batch, order.begin() + (step + 1) * batch);
      Tensor images({batch, spec.in_channels, spec.height, spec.width});
      fill_images(images, ids);
      bindings["images"] = std::move(images);
      std::vector<int> batch_labels;
      batch_labels.reserve(ids.size());
      for (int64_t id : ids) batch_labels.push_back(train_set.labels[static_cast<size_t>(id)]);
      Tensor onehot({batch, spec.num_classes});
      fill_onehot(onehot, batch_labels, spec.num_classes);
      bindings["labels_onehot"] = std::move(onehot);

      if (sg.has_triplet) {
        const Triplet t = sample_triplet(train_set.count(), trip_rng);
        const std::vector<int64_t> tids = {t.anchor, t.pairing_b, t.pairing_c};
        Tensor trip_images({3, spec.in_channels, spec.height, spec.width});
        fill_images(trip_images, tids);
        bindings["trip_images"] = std::move(trip_images);
        std::vector<int> tlabels;
        for (int64_t id : tids) tlabels.push_back(train_set.labels[static_cast<size_t>(id)]);
        Tensor tonehot({3, spec.num_classes});
        fill_onehot(tonehot, tlabels, spec.num_classes);
        bindings["trip_labels_onehot"] = std::move(tonehot);
        bindings["prior_01"] = Tensor::scalar(prior.at(tlabels[0], tlabels[1]));
        bindings["prior_02"] = Tensor::scalar(prior.at(tlabels[0], tlabels[2]));
        bindings["prior_12"] = Tensor::scalar(prior.at(tlabels[1], tlabels[2]));
      }

      EvalOptions opt;
      opt.training = true;
      opt.dropout_seed = step_dropout_seed(cfg.seed, global_step);

      Values vals;
      try {
        vals = evaluate(sg.graph, bindings, opt);
      } catch (const Error& e) {
        fail("train: aborted at epoch " + std::to_string(epoch + 1) + " step " +
             std::to_string(step) + ": " + e.what());
      }
      ce_sum += vals.of(sg.ce).item();
      if (sg.qtr >= 0) qtr_sum += vals.of(sg.qtr).item();

      const Gradients grads = backward(sg.graph, vals, sg.loss);
      NamedTensors grad_map;
      for (const auto& [name, tensor] : model.weights) {
        (void)tensor;
        grad_map[name] = grads.for_input(name);
      }

      const double lr = linear_lr(cfg.lr_initial, cfg.lr_final, global_step, total_steps);
      const GradFn recompute = [&](const NamedTensors& perturbed) {
        Bindings pb = bindings;
        for (const auto& [name, w] : perturbed) pb[name] = w;
        const Values pv = evaluate(sg.graph, pb, opt);
        const Gradients pg = backward(sg.graph, pv, sg.loss);
        NamedTensors gm;
        for (const auto& [name, w] : perturbed) {
          (void)w;
          gm[name] = pg.for_input(name);
        }
        return gm;
      };
      if (!optimizer.step(model.weights, grad_map, lr,
                          cfg.optim.sam ? recompute : GradFn{})) {
        ++result.skipped_steps;
      }
    }

    const EvalOutputs ev = evaluate_classifier(model, val_set, cfg.eval_batch);
    const AlignmentReport align = alignment_on_dataset(ev.latents, val_set.labels,
                                                       val_set.class_names, prior, cfg.loss.ell);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.mean_ce = ce_sum / static_cast<double>(steps_per_epoch);
    rec.mean_qtr = qtr_sum / static_cast<double>(steps_per_epoch);
    rec.val_top1 = ev.top1;
    rec.val_top5 = ev.top5;
    rec.align_pearson = align.pearson;
    result.history.records.push_back(rec);
  }
  return result;
}

}  // namespace ckfr
