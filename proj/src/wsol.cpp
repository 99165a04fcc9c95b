#include "wsol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <sstream>

namespace ckfr {

void EvalConfig::validate() const {
  if (!(0.0 <= tau_g1 && tau_g1 < tau_g2 && tau_g2 <= 1.0)) {
    fail("eval config: need 0 <= tau_g1 < tau_g2 <= 1");
  }
  if (delta <= 0.0 || delta >= 1.0) fail("eval config: delta must be in (0,1)");
  if (overlap_keep <= 0.0 || overlap_keep > 1.0) fail("eval config: overlap_keep must be in (0,1]");
}

EvalConfig EvalConfig::preset(const std::string& name) {
  EvalConfig cfg;
  if (name == "convnet") {
    cfg.tau_g1 = 0.4;
    cfg.tau_g2 = 0.6;
    cfg.delta = 0.25;
  } else if (name == "vit") {
    cfg.tau_g1 = 0.6;
    cfg.tau_g2 = 0.7;
    cfg.delta = 0.15;
  } else {
    fail("eval config: unknown preset '" + name + "'");
  }
  cfg.overlap_keep = 0.4;
  return cfg;
}

std::vector<double> bilinear_upsample(const std::vector<double>& src, int h, int w, int out_h,
                                      int out_w) {
  if (static_cast<size_t>(h) * w != src.size()) fail("upsample: size mismatch");
  std::vector<double> out(static_cast<size_t>(out_h) * out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      const double top = src[static_cast<size_t>(y0) * w + x0] * (1 - tx) +
                         src[static_cast<size_t>(y0) * w + x1] * tx;
      const double bot = src[static_cast<size_t>(y1) * w + x0] * (1 - tx) +
                         src[static_cast<size_t>(y1) * w + x1] * tx;
      out[static_cast<size_t>(y) * out_w + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

void normalize_activation(std::vector<double>& values) {
  for (double& v : values) v = std::max(v, 0.0);
  double mn = values.empty() ? 0.0 : values[0];
  double mx = mn;
  for (double v : values) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  if (mx <= mn) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  for (double& v : values) v = (v - mn) / (mx - mn);
}

ActivationMap compute_activation_map(const Model& model, const Tensor& image, int class_idx,
                                     CamMethod method) {
  const BackboneSpec& spec = model.spec;
  if (class_idx < 0 || class_idx >= spec.num_classes) fail("activation map: class index out of range");
  if (image.shape() != std::vector<int64_t>{spec.in_channels, spec.height, spec.width}) {
    fail("activation map: image shape " + shape_str(image.shape()) + " does not match model input");
  }

  Graph g;
  const auto weights = declare_weight_inputs(g, spec);
  const int input = g.input("image", {1, spec.in_channels, spec.height, spec.width}, false);
  const ForwardTaps taps = build_forward(g, spec, input, weights, false, 0);
  // Scalar logit for the requested class.
  std::vector<double> pick(static_cast<size_t>(spec.num_classes), 0.0);
  pick[static_cast<size_t>(class_idx)] = 1.0;
  const int logit = g.sum(g.mul(g.reshape(taps.logits, {spec.num_classes}),
                                g.constant(Tensor({spec.num_classes}, std::move(pick)))));

  Bindings bindings;
  bind_weights(bindings, model);
  bindings["image"] = Tensor({1, spec.in_channels, spec.height, spec.width}, image.values());
  const Values vals = evaluate(g, bindings);
  const Tensor& features = vals.of(taps.features);
  const int channels = static_cast<int>(features.extent(1));
  const int fh = static_cast<int>(features.extent(2));
  const int fw = static_cast<int>(features.extent(3));

  std::vector<double> raw(static_cast<size_t>(fh) * fw, 0.0);
  if (method == CamMethod::kCam) {
    const Tensor eff = effective_head_matrix(model);  // [channels, num_classes]
    for (int k = 0; k < channels; ++k) {
      const double wk = eff[static_cast<int64_t>(k) * spec.num_classes + class_idx];
      const double* fk = features.data() + static_cast<int64_t>(k) * fh * fw;
      for (size_t i = 0; i < raw.size(); ++i) raw[i] += wk * fk[i];
    }
  } else {
    const Gradients grads = backward(g, vals, logit);
    const Tensor& gf = grads.of(taps.features);
    for (int k = 0; k < channels; ++k) {
      const double* gk = gf.data() + static_cast<int64_t>(k) * fh * fw;
      double alpha = 0.0;
      for (int64_t i = 0; i < static_cast<int64_t>(fh) * fw; ++i) alpha += gk[i];
      alpha /= static_cast<double>(fh) * fw;
      const double* fk = features.data() + static_cast<int64_t>(k) * fh * fw;
      for (size_t i = 0; i < raw.size(); ++i) raw[i] += alpha * fk[i];
    }
    for (double& v : raw) v = std::max(v, 0.0);
  }

  ActivationMap map;
  map.height = spec.height;
  map.width = spec.width;
  map.source_class = class_idx;
  map.method = method == CamMethod::kCam ? "cam" : "gradcam";
  map.values = bilinear_upsample(raw, fh, fw, spec.height, spec.width);
  normalize_activation(map.values);
  return map;
}

std::vector<Box> extract_boxes(const ActivationMap& map, double tau) {
  if (tau < 0.0 || tau > 1.0) fail("extract_boxes: tau must be in [0,1]");
  const int h = map.height, w = map.width;
  std::vector<char> mask(static_cast<size_t>(h) * w, 0);
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = map.values[i] >= tau ? 1 : 0;

  std::vector<Box> boxes;
  std::vector<char> seen(mask.size(), 0);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t at = static_cast<size_t>(y) * w + x;
      if (!mask[at] || seen[at]) continue;
      Box box{x, y, x + 1, y + 1};
      seen[at] = 1;
      queue.emplace_back(y, x);
      while (!queue.empty()) {
        const auto [cy, cx] = queue.front();
        queue.pop_front();
        box.x0 = std::min(box.x0, cx);
        box.y0 = std::min(box.y0, cy);
        box.x1 = std::max(box.x1, cx + 1);
        box.y1 = std::max(box.y1, cy + 1);
        const int dy[4] = {-1, 1, 0, 0};
        const int dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const size_t nat = static_cast<size_t>(ny) * w + nx;
          if (mask[nat] && !seen[nat]) {
            seen[nat] = 1;
            queue.emplace_back(ny, nx);
          }
        }
      }
      boxes.push_back(box);
    }
  }
  return boxes;
}

std::vector<Box> filter_dual_threshold(const std::vector<Box>& boxes_g1,
                                       const std::vector<Box>& boxes_g2, double overlap_keep) {
  if (overlap_keep <= 0.0 || overlap_keep > 1.0) fail("filter: overlap_keep must be in (0,1]");
  std::vector<Box> kept;
  for (const Box& b : boxes_g1) {
    validate_box(b);
    // Area of b covered by the union of the g2 boxes, counted cell by cell so
    // overlapping g2 boxes are not double counted.
    int64_t covered = 0;
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) {
        for (const Box& g2 : boxes_g2) {
          if (x >= g2.x0 && x < g2.x1 && y >= g2.y0 && y < g2.y1) {
            ++covered;
            break;
          }
        }
      }
    }
    const double fraction = static_cast<double>(covered) / static_cast<double>(b.area());
    if (fraction >= overlap_keep) kept.push_back(b);
  }
  return kept;
}

double max_box_acc(const std::vector<std::pair<std::vector<Box>, std::vector<Box>>>& per_image,
                   double delta) {
  if (per_image.empty()) fail("max_box_acc: empty evaluation set");
  int64_t hits = 0;
  for (const auto& [candidates, gt] : per_image) {
    bool hit = false;
    for (const Box& c : candidates) {
      for (const Box& g : gt) {
        if (iou(c, g) >= delta) {
          hit = true;
          break;
        }
      }
      if (hit) break;
    }
    hits += hit ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(per_image.size());
}

std::vector<Box> candidate_boxes(const ActivationMap& map, const EvalConfig& cfg,
                                 BoxProtocol protocol) {
  cfg.validate();
  const std::vector<Box> g1 = extract_boxes(map, cfg.tau_g1);
  if (protocol == BoxProtocol::kSingleThreshold) return g1;
  const std::vector<Box> g2 = extract_boxes(map, cfg.tau_g2);
  return filter_dual_threshold(g1, g2, cfg.overlap_keep);
}

LocalizationMetrics localization_metrics(const std::vector<std::vector<int>>& ranked,
                                         const std::vector<int>& labels,
                                         const std::vector<ActivationMap>& gt_class_maps,
                                         const std::vector<std::vector<Box>>& gt_boxes,
                                         const EvalConfig& cfg, BoxProtocol protocol) {
  const size_t n = labels.size();
  if (ranked.size() != n || gt_class_maps.size() != n || gt_boxes.size() != n) {
    fail("localization_metrics: misaligned inputs");
  }
  if (n == 0) fail("localization_metrics: empty evaluation set");
  int64_t loc_hits = 0, top1_hits = 0, top5_hits = 0;
  for (size_t i = 0; i < n; ++i) {
    const auto candidates = candidate_boxes(gt_class_maps[i], cfg, protocol);
    bool hit = false;
    for (const Box& c : candidates) {
      for (const Box& g : gt_boxes[i]) {
        if (iou(c, g) >= cfg.delta) {
          hit = true;
          break;
        }
      }
      if (hit) break;
    }
    if (!hit) continue;
    ++loc_hits;
    const auto& r = ranked[i];
    if (!r.empty() && r[0] == labels[i]) ++top1_hits;
    if (std::find(r.begin(), r.end(), labels[i]) != r.end()) ++top5_hits;
  }
  LocalizationMetrics m;
  m.gt_loc = 100.0 * static_cast<double>(loc_hits) / static_cast<double>(n);
  m.top1_loc = 100.0 * static_cast<double>(top1_hits) / static_cast<double>(n);
  m.top5_loc = 100.0 * static_cast<double>(top5_hits) / static_cast<double>(n);
  return m;
}

double activation_mass_outside(const ActivationMap& map, const Box& gt) {
  validate_box(gt);
  double total = 0.0, inside = 0.0;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double v = map.at(y, x);
      total += v;
      if (x >= gt.x0 && x < gt.x1 && y >= gt.y0 && y < gt.y1) inside += v;
    }
  }
  if (total <= 0.0) return 0.0;
  return (total - inside) / total;
}

void export_latent3d(const Model& model, const Dataset& ds, const std::string& path) {
  if (!model.spec.latent3_viz) fail("latent3d: model lacks the 3-unit visualization layer");
  const BackboneSpec& spec = model.spec;
  std::ostringstream os;
  os << "id,label,v1,v2,v3\n";
  char buf[160];
  const int chunk = 64;
  std::map<int, std::pair<Graph, ForwardTaps>> graphs;
  for (int64_t at = 0; at < ds.count(); at += chunk) {
    const int n = static_cast<int>(std::min<int64_t>(chunk, ds.count() - at));
    auto it = graphs.find(n);
    if (it == graphs.end()) {
      auto& entry = graphs[n];
      const auto weights = declare_weight_inputs(entry.first, spec);
      const int images = entry.first.input("images", {n, spec.in_channels, spec.height, spec.width}, false);
      entry.second = build_forward(entry.first, spec, images, weights, false, 0);
      it = graphs.find(n);
    }
    auto& [g, taps] = it->second;
    Bindings bindings;
    bind_weights(bindings, model);
    Tensor images({n, spec.in_channels, spec.height, spec.width});
    std::copy(ds.image_ptr(at), ds.image_ptr(at) + images.size(), images.data());
    bindings["images"] = std::move(images);
    const Values vals = evaluate(g, bindings);
    const Tensor& viz = vals.of(taps.viz);
    for (int i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof(buf), "%lld,%d,%.9g,%.9g,%.9g\n",
                    static_cast<long long>(at + i), ds.labels[static_cast<size_t>(at + i)],
                    viz[static_cast<int64_t>(i) * 3], viz[static_cast<int64_t>(i) * 3 + 1],
                    viz[static_cast<int64_t>(i) * 3 + 2]);
      os << buf;
    }
  }
  write_text_file(path, os.str());
}

}  // namespace ckfr
