#pragma once

#include <string>
#include <vector>

#include "backbone.hpp"
#include "boxes.hpp"
#include "synth.hpp"

namespace ckfr {

// Per-image class activation grid, normalized to [0, 1]. Negative raw
// activations clip to zero before min-max scaling; a constant raw map
// normalizes to all zeros.
struct ActivationMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  int source_class = 0;
  std::string method;  // "cam" | "gradcam"

  double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

enum class CamMethod { kCam, kGradCam };

// cam: final feature maps weighted by the effective pooled->logit weights for
// the class. gradcam: channel weights are the spatial mean of
// d(logit)/d(feature map), map is the relu of the weighted sum. Both are
// bilinearly upsampled to the image size and normalized.
ActivationMap compute_activation_map(const Model& model, const Tensor& image, int class_idx,
                                     CamMethod method);

std::vector<double> bilinear_upsample(const std::vector<double>& src, int h, int w, int out_h,
                                      int out_w);
void normalize_activation(std::vector<double>& values);

// Threshold at >= tau, 4-connected components, tight box per component.
std::vector<Box> extract_boxes(const ActivationMap& map, double tau);

// Keeps each tau_g1 box whose intersection with the union of the tau_g2 boxes
// covers at least overlap_keep of its own area.
std::vector<Box> filter_dual_threshold(const std::vector<Box>& boxes_g1,
                                       const std::vector<Box>& boxes_g2, double overlap_keep);

// Percentage of images where some candidate box reaches IoU >= delta against
// some ground-truth box. Images with no candidates count as misses.
double max_box_acc(const std::vector<std::pair<std::vector<Box>, std::vector<Box>>>& per_image,
                   double delta);

struct EvalConfig {
  double tau_g1 = 0.4;
  double tau_g2 = 0.6;
  double delta = 0.25;
  double overlap_keep = 0.4;

  void validate() const;
  static EvalConfig preset(const std::string& name);  // "convnet" | "vit"
};

enum class BoxProtocol { kSingleThreshold, kDualThreshold };

std::vector<Box> candidate_boxes(const ActivationMap& map, const EvalConfig& cfg,
                                 BoxProtocol protocol);

struct LocalizationMetrics {
  double gt_loc = 0.0;    // percentages
  double top1_loc = 0.0;
  double top5_loc = 0.0;
};

// gt_loc scores localization with the ground-truth-class map regardless of the
// classification outcome; top-k metrics require the classification to also be
// correct at k.
LocalizationMetrics localization_metrics(const std::vector<std::vector<int>>& ranked,
                                         const std::vector<int>& labels,
                                         const std::vector<ActivationMap>& gt_class_maps,
                                         const std::vector<std::vector<Box>>& gt_boxes,
                                         const EvalConfig& cfg, BoxProtocol protocol);

// Fraction of total activation mass falling outside the ground-truth box.
double activation_mass_outside(const ActivationMap& map, const Box& gt);

// CSV with one row per sample: id,label,v1,v2,v3 from the 3-unit layer.
void export_latent3d(const Model& model, const Dataset& ds, const std::string& path);

}  // namespace ckfr
