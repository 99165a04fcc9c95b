#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"

namespace ckfr {

// Small convolutional classifier: conv blocks (kernel 3, relu) -> global
// average pool -> linear latent of size m -> [optional 3-unit layer] -> linear
// head. The head is purely linear so the pooled-features-to-logit map has an
// explicit weight matrix.
struct BackboneSpec {
  int in_channels = 3;
  int height = 32;
  int width = 32;
  std::vector<int> conv_channels;  // one entry per block
  int latent_dim = 16;             // m
  int num_classes = 2;
  double dropout = 0.0;            // applied to the classifier path after the latent
  bool latent3_viz = false;        // insert the 3-unit visualization layer

  void validate() const;
  std::string to_json() const;
  static BackboneSpec from_json(const std::string& text);
};

using NamedTensors = std::map<std::string, Tensor>;

struct Model {
  BackboneSpec spec;
  NamedTensors weights;
};

// Fan-in-scaled uniform init, bound sqrt(6 / fan_in); biases zero.
Model build_backbone(const BackboneSpec& spec, Pcg32& rng);

// Graph assembly. Weight inputs are declared with requires_grad = true under
// the same names used by Model::weights.
std::map<std::string, int> declare_weight_inputs(Graph& g, const BackboneSpec& spec);

struct ForwardTaps {
  int features = -1;  // last conv block output [N, C, H, W]
  int pooled = -1;    // [N, C]
  int latent = -1;    // [N, m], before dropout
  int viz = -1;       // [N, 3] when the visualization layer is present, else -1
  int logits = -1;    // [N, num_classes]
};

ForwardTaps build_forward(Graph& g, const BackboneSpec& spec, int input_node,
                          const std::map<std::string, int>& weight_nodes, bool training,
                          uint64_t dropout_tag);

// Effective linear map from pooled features to logits: [C_last, num_classes].
Tensor effective_head_matrix(const Model& model);

void bind_weights(Bindings& bindings, const Model& model);

// Checkpoint file: 8-byte magic, u64 little-endian manifest length, UTF-8 JSON
// manifest (spec, tensor names/shapes/offsets, precision), then raw
// little-endian payloads in manifest order. Precision "f64" round-trips
// bit-exactly; "f32" stores narrowed values.
void save_checkpoint(const Model& model, const std::string& path,
                     const std::string& precision = "f64");
Model load_checkpoint(const std::string& path);

}  // namespace ckfr
