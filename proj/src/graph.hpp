#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace ckfr {

enum class Op {
  kInput,
  kConst,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kBiasAdd,
  kMatMul,
  kConv2d,
  kRelu,
  kAbs,
  kPow,
  kSum,
  kMean,
  kGlobalAvgPool,
  kDropout,
  kSoftmaxCrossEntropy,
  kStandardize,
  kReshape,
  kSliceRow,
};

const char* op_name(Op op);

struct Node {
  Op op;
  std::vector<int> inputs;
  std::vector<int64_t> shape;  // inferred at build time
  // Payloads (meaning depends on op).
  std::string name;            // kInput
  Tensor value;                // kConst
  double scalar = 0.0;         // kScalarMul factor, kPow exponent, kDropout drop prob
  std::vector<int> axes;       // kSum / kMean (empty = reduce all)
  int pad = 0;                 // kConv2d zero padding
  int axis = 0;                // kBiasAdd broadcast axis
  int64_t index = 0;           // kSliceRow row
  uint64_t tag = 0;            // kDropout stream tag
  bool requires_grad = true;   // kInput
};

// Static computation graph over dense tensors. Nodes are appended in
// topological order by construction; shapes are inferred and validated as the
// graph is built. Instances are immutable after construction and safe to share
// read-only across threads; evaluation state lives in Values.
class Graph {
 public:
  int input(const std::string& name, std::vector<int64_t> shape, bool requires_grad = true);
  int constant(Tensor v);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scalar_mul(int a, double c);
  int bias_add(int x, int b, int axis);
  int matmul(int a, int b);
  int conv2d(int x, int w, int pad = 0);
  int relu(int a);
  int abs(int a);
  int pow(int a, double exponent);
  int sum(int a, std::vector<int> axes = {});
  int mean(int a, std::vector<int> axes = {});
  int global_avg_pool(int a);
  int dropout(int a, double drop_prob, uint64_t tag);
  int softmax_cross_entropy(int logits, int onehot);
  int standardize(int a);
  int reshape(int a, std::vector<int64_t> shape);
  int slice_row(int a, int64_t row);

  void mark_output(const std::string& name, int id);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const std::map<std::string, int>& inputs() const { return inputs_; }
  const std::map<std::string, int>& outputs() const { return outputs_; }
  int output_id(const std::string& name) const;

  // True for nodes whose value depends on at least one requires-grad input.
  bool needs_grad(int id) const { return needs_grad_[static_cast<size_t>(id)]; }

 private:
  int push(Node n);
  int check_id(int id) const;

  std::vector<Node> nodes_;
  std::vector<bool> needs_grad_;
  std::map<std::string, int> inputs_;
  std::map<std::string, int> outputs_;
};

using Bindings = std::map<std::string, Tensor>;

struct EvalOptions {
  bool training = false;        // dropout active only when true
  uint64_t dropout_seed = 0;    // combined with each node's tag
};

// Result of a forward pass. Holds every node's value plus the branch
// signature used by check_gradient to detect kink crossings.
class Values {
 public:
  const Tensor& of(int id) const { return values_[static_cast<size_t>(id)]; }
  const Tensor& output(const std::string& name) const;
  std::map<std::string, Tensor> outputs() const;
  uint64_t branch_signature() const { return signature_; }
  const EvalOptions& options() const { return options_; }

 private:
  friend Values evaluate(const Graph& g, const Bindings& bindings, const EvalOptions& opt);
  const Graph* graph_ = nullptr;
  std::vector<Tensor> values_;
  uint64_t signature_ = 0;
  EvalOptions options_;
};

Values evaluate(const Graph& g, const Bindings& bindings, const EvalOptions& opt = {});

// Gradients of one scalar output with respect to graph nodes.
class Gradients {
 public:
  bool has(int id) const { return has_[static_cast<size_t>(id)]; }
  const Tensor& of(int id) const;
  // Gradient for a named input; zero tensor if the input does not reach the output.
  Tensor for_input(const std::string& name) const;
  std::map<std::string, Tensor> all_inputs() const;

 private:
  friend Gradients backward(const Graph& g, const Values& vals, int output);
  const Graph* graph_ = nullptr;
  std::vector<Tensor> grads_;
  std::vector<bool> has_;
};

Gradients backward(const Graph& g, const Values& vals, int output);

struct GradientCheckInput {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
};

// Comparison of backward() against central finite differences.
//
// Relative error for a coordinate is |analytic - fd| / max(|analytic|, |fd|)
// and is tracked only where max(|analytic|, |fd|) >= rel_floor; smaller
// coordinates contribute to max_abs_err instead. Coordinates whose +/- step
// evaluations take different branches through relu/abs (and near-zero bases of
// fractional powers) are excluded and counted in skipped.
struct GradientCheckReport {
  double step = 0.0;
  double rel_floor = 1e-4;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t skipped = 0;
  std::map<std::string, GradientCheckInput> per_input;
};

GradientCheckReport check_gradient(const Graph& g, const Bindings& bindings, int output,
                                   double step, const EvalOptions& opt = {},
                                   const std::vector<std::string>& only_inputs = {});

}  // namespace ckfr
