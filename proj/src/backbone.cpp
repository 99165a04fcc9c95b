#include "backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace ckfr {

using nlohmann::json;

void BackboneSpec::validate() const {
  if (in_channels < 1 || height < 1 || width < 1) fail("backbone spec: invalid input shape");
  if (conv_channels.empty()) fail("backbone spec: at least one conv block required");
  for (int c : conv_channels) {
    if (c < 1) fail("backbone spec: conv channels must be positive");
  }
  if (latent_dim < 2) fail("backbone spec: latent dim must be >= 2");
  if (num_classes < 2) fail("backbone spec: need at least 2 classes");
  if (dropout < 0.0 || dropout >= 1.0) fail("backbone spec: dropout must be in [0, 1)");
}

std::string BackboneSpec::to_json() const {
  json j;
  j["in_channels"] = in_channels;
  j["height"] = height;
  j["width"] = width;
  j["conv_channels"] = conv_channels;
  j["latent_dim"] = latent_dim;
  j["num_classes"] = num_classes;
  j["dropout"] = dropout;
  j["latent3_viz"] = latent3_viz;
  return j.dump();
}

BackboneSpec BackboneSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  BackboneSpec spec;
  spec.in_channels = j.at("in_channels").get<int>();
  spec.height = j.at("height").get<int>();
  spec.width = j.at("width").get<int>();
  spec.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  spec.latent_dim = j.at("latent_dim").get<int>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.dropout = j.at("dropout").get<double>();
  spec.latent3_viz = j.at("latent3_viz").get<bool>();
  spec.validate();
  return spec;
}

namespace {

Tensor uniform_init(std::vector<int64_t> shape, int64_t fan_in, Pcg32& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.next_range(-bound, bound);
  return t;
}

// Weight names in forward order; map iteration then matches layer order.
struct LayerDims {
  int head_in = 0;  // latent_dim or 3 with the viz layer
};

LayerDims dims(const BackboneSpec& spec) {
  LayerDims d;
  d.head_in = spec.latent3_viz ? 3 : spec.latent_dim;
  return d;
}

}  // namespace

Model build_backbone(const BackboneSpec& spec, Pcg32& rng) {
  spec.validate();
  Model model;
  model.spec = spec;
  int cin = spec.in_channels;
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    const int cout = spec.conv_channels[i];
    const std::string base = "conv" + std::to_string(i);
    model.weights[base + ".w"] = uniform_init({cout, cin, 3, 3}, static_cast<int64_t>(cin) * 9, rng);
    model.weights[base + ".b"] = Tensor::zeros({cout});
    cin = cout;
  }
  model.weights["latent.w"] = uniform_init({cin, spec.latent_dim}, cin, rng);
  model.weights["latent.b"] = Tensor::zeros({spec.latent_dim});
  if (spec.latent3_viz) {
    model.weights["viz.w"] = uniform_init({spec.latent_dim, 3}, spec.latent_dim, rng);
    model.weights["viz.b"] = Tensor::zeros({3});
  }
  const int head_in = dims(spec).head_in;
  model.weights["head.w"] = uniform_init({head_in, spec.num_classes}, head_in, rng);
  model.weights["head.b"] = Tensor::zeros({spec.num_classes});
  return model;
}

std::map<std::string, int> declare_weight_inputs(Graph& g, const BackboneSpec& spec) {
  spec.validate();
  std::map<std::string, int> nodes;
  int cin = spec.in_channels;
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    const int cout = spec.conv_channels[i];
    const std::string base = "conv" + std::to_string(i);
    nodes[base + ".w"] = g.input(base + ".w", {cout, cin, 3, 3});
    nodes[base + ".b"] = g.input(base + ".b", {cout});
    cin = cout;
  }
  nodes["latent.w"] = g.input("latent.w", {cin, spec.latent_dim});
  nodes["latent.b"] = g.input("latent.b", {spec.latent_dim});
  if (spec.latent3_viz) {
    nodes["viz.w"] = g.input("viz.w", {spec.latent_dim, 3});
    nodes["viz.b"] = g.input("viz.b", {3});
  }
  const int head_in = dims(spec).head_in;
  nodes["head.w"] = g.input("head.w", {head_in, spec.num_classes});
  nodes["head.b"] = g.input("head.b", {spec.num_classes});
  return nodes;
}

ForwardTaps build_forward(Graph& g, const BackboneSpec& spec, int input_node,
                          const std::map<std::string, int>& w, bool training,
                          uint64_t dropout_tag) {
  ForwardTaps taps;
  int x = input_node;
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    const std::string base = "conv" + std::to_string(i);
    x = g.relu(g.bias_add(g.conv2d(x, w.at(base + ".w"), 1), w.at(base + ".b"), 1));
  }
  taps.features = x;
  taps.pooled = g.global_avg_pool(x);
  taps.latent = g.bias_add(g.matmul(taps.pooled, w.at("latent.w")), w.at("latent.b"), 1);
  int h = taps.latent;
  if (training && spec.dropout > 0.0) h = g.dropout(h, spec.dropout, dropout_tag);
  if (spec.latent3_viz) {
    taps.viz = g.bias_add(g.matmul(h, w.at("viz.w")), w.at("viz.b"), 1);
    h = taps.viz;
  }
  taps.logits = g.bias_add(g.matmul(h, w.at("head.w")), w.at("head.b"), 1);
  return taps;
}

Tensor effective_head_matrix(const Model& model) {
  const auto matmul2 = [](const Tensor& a, const Tensor& b) {
    const int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = a[i * k + kk];
        for (int64_t j = 0; j < n; ++j) out[i * n + j] += av * b[kk * n + j];
      }
    return out;
  };
  Tensor eff = model.weights.at("latent.w");
  if (model.spec.latent3_viz) eff = matmul2(eff, model.weights.at("viz.w"));
  return matmul2(eff, model.weights.at("head.w"));
}

void bind_weights(Bindings& bindings, const Model& model) {
  for (const auto& [name, tensor] : model.weights) bindings[name] = tensor;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[8] = {'C', 'K', 'F', 'R', 'C', 'K', 'P', 'T'};

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
}  // namespace

void save_checkpoint(const Model& model, const std::string& path, const std::string& precision) {
  if (precision != "f64" && precision != "f32") fail("checkpoint: precision must be f64 or f32");
  const size_t elem = precision == "f64" ? 8 : 4;

  json manifest;
  manifest["format_version"] = 1;
  manifest["precision"] = precision;
  manifest["spec"] = json::parse(model.spec.to_json());
  json tensors = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : model.weights) {
    json rec;
    rec["name"] = name;
    rec["shape"] = t.shape();
    rec["offset"] = offset;
    rec["count"] = t.size();
    tensors.push_back(std::move(rec));
    offset += static_cast<uint64_t>(t.size()) * elem;
  }
  manifest["tensors"] = std::move(tensors);
  const std::string mtext = manifest.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  append_u64(out, mtext.size());
  out += mtext;
  for (const auto& [name, t] : model.weights) {
    (void)name;
    if (precision == "f64") {
      const size_t bytes = static_cast<size_t>(t.size()) * 8;
      const size_t pos = out.size();
      out.resize(pos + bytes);
      std::memcpy(out.data() + pos, t.data(), bytes);
    } else {
      for (int64_t i = 0; i < t.size(); ++i) {
        const float f = static_cast<float>(t[i]);
        const size_t pos = out.size();
        out.resize(pos + 4);
        std::memcpy(out.data() + pos, &f, 4);
      }
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail("checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail("checkpoint: write failed for '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("checkpoint: cannot open '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (blob.size() < sizeof(kMagic) + 8) fail("checkpoint: truncated header");
  if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) fail("checkpoint: bad magic");
  uint64_t mlen = 0;
  for (int i = 7; i >= 0; --i) {
    mlen = (mlen << 8) | static_cast<unsigned char>(blob[sizeof(kMagic) + static_cast<size_t>(i)]);
  }
  const size_t payload_at = sizeof(kMagic) + 8 + mlen;
  if (payload_at > blob.size()) fail("checkpoint: truncated manifest");

  json manifest;
  try {
    manifest = json::parse(blob.substr(sizeof(kMagic) + 8, mlen));
  } catch (const std::exception& e) {
    fail(std::string("checkpoint: bad manifest: ") + e.what());
  }
  const std::string precision = manifest.at("precision").get<std::string>();
  if (precision != "f64" && precision != "f32") fail("checkpoint: unknown precision");
  const size_t elem = precision == "f64" ? 8 : 4;

  Model model;
  model.spec = BackboneSpec::from_json(manifest.at("spec").dump());

  uint64_t expected_end = 0;
  for (const auto& rec : manifest.at("tensors")) {
    const std::string name = rec.at("name").get<std::string>();
    const auto shape = rec.at("shape").get<std::vector<int64_t>>();
    const uint64_t offset = rec.at("offset").get<uint64_t>();
    const int64_t count = rec.at("count").get<int64_t>();
    if (count != shape_product(shape)) fail("checkpoint: tensor count mismatch for '" + name + "'");
    const size_t begin = payload_at + offset;
    const size_t bytes = static_cast<size_t>(count) * elem;
    if (begin + bytes > blob.size()) fail("checkpoint: truncated payload for '" + name + "'");
    Tensor t(shape);
    if (precision == "f64") {
      std::memcpy(t.data(), blob.data() + begin, bytes);
    } else {
      for (int64_t i = 0; i < count; ++i) {
        float v = 0;
        std::memcpy(&v, blob.data() + begin + static_cast<size_t>(i) * 4, 4);
        t[i] = static_cast<double>(v);
      }
    }
    if (model.weights.count(name)) fail("checkpoint: duplicate tensor '" + name + "'");
    model.weights[name] = std::move(t);
    expected_end = std::max(expected_end, offset + bytes);
  }
  if (payload_at + expected_end != blob.size()) fail("checkpoint: payload size mismatch");

  // The manifest must describe exactly the weight set the spec implies.
  Pcg32 probe(0, 0);
  Model reference = build_backbone(model.spec, probe);
  if (reference.weights.size() != model.weights.size()) fail("checkpoint: tensor set mismatch");
  for (const auto& [name, t] : reference.weights) {
    auto it = model.weights.find(name);
    if (it == model.weights.end()) fail("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape() != t.shape()) fail("checkpoint: shape mismatch for '" + name + "'");
  }
  return model;
}

}  // namespace ckfr
