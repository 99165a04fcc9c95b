#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ckfr {

using nlohmann::json;
namespace fs = std::filesystem;

Tensor Dataset::image(int64_t i) const {
  if (i < 0 || i >= count()) fail("dataset: image index out of range");
  std::vector<double> data(image_ptr(i), image_ptr(i) + image_size());
  return Tensor({channels, height, width}, std::move(data));
}

void Dataset::validate() const {
  if (static_cast<int64_t>(images.size()) != count() * image_size()) {
    fail("dataset: image payload size mismatch");
  }
  for (int label : labels) {
    if (label < 0 || label >= static_cast<int>(class_names.size())) fail("dataset: label out of range");
  }
  if (!boxes.empty() && static_cast<int64_t>(boxes.size()) != count()) {
    fail("dataset: box count mismatch");
  }
  for (const Box& b : boxes) {
    if (!b.valid() || b.x0 < 0 || b.y0 < 0 || b.x1 > width || b.y1 > height) {
      fail("dataset: box out of bounds");
    }
  }
}

void SynthConfig::validate() const {
  if (branching < 2) fail("synth: branching must be >= 2");
  if (depth < 1) fail("synth: depth must be >= 1");
  if (images_per_class < 1) fail("synth: images_per_class must be >= 1");
  if (image_size < 8) fail("synth: image size must be >= 8");
  if (confound_prob < 0.0 || confound_prob > 1.0) fail("synth: confound_prob must be in [0,1]");
  if (object_scale_min <= 0.0 || object_scale_max > 0.95 || object_scale_min > object_scale_max) {
    fail("synth: invalid object scale range");
  }
  if (val_fraction <= 0.0 || val_fraction >= 1.0) fail("synth: val_fraction must be in (0,1)");
  double leaves = std::pow(branching, depth);
  if (leaves > 4096) fail("synth: too many leaf classes");
  if (static_cast<int>(object_scale_min * image_size) < 4) {
    fail("synth: image too small for minimum object scale");
  }
}

namespace {

constexpr int kNumShapes = 6;  // square, disk, triangle, cross, ring, diamond

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

bool inside_shape(int shape, double u, double v) {
  // (u, v) in [-1, 1]^2 relative to the object box.
  const double au = std::fabs(u), av = std::fabs(v);
  switch (shape) {
    case 0: return au <= 0.92 && av <= 0.92;                       // square
    case 1: return u * u + v * v <= 1.0;                           // disk
    case 2: return v >= -0.9 && av <= 1.0 && au <= (1.0 - (v + 0.9) / 1.9);  // triangle
    case 3: return au <= 0.34 || av <= 0.34;                       // cross
    case 4: {                                                      // ring
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.36;
    }
    default: return au + av <= 1.05;                               // diamond
  }
}

// Texture index -> brightness multiplier over object-local coordinates.
double texture_value(int texture, double u, double v) {
  const int kind = texture % 4;
  const double freq = 3.0 + 2.0 * static_cast<double>(texture / 4);
  switch (kind) {
    case 0: return 1.0;                                                   // solid
    case 1: return std::sin(freq * 3.14159265358979 * v) > 0 ? 1.0 : 0.55;  // h stripes
    case 2: return std::sin(freq * 3.14159265358979 * u) > 0 ? 1.0 : 0.55;  // v stripes
    default: {                                                            // checker
      const bool on = (std::sin(freq * 3.14159265358979 * u) > 0) ==
                      (std::sin(freq * 3.14159265358979 * v) > 0);
      return on ? 1.0 : 0.55;
    }
  }
}

double quantize_u8(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return std::round(v * 255.0) / 255.0;
}

struct LeafAttrs {
  int shape_id = 0;
  int texture_id = 0;
  double hue = 0.0;
};

}  // namespace

SynthResult generate_tree_blobs(const SynthConfig& cfg) {
  cfg.validate();
  const int b = cfg.branching;
  const int num_leaves = static_cast<int>(std::llround(std::pow(b, cfg.depth)));
  if (b > kNumShapes) fail("synth: branching exceeds available shape count");

  // Balanced tree with path-coded node names: root, n0, n1, n00, ...
  std::ostringstream tree_os;
  tree_os << "# generated balanced hierarchy, depth " << cfg.depth << ", branching " << b << "\n";
  tree_os << "root\n";
  std::vector<std::string> level = {""};
  for (int d = 0; d < cfg.depth; ++d) {
    std::vector<std::string> next;
    for (const auto& path : level) {
      for (int c = 0; c < b; ++c) {
        const std::string child = path + std::to_string(c);
        tree_os << (path.empty() ? std::string("root") : "n" + path) << "\tn" << child << "\n";
        next.push_back(child);
      }
    }
    level = std::move(next);
  }
  const std::string tree_text = tree_os.str();

  std::ostringstream map_os;
  map_os << "# dataset class -> tree leaf\n";
  std::vector<std::string> class_names;
  std::vector<LeafAttrs> attrs(static_cast<size_t>(num_leaves));
  for (int i = 0; i < num_leaves; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "class_%03d", i);
    class_names.emplace_back(buf);
    map_os << buf << "\tn" << level[static_cast<size_t>(i)] << "\n";
    // Attribute ancestry: digits of the leaf path.
    const std::string& path = level[static_cast<size_t>(i)];
    attrs[static_cast<size_t>(i)].shape_id = path[0] - '0';
    attrs[static_cast<size_t>(i)].texture_id =
        cfg.depth >= 2 ? (path[0] - '0') * b + (path[1] - '0') : path[0] - '0';
    attrs[static_cast<size_t>(i)].hue = (static_cast<double>(i) + 0.5) / num_leaves;
  }
  const std::string mapping_text = map_os.str();

  // Background hue permutation, scrambled so the shortcut does not mirror the
  // tree ordering. Works for any leaf count: odd multiplier is coprime to L
  // only when L is even or coprime anyway; fall back to a rotation otherwise.
  std::vector<int> perm(static_cast<size_t>(num_leaves));
  {
    const int q = num_leaves % 2 == 0 ? (num_leaves / 2 + 1) | 1 : 2;
    bool ok = true;
    std::vector<bool> seen(static_cast<size_t>(num_leaves), false);
    for (int i = 0; i < num_leaves; ++i) {
      const int p = static_cast<int>((static_cast<int64_t>(i) * q + 3) % num_leaves);
      if (seen[static_cast<size_t>(p)]) {
        ok = false;
        break;
      }
      seen[static_cast<size_t>(p)] = true;
      perm[static_cast<size_t>(i)] = p;
    }
    if (!ok) {
      for (int i = 0; i < num_leaves; ++i) perm[static_cast<size_t>(i)] = (i + num_leaves / 2) % num_leaves;
    }
  }

  const int size = cfg.image_size;
  const int val_per_class = std::max(1, static_cast<int>(std::llround(cfg.images_per_class * cfg.val_fraction)));
  const int train_per_class = cfg.images_per_class - val_per_class;
  if (train_per_class < 1) fail("synth: images_per_class too small for the requested split");

  const auto init_ds = [&](const std::string& split, int per_class) {
    Dataset ds;
    ds.split = split;
    ds.class_names = class_names;
    ds.channels = 3;
    ds.height = size;
    ds.width = size;
    ds.seed = cfg.seed;
    ds.images.reserve(static_cast<size_t>(per_class) * num_leaves * 3 * size * size);
    return ds;
  };
  Dataset train = init_ds("train", train_per_class);
  Dataset val = init_ds("val", val_per_class);

  std::vector<double> pixels(static_cast<size_t>(3 * size * size));
  for (int cls = 0; cls < num_leaves; ++cls) {
    Pcg32 rng(cfg.seed, rng_stream::kSynth ^ (static_cast<uint64_t>(cls) * 0x9e3779b97f4a7c15ULL));
    const LeafAttrs& la = attrs[static_cast<size_t>(cls)];
    for (int img = 0; img < cfg.images_per_class; ++img) {
      const bool is_val = img >= train_per_class;
      Dataset& ds = is_val ? val : train;

      // Background: confounded hue on the training split only.
      const bool confounded = !is_val && rng.next_bernoulli(cfg.confound_prob);
      double bg_hue;
      if (confounded) {
        bg_hue = (perm[static_cast<size_t>(cls)] + 0.5) / num_leaves + rng.next_range(-0.02, 0.02);
      } else {
        bg_hue = rng.next_double();
      }
      double bg_rgb[3];
      hsv_to_rgb(bg_hue, 0.35, 0.75, bg_rgb);

      // Object placement.
      const double scale = rng.next_range(cfg.object_scale_min, cfg.object_scale_max);
      const double radius = scale * size / 2.0;
      const double cx = rng.next_range(radius, size - radius);
      const double cy = rng.next_range(radius, size - radius);
      double obj_rgb[3];
      hsv_to_rgb(la.hue, 0.95, 1.0, obj_rgb);

      int bx0 = size, by0 = size, bx1 = 0, by1 = 0;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double u = (x + 0.5 - cx) / radius;
          const double v = (y + 0.5 - cy) / radius;
          const size_t pix = static_cast<size_t>(y) * size + x;
          const bool on = std::fabs(u) <= 1.0 && std::fabs(v) <= 1.0 && inside_shape(la.shape_id, u, v);
          if (on) {
            const double tv = texture_value(la.texture_id, u, v);
            for (int ch = 0; ch < 3; ++ch) {
              pixels[static_cast<size_t>(ch) * size * size + pix] = quantize_u8(obj_rgb[ch] * tv);
            }
            bx0 = std::min(bx0, x);
            by0 = std::min(by0, y);
            bx1 = std::max(bx1, x + 1);
            by1 = std::max(by1, y + 1);
          } else {
            for (int ch = 0; ch < 3; ++ch) {
              const double noise = rng.next_range(-0.03, 0.03);
              pixels[static_cast<size_t>(ch) * size * size + pix] = quantize_u8(bg_rgb[ch] + noise);
            }
          }
        }
      }
      if (bx1 <= bx0) {  // degenerate render; retry deterministically with a centered object
        fail("synth: object rendered empty (scale too small)");
      }
      ds.images.insert(ds.images.end(), pixels.begin(), pixels.end());
      ds.labels.push_back(cls);
      ds.boxes.push_back(Box{bx0, by0, bx1, by1});
      ds.background_hues.push_back(bg_hue - std::floor(bg_hue));
      ds.shape_ids.push_back(la.shape_id);
      ds.texture_ids.push_back(la.texture_id);
    }
  }

  SynthResult result;
  result.tree = KnowledgeTree::parse(tree_text, 1.0);
  result.mapping = ClassMapping::parse(mapping_text);
  result.tree_text = tree_text;
  result.mapping_text = mapping_text;
  result.train = std::move(train);
  result.val = std::move(val);
  result.train.validate();
  result.val.validate();
  return result;
}

Dataset load_cifar_binary(const std::string& path, int num_classes,
                          std::vector<std::string> class_names) {
  constexpr int64_t kRecord = 3073;  // 1 label byte + 3 * 1024 pixel bytes
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cifar: cannot open '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (blob.empty() || static_cast<int64_t>(blob.size()) % kRecord != 0) {
    fail("cifar: truncated file (size " + std::to_string(blob.size()) +
         " is not a multiple of 3073)");
  }
  const int64_t n = static_cast<int64_t>(blob.size()) / kRecord;

  Dataset ds;
  ds.split = "train";
  if (class_names.empty()) {
    for (int i = 0; i < num_classes; ++i) class_names.push_back("class_" + std::to_string(i));
  }
  if (static_cast<int>(class_names.size()) != num_classes) fail("cifar: class name count mismatch");
  ds.class_names = std::move(class_names);
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.images.resize(static_cast<size_t>(n) * 3072);
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const unsigned char* rec = reinterpret_cast<const unsigned char*>(blob.data()) + i * kRecord;
    const int label = rec[0];
    if (label >= num_classes) {
      fail("cifar: label byte " + std::to_string(label) + " >= class count " +
           std::to_string(num_classes) + " at record " + std::to_string(i));
    }
    ds.labels[static_cast<size_t>(i)] = label;
    for (int64_t j = 0; j < 3072; ++j) {
      ds.images[static_cast<size_t>(i * 3072 + j)] = rec[1 + j] / 255.0;
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

double sample_bilinear(const double* plane, int h, int w, double y, double x) {
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, w - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
  const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

Tensor augment(const Tensor& image, const AugmentConfig& cfg, Pcg32& rng) {
  if (image.rank() != 3) fail("augment: expects [c, h, w]");
  const int c = static_cast<int>(image.extent(0));
  const int h = static_cast<int>(image.extent(1));
  const int w = static_cast<int>(image.extent(2));
  Tensor out = image;

  if (cfg.crop) {
    const double area = rng.next_range(cfg.crop_scale_min, cfg.crop_scale_max);
    const int side_h = std::max(1, static_cast<int>(std::lround(std::sqrt(area) * h)));
    const int side_w = std::max(1, static_cast<int>(std::lround(std::sqrt(area) * w)));
    const int oy = static_cast<int>(rng.next_below(static_cast<uint32_t>(h - side_h + 1)));
    const int ox = static_cast<int>(rng.next_below(static_cast<uint32_t>(w - side_w + 1)));
    Tensor res({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = out.data() + static_cast<int64_t>(ch) * h * w;
      double* dst = res.data() + static_cast<int64_t>(ch) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double sy = oy + (y + 0.5) * side_h / h - 0.5;
          const double sx = ox + (x + 0.5) * side_w / w - 0.5;
          dst[y * w + x] = sample_bilinear(plane, h, w, sy, sx);
        }
      }
    }
    out = std::move(res);
  }

  if (cfg.flip && rng.next_bernoulli(cfg.flip_prob)) {
    for (int ch = 0; ch < c; ++ch) {
      double* plane = out.data() + static_cast<int64_t>(ch) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w / 2; ++x) std::swap(plane[y * w + x], plane[y * w + (w - 1 - x)]);
      }
    }
  }

  if (cfg.rotate) {
    const double angle = rng.next_range(-cfg.rotate_max_deg, cfg.rotate_max_deg) * 3.14159265358979 / 180.0;
    const double cs = std::cos(angle), sn = std::sin(angle);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    Tensor res({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = out.data() + static_cast<int64_t>(ch) * h * w;
      double* dst = res.data() + static_cast<int64_t>(ch) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          // Inverse rotation about the image center; zero fill outside.
          const double dy = y - cy, dx = x - cx;
          const double sy = cy + dy * cs - dx * sn;
          const double sx = cx + dy * sn + dx * cs;
          dst[y * w + x] = (sy < -0.5 || sy > h - 0.5 || sx < -0.5 || sx > w - 0.5)
                               ? 0.0
                               : sample_bilinear(plane, h, w, sy, sx);
        }
      }
    }
    out = std::move(res);
  }

  if (cfg.blur && rng.next_bernoulli(cfg.blur_prob)) {
    const double sigma = cfg.blur_sigma;
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
      ksum += kernel[static_cast<size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= ksum;
    Tensor tmp({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
      const double* src = out.data() + static_cast<int64_t>(ch) * h * w;
      double* dst = tmp.data() + static_cast<int64_t>(ch) * h * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const int xx = std::clamp(x + i, 0, w - 1);
            acc += kernel[static_cast<size_t>(i + radius)] * src[y * w + xx];
          }
          dst[y * w + x] = acc;
        }
    }
    for (int ch = 0; ch < c; ++ch) {
      const double* src = tmp.data() + static_cast<int64_t>(ch) * h * w;
      double* dst = out.data() + static_cast<int64_t>(ch) * h * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const int yy = std::clamp(y + i, 0, h - 1);
            acc += kernel[static_cast<size_t>(i + radius)] * src[yy * w + x];
          }
          dst[y * w + x] = acc;
        }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory IO

void save_dataset(const Dataset& ds, const std::string& dir) {
  ds.validate();
  fs::create_directories(dir);

  json manifest;
  manifest["format_version"] = 1;
  manifest["split"] = ds.split;
  manifest["class_names"] = ds.class_names;
  manifest["count"] = ds.count();
  manifest["channels"] = ds.channels;
  manifest["height"] = ds.height;
  manifest["width"] = ds.width;
  manifest["seed"] = ds.seed;
  manifest["dtype"] = "u8";
  manifest["has_boxes"] = !ds.boxes.empty();
  write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");

  std::string bytes(ds.images.size(), '\0');
  for (size_t i = 0; i < ds.images.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(
        std::lround(std::clamp(ds.images[i], 0.0, 1.0) * 255.0)));
  }
  write_text_file(dir + "/images.bin", bytes);

  std::ostringstream labels;
  labels << "image_id,label\n";
  for (int64_t i = 0; i < ds.count(); ++i) labels << i << "," << ds.labels[static_cast<size_t>(i)] << "\n";
  write_text_file(dir + "/labels.csv", labels.str());

  std::ostringstream boxes;
  boxes << "image_id,x0,y0,x1,y1\n";
  for (size_t i = 0; i < ds.boxes.size(); ++i) {
    const Box& b = ds.boxes[i];
    boxes << i << "," << b.x0 << "," << b.y0 << "," << b.x1 << "," << b.y1 << "\n";
  }
  write_text_file(dir + "/boxes.csv", boxes.str());
}

Dataset load_dataset(const std::string& dir) {
  json manifest = json::parse(read_text_file(dir + "/manifest.json"));
  Dataset ds;
  ds.split = manifest.at("split").get<std::string>();
  ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  ds.channels = manifest.at("channels").get<int>();
  ds.height = manifest.at("height").get<int>();
  ds.width = manifest.at("width").get<int>();
  ds.seed = manifest.at("seed").get<uint64_t>();
  const int64_t count = manifest.at("count").get<int64_t>();
  if (manifest.at("dtype").get<std::string>() != "u8") fail("dataset: unsupported dtype");

  const std::string bytes = read_text_file(dir + "/images.bin");
  if (static_cast<int64_t>(bytes.size()) != count * ds.image_size()) {
    fail("dataset: images.bin size mismatch");
  }
  ds.images.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    ds.images[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  }

  {
    std::istringstream in(read_text_file(dir + "/labels.csv"));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) fail("dataset: malformed labels.csv");
      ds.labels.push_back(std::stoi(line.substr(comma + 1)));
    }
    if (static_cast<int64_t>(ds.labels.size()) != count) fail("dataset: labels.csv count mismatch");
  }

  if (manifest.at("has_boxes").get<bool>()) {
    std::istringstream in(read_text_file(dir + "/boxes.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Box b;
      long long id = 0;
      if (std::sscanf(line.c_str(), "%lld,%d,%d,%d,%d", &id, &b.x0, &b.y0, &b.x1, &b.y1) != 5) {
        fail("dataset: malformed boxes.csv");
      }
      ds.boxes.push_back(b);
    }
  }
  ds.validate();
  return ds;
}

}  // namespace ckfr
