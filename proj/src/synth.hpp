#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "boxes.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "tree.hpp"

namespace ckfr {

struct Dataset {
  std::string split;  // "train" | "val"
  std::vector<std::string> class_names;
  int channels = 3;
  int height = 32;
  int width = 32;
  uint64_t seed = 0;
  std::vector<double> images;  // [n][c][h][w], values in [0, 1]
  std::vector<int> labels;
  std::vector<Box> boxes;  // ground-truth object boxes; may be empty

  // Generator metadata; empty for datasets loaded from files.
  std::vector<double> background_hues;
  std::vector<int> shape_ids;
  std::vector<int> texture_ids;

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
  int64_t image_size() const { return static_cast<int64_t>(channels) * height * width; }
  const double* image_ptr(int64_t i) const { return images.data() + i * image_size(); }
  Tensor image(int64_t i) const;  // [c, h, w]
  void validate() const;
};

// Tree-blobs generator: a balanced tree of depth d with unit edges defines
// b^d leaf classes. The rendered object's shape comes from the depth-1
// ancestor, its texture from the depth-2 ancestor, and its hue from the leaf,
// so visual similarity mirrors tree distance. Training backgrounds take a
// class-indicative hue (scrambled relative to the tree, so the shortcut does
// not mirror the prior) with probability confound_prob; validation backgrounds
// are always uniform random.
struct SynthConfig {
  int branching = 2;
  int depth = 3;
  int images_per_class = 200;
  int image_size = 32;
  double confound_prob = 0.9;
  double object_scale_min = 0.35;  // fraction of image side
  double object_scale_max = 0.6;
  double val_fraction = 0.2;
  uint64_t seed = 0;

  void validate() const;
};

struct SynthResult {
  Dataset train;
  Dataset val;
  KnowledgeTree tree;
  ClassMapping mapping;
  std::string tree_text;     // tree file content for the generated hierarchy
  std::string mapping_text;  // dataset_class -> leaf node mapping file content
};

SynthResult generate_tree_blobs(const SynthConfig& cfg);

// CIFAR binary records: 1 label byte then 3072 bytes (3 channel planes of
// 1024), pixel bytes mapped to [0, 1].
Dataset load_cifar_binary(const std::string& path, int num_classes = 10,
                          std::vector<std::string> class_names = {});

struct AugmentConfig {
  bool crop = false;
  double crop_scale_min = 0.6;  // area fraction
  double crop_scale_max = 1.0;
  bool flip = false;
  double flip_prob = 0.5;
  bool rotate = false;
  double rotate_max_deg = 15.0;
  bool blur = false;
  double blur_prob = 0.1;
  double blur_sigma = 0.8;

  bool any() const { return crop || flip || rotate || blur; }
};

// Returns an image of the same spatial size; identity when everything is off.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, Pcg32& rng);

// Dataset directory: manifest.json, images.bin (u8 payload in manifest
// order), labels.csv, boxes.csv.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace ckfr
