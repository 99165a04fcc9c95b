#pragma once

#include <map>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace ckfr {

// Rooted category tree with weighted parent edges. Immutable after parse.
//
// File format (UTF-8, line oriented): '#' starts a comment, blank lines are
// ignored, the first payload line names the root, and every other line is
//   parent<TAB>child[<TAB>weight]
// with weight defaulting to the configured edge weight. Parents must be
// declared before their children.
class KnowledgeTree {
 public:
  struct NodeRec {
    std::string name;
    int parent = -1;          // -1 for the root
    double edge_weight = 0.0; // weight of the edge to the parent
    int depth = 0;
    double weighted_depth = 0.0;
    bool is_leaf = true;
  };

  static KnowledgeTree parse(const std::string& text, double default_weight = 1.0);
  static KnowledgeTree parse_file(const std::string& path, double default_weight = 1.0);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int leaf_count() const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  int index_of(const std::string& name) const;
  const NodeRec& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  const std::string& root_name() const { return nodes_[0].name; }

  // Sum of edge weights along the unique path between two named nodes,
  // computed as weightedDepth(a) + weightedDepth(b) - 2 * weightedDepth(lca).
  double distance(const std::string& a, const std::string& b) const;
  double distance_by_index(int a, int b) const;

  // Index of the lowest common ancestor (parent-pointer walk with depth
  // equalization; trees here are small).
  int lca(int a, int b) const;

 private:
  std::vector<NodeRec> nodes_;
  std::map<std::string, int> index_;
};

// Symmetric zero-diagonal table of pairwise class distances in the tree.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::vector<std::string> classes, std::vector<double> values);

  static DistanceMatrix build(const KnowledgeTree& tree, const std::vector<std::string>& classes);

  int size() const { return static_cast<int>(classes_.size()); }
  const std::vector<std::string>& classes() const { return classes_; }
  double at(int i, int j) const { return values_[static_cast<size_t>(i * size() + j)]; }
  double at(const std::string& a, const std::string& b) const;
  int class_index(const std::string& name) const;

  // CSV with a header row/column of class names, 9 significant digits.
  std::string to_csv() const;
  static DistanceMatrix from_csv(const std::string& text);
  void save_csv(const std::string& path) const;
  static DistanceMatrix load_csv(const std::string& path);

 private:
  std::vector<std::string> classes_;
  std::vector<double> values_;
};

// Two-column mapping file: dataset_class<TAB>tree_node per line, '#' comments.
// Preserves file order of the dataset classes.
struct ClassMapping {
  std::vector<std::string> dataset_classes;
  std::map<std::string, std::string> to_tree_node;

  static ClassMapping parse(const std::string& text);
  static ClassMapping parse_file(const std::string& path);
  std::vector<std::string> tree_nodes() const;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace ckfr
