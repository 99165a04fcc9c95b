#include "tree.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ckfr {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write file '" + path + "'");
  out << content;
  if (!out) fail("write failed for '" + path + "'");
}

namespace {

std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == '\t') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

}  // namespace

KnowledgeTree KnowledgeTree::parse(const std::string& text, double default_weight) {
  if (default_weight <= 0.0) fail("tree: default edge weight must be positive");
  KnowledgeTree tree;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string payload = trim(strip_comment(line));
    if (payload.empty()) continue;
    const auto fields = split_tabs(payload);
    const std::string where = " (line " + std::to_string(lineno) + ")";
    if (tree.nodes_.empty()) {
      if (fields.size() != 1) fail("tree: root line must hold a single name" + where);
      NodeRec root;
      root.name = fields[0];
      tree.index_[root.name] = 0;
      tree.nodes_.push_back(std::move(root));
      continue;
    }
    if (fields.size() < 2 || fields.size() > 3) {
      fail("tree: expected parent<TAB>child[<TAB>weight]" + where);
    }
    const auto pit = tree.index_.find(fields[0]);
    if (pit == tree.index_.end()) fail("tree: unknown parent '" + fields[0] + "'" + where);
    if (tree.index_.count(fields[1])) fail("tree: duplicate node name '" + fields[1] + "'" + where);
    double weight = default_weight;
    if (fields.size() == 3) {
      try {
        size_t used = 0;
        weight = std::stod(fields[2], &used);
        if (used != fields[2].size()) fail("");
      } catch (...) {
        fail("tree: invalid weight '" + fields[2] + "'" + where);
      }
      if (weight <= 0.0) fail("tree: edge weight must be positive" + where);
    }
    NodeRec rec;
    rec.name = fields[1];
    rec.parent = pit->second;
    rec.edge_weight = weight;
    rec.depth = tree.nodes_[static_cast<size_t>(rec.parent)].depth + 1;
    rec.weighted_depth = tree.nodes_[static_cast<size_t>(rec.parent)].weighted_depth + weight;
    tree.nodes_[static_cast<size_t>(rec.parent)].is_leaf = false;
    tree.index_[rec.name] = static_cast<int>(tree.nodes_.size());
    tree.nodes_.push_back(std::move(rec));
  }
  if (tree.nodes_.empty()) fail("tree: missing root (file has no payload lines)");
  return tree;
}

KnowledgeTree KnowledgeTree::parse_file(const std::string& path, double default_weight) {
  return parse(read_text_file(path), default_weight);
}

int KnowledgeTree::leaf_count() const {
  int n = 0;
  for (const auto& rec : nodes_) n += rec.is_leaf ? 1 : 0;
  return n;
}

int KnowledgeTree::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail("tree: unknown node '" + name + "'");
  return it->second;
}

int KnowledgeTree::lca(int a, int b) const {
  while (nodes_[static_cast<size_t>(a)].depth > nodes_[static_cast<size_t>(b)].depth)
    a = nodes_[static_cast<size_t>(a)].parent;
  while (nodes_[static_cast<size_t>(b)].depth > nodes_[static_cast<size_t>(a)].depth)
    b = nodes_[static_cast<size_t>(b)].parent;
  while (a != b) {
    a = nodes_[static_cast<size_t>(a)].parent;
    b = nodes_[static_cast<size_t>(b)].parent;
  }
  return a;
}

double KnowledgeTree::distance_by_index(int a, int b) const {
  const int anc = lca(a, b);
  return nodes_[static_cast<size_t>(a)].weighted_depth + nodes_[static_cast<size_t>(b)].weighted_depth -
         2.0 * nodes_[static_cast<size_t>(anc)].weighted_depth;
}

double KnowledgeTree::distance(const std::string& a, const std::string& b) const {
  return distance_by_index(index_of(a), index_of(b));
}

DistanceMatrix::DistanceMatrix(std::vector<std::string> classes, std::vector<double> values)
    : classes_(std::move(classes)), values_(std::move(values)) {
  const size_t n = classes_.size();
  if (values_.size() != n * n) fail("distance matrix: value count does not match class count");
  for (size_t i = 0; i < n; ++i) {
    if (values_[i * n + i] != 0.0) fail("distance matrix: nonzero diagonal");
    for (size_t j = 0; j < n; ++j) {
      if (values_[i * n + j] < 0.0) fail("distance matrix: negative entry");
      if (values_[i * n + j] != values_[j * n + i]) fail("distance matrix: not symmetric");
    }
  }
}

DistanceMatrix DistanceMatrix::build(const KnowledgeTree& tree, const std::vector<std::string>& classes) {
  if (classes.empty()) fail("distance matrix: empty class list");
  std::vector<int> idx;
  idx.reserve(classes.size());
  for (const auto& c : classes) idx.push_back(tree.index_of(c));
  const int n = static_cast<int>(classes.size());
  std::vector<double> values(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = tree.distance_by_index(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      values[static_cast<size_t>(i * n + j)] = d;
      values[static_cast<size_t>(j * n + i)] = d;
    }
  }
  return DistanceMatrix(classes, std::move(values));
}

double DistanceMatrix::at(const std::string& a, const std::string& b) const {
  return at(class_index(a), class_index(b));
}

int DistanceMatrix::class_index(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (classes_[static_cast<size_t>(i)] == name) return i;
  }
  fail("distance matrix: unknown class '" + name + "'");
}

std::string DistanceMatrix::to_csv() const {
  std::ostringstream os;
  for (const auto& c : classes_) os << "," << c;
  os << "\n";
  char buf[64];
  for (int i = 0; i < size(); ++i) {
    os << classes_[static_cast<size_t>(i)];
    for (int j = 0; j < size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", at(i, j));
      os << "," << buf;
    }
    os << "\n";
  }
  return os.str();
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

DistanceMatrix DistanceMatrix::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail("distance matrix csv: empty input");
  auto header = split_csv_line(line);
  if (header.size() < 2 || !header[0].empty()) fail("distance matrix csv: malformed header");
  std::vector<std::string> classes(header.begin() + 1, header.end());
  const size_t n = classes.size();
  std::vector<double> values;
  values.reserve(n * n);
  size_t rows = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != n + 1) fail("distance matrix csv: wrong column count");
    if (rows >= n || fields[0] != classes[rows]) fail("distance matrix csv: row label mismatch");
    for (size_t j = 1; j < fields.size(); ++j) values.push_back(std::stod(fields[j]));
    ++rows;
  }
  if (rows != n) fail("distance matrix csv: wrong row count");
  return DistanceMatrix(std::move(classes), std::move(values));
}

void DistanceMatrix::save_csv(const std::string& path) const { write_text_file(path, to_csv()); }

DistanceMatrix DistanceMatrix::load_csv(const std::string& path) {
  return from_csv(read_text_file(path));
}

ClassMapping ClassMapping::parse(const std::string& text) {
  ClassMapping mapping;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string payload = trim(strip_comment(line));
    if (payload.empty()) continue;
    const auto fields = split_tabs(payload);
    if (fields.size() != 2) {
      fail("mapping: expected dataset_class<TAB>tree_node (line " + std::to_string(lineno) + ")");
    }
    if (mapping.to_tree_node.count(fields[0])) {
      fail("mapping: duplicate dataset class '" + fields[0] + "' (line " + std::to_string(lineno) + ")");
    }
    mapping.dataset_classes.push_back(fields[0]);
    mapping.to_tree_node[fields[0]] = fields[1];
  }
  if (mapping.dataset_classes.empty()) fail("mapping: no entries");
  return mapping;
}

ClassMapping ClassMapping::parse_file(const std::string& path) {
  return parse(read_text_file(path));
}

std::vector<std::string> ClassMapping::tree_nodes() const {
  std::vector<std::string> out;
  out.reserve(dataset_classes.size());
  for (const auto& c : dataset_classes) out.push_back(to_tree_node.at(c));
  return out;
}

}  // namespace ckfr
