#include "ckfr/ckfr.h"

#include <cstring>
#include <string>
#include <vector>

#include "backbone.hpp"
#include "metric.hpp"
#include "objective.hpp"
#include "runner.hpp"
#include "tree.hpp"

struct ckfr_tree {
  ckfr::KnowledgeTree impl;
};
struct ckfr_matrix {
  ckfr::DistanceMatrix impl;
};
struct ckfr_model {
  ckfr::Model impl;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
ckfr_status guard(Fn&& fn) {
  try {
    fn();
    return CKFR_OK;
  } catch (const ckfr::ConfigError& e) {
    g_last_error = e.what();
    return CKFR_BAD_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CKFR_ERROR;
  } catch (...) {
    g_last_error = "unknown error";
    return CKFR_ERROR;
  }
}

ckfr_status require(bool ok, const char* what) {
  if (ok) return CKFR_OK;
  g_last_error = std::string("invalid argument: ") + what;
  return CKFR_BAD_CONFIG;
}

}  // namespace

extern "C" {

const char* ckfr_version(void) { return "0.1.0"; }

const char* ckfr_last_error(void) { return g_last_error.c_str(); }

ckfr_status ckfr_tree_parse_file(const char* path, double default_edge_weight, ckfr_tree** out) {
  if (auto s = require(path && out, "path/out"); s != CKFR_OK) return s;
  return guard([&] { *out = new ckfr_tree{ckfr::KnowledgeTree::parse_file(path, default_edge_weight)}; });
}

ckfr_status ckfr_tree_parse_text(const char* text, double default_edge_weight, ckfr_tree** out) {
  if (auto s = require(text && out, "text/out"); s != CKFR_OK) return s;
  return guard([&] { *out = new ckfr_tree{ckfr::KnowledgeTree::parse(text, default_edge_weight)}; });
}

void ckfr_tree_free(ckfr_tree* tree) { delete tree; }

ckfr_status ckfr_tree_node_count(const ckfr_tree* tree, int* out) {
  if (auto s = require(tree && out, "tree/out"); s != CKFR_OK) return s;
  *out = tree->impl.node_count();
  return CKFR_OK;
}

ckfr_status ckfr_tree_leaf_count(const ckfr_tree* tree, int* out) {
  if (auto s = require(tree && out, "tree/out"); s != CKFR_OK) return s;
  *out = tree->impl.leaf_count();
  return CKFR_OK;
}

ckfr_status ckfr_tree_distance(const ckfr_tree* tree, const char* node_a, const char* node_b,
                               double* out) {
  if (auto s = require(tree && node_a && node_b && out, "tree/names/out"); s != CKFR_OK) return s;
  return guard([&] { *out = tree->impl.distance(node_a, node_b); });
}

ckfr_status ckfr_matrix_build(const ckfr_tree* tree, const char* const* classes,
                              size_t class_count, ckfr_matrix** out) {
  if (auto s = require(tree && classes && out && class_count > 0, "tree/classes/out"); s != CKFR_OK)
    return s;
  return guard([&] {
    std::vector<std::string> names(classes, classes + class_count);
    *out = new ckfr_matrix{ckfr::DistanceMatrix::build(tree->impl, names)};
  });
}

ckfr_status ckfr_matrix_size(const ckfr_matrix* matrix, size_t* out) {
  if (auto s = require(matrix && out, "matrix/out"); s != CKFR_OK) return s;
  *out = static_cast<size_t>(matrix->impl.size());
  return CKFR_OK;
}

ckfr_status ckfr_matrix_at(const ckfr_matrix* matrix, size_t row, size_t col, double* out) {
  if (auto s = require(matrix && out, "matrix/out"); s != CKFR_OK) return s;
  const size_t n = static_cast<size_t>(matrix->impl.size());
  if (auto s = require(row < n && col < n, "matrix index"); s != CKFR_OK) return s;
  *out = matrix->impl.at(static_cast<int>(row), static_cast<int>(col));
  return CKFR_OK;
}

ckfr_status ckfr_matrix_save_csv(const ckfr_matrix* matrix, const char* path) {
  if (auto s = require(matrix && path, "matrix/path"); s != CKFR_OK) return s;
  return guard([&] { matrix->impl.save_csv(path); });
}

void ckfr_matrix_free(ckfr_matrix* matrix) { delete matrix; }

ckfr_status ckfr_standardize(const double* z, size_t m, double* out) {
  if (auto s = require(z && out && m >= 2, "z/out/m"); s != CKFR_OK) return s;
  return guard([&] {
    const auto hat = ckfr::standardize(ckfr::LatentVector(z, z + m));
    std::memcpy(out, hat.data(), sizeof(double) * m);
  });
}

ckfr_status ckfr_latent_distance(const double* za, const double* zb, size_t m, double ell,
                                 double* out) {
  if (auto s = require(za && zb && out && m >= 2, "za/zb/out/m"); s != CKFR_OK) return s;
  return guard([&] {
    *out = ckfr::latent_distance(ckfr::LatentVector(za, za + m), ckfr::LatentVector(zb, zb + m), ell);
  });
}

ckfr_status ckfr_ratio_triplet_loss(double dz_ab, double dz_ac, double prior_ab, double prior_ac,
                                    double* out) {
  if (auto s = require(out != nullptr, "out"); s != CKFR_OK) return s;
  return guard([&] { *out = ckfr::ratio_triplet_loss(dz_ab, dz_ac, prior_ab, prior_ac); });
}

ckfr_status ckfr_cross_entropy(const double* logits, size_t count, int label, double* out) {
  if (auto s = require(logits && out && count > 0, "logits/out"); s != CKFR_OK) return s;
  return guard([&] {
    *out = ckfr::cross_entropy(std::vector<double>(logits, logits + count), label);
  });
}

ckfr_status ckfr_model_load(const char* checkpoint_path, ckfr_model** out) {
  if (auto s = require(checkpoint_path && out, "path/out"); s != CKFR_OK) return s;
  return guard([&] { *out = new ckfr_model{ckfr::load_checkpoint(checkpoint_path)}; });
}

ckfr_status ckfr_model_save(const ckfr_model* model, const char* checkpoint_path) {
  if (auto s = require(model && checkpoint_path, "model/path"); s != CKFR_OK) return s;
  return guard([&] { ckfr::save_checkpoint(model->impl, checkpoint_path); });
}

void ckfr_model_free(ckfr_model* model) { delete model; }

ckfr_status ckfr_model_latent_dim(const ckfr_model* model, int* out) {
  if (auto s = require(model && out, "model/out"); s != CKFR_OK) return s;
  *out = model->impl.spec.latent_dim;
  return CKFR_OK;
}

ckfr_status ckfr_model_num_classes(const ckfr_model* model, int* out) {
  if (auto s = require(model && out, "model/out"); s != CKFR_OK) return s;
  *out = model->impl.spec.num_classes;
  return CKFR_OK;
}

ckfr_status ckfr_cmd_gen(const char* config_json, const char* out_dir) {
  if (auto s = require(config_json && out_dir, "config/out_dir"); s != CKFR_OK) return s;
  return guard([&] { ckfr::run_gen(ckfr::RunConfig::from_json_text(config_json), out_dir); });
}

ckfr_status ckfr_cmd_distances(const char* tree_path, const char* classes_path,
                               double default_edge_weight, const char* out_csv) {
  if (auto s = require(tree_path && classes_path && out_csv, "paths"); s != CKFR_OK) return s;
  return guard([&] { ckfr::run_distances(tree_path, classes_path, default_edge_weight, out_csv); });
}

ckfr_status ckfr_cmd_train(const char* config_json, const char* out_dir) {
  if (auto s = require(config_json && out_dir, "config/out_dir"); s != CKFR_OK) return s;
  return guard([&] { ckfr::run_train(ckfr::RunConfig::from_json_text(config_json), out_dir); });
}

ckfr_status ckfr_cmd_eval(const char* config_json, const char* checkpoint_path,
                          const char* out_dir) {
  if (auto s = require(config_json && checkpoint_path && out_dir, "config/checkpoint/out_dir");
      s != CKFR_OK)
    return s;
  return guard([&] {
    ckfr::run_eval(ckfr::RunConfig::from_json_text(config_json), checkpoint_path, out_dir);
  });
}

ckfr_status ckfr_cmd_cam(const char* config_json, const char* checkpoint_path, const char* out_dir,
                         int image_count, const char* method) {
  if (auto s = require(config_json && checkpoint_path && out_dir && method,
                       "config/checkpoint/out_dir/method");
      s != CKFR_OK)
    return s;
  return guard([&] {
    ckfr::run_cam(ckfr::RunConfig::from_json_text(config_json), checkpoint_path, out_dir,
                  image_count, method);
  });
}

ckfr_status ckfr_cmd_sweep(const char* config_json, const char* param, const double* values,
                           size_t value_count, const char* out_dir) {
  if (auto s = require(config_json && param && values && out_dir && value_count > 0,
                       "config/param/values/out_dir");
      s != CKFR_OK)
    return s;
  return guard([&] {
    ckfr::run_sweep(ckfr::RunConfig::from_json_text(config_json), param,
                    std::vector<double>(values, values + value_count), out_dir);
  });
}

ckfr_status ckfr_cmd_latent3d(const char* config_json, const char* checkpoint_path,
                              const char* out_dir) {
  if (auto s = require(config_json && checkpoint_path && out_dir, "config/checkpoint/out_dir");
      s != CKFR_OK)
    return s;
  return guard([&] {
    ckfr::run_latent3d(ckfr::RunConfig::from_json_text(config_json), checkpoint_path, out_dir);
  });
}

ckfr_status ckfr_cmd_report(const char* sweep_csv, const char* x_column, const char* y_column,
                            const char* out_svg) {
  if (auto s = require(sweep_csv && x_column && y_column && out_svg, "csv/columns/out");
      s != CKFR_OK)
    return s;
  return guard([&] { ckfr::run_report(sweep_csv, x_column, y_column, out_svg); });
}

}  // extern "C"
