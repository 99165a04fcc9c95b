/* ckfr shared library C API.
 *
 * All functions return a ckfr_status; on failure ckfr_last_error() holds a
 * thread-local description of what went wrong. Objects returned through
 * out-parameters are owned by the caller and released with the matching
 * *_free function.
 */
#ifndef CKFR_H
#define CKFR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CKFR_API __declspec(dllexport)
#else
#define CKFR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ckfr_status {
  CKFR_OK = 0,
  CKFR_ERROR = 1,      /* runtime failure */
  CKFR_BAD_CONFIG = 2, /* malformed configuration, schema violation or usage error */
} ckfr_status;

CKFR_API const char* ckfr_version(void);

/* Message for the most recent failing call on this thread; never NULL. */
CKFR_API const char* ckfr_last_error(void);

/* ------------------------------------------------------------------ trees */

typedef struct ckfr_tree ckfr_tree;
typedef struct ckfr_matrix ckfr_matrix;

CKFR_API ckfr_status ckfr_tree_parse_file(const char* path, double default_edge_weight,
                                          ckfr_tree** out);
CKFR_API ckfr_status ckfr_tree_parse_text(const char* text, double default_edge_weight,
                                          ckfr_tree** out);
CKFR_API void ckfr_tree_free(ckfr_tree* tree);
CKFR_API ckfr_status ckfr_tree_node_count(const ckfr_tree* tree, int* out);
CKFR_API ckfr_status ckfr_tree_leaf_count(const ckfr_tree* tree, int* out);

/* Sum of edge weights on the unique path between two named nodes. */
CKFR_API ckfr_status ckfr_tree_distance(const ckfr_tree* tree, const char* node_a,
                                        const char* node_b, double* out);

/* Symmetric zero-diagonal matrix of pairwise distances between named nodes. */
CKFR_API ckfr_status ckfr_matrix_build(const ckfr_tree* tree, const char* const* classes,
                                       size_t class_count, ckfr_matrix** out);
CKFR_API ckfr_status ckfr_matrix_size(const ckfr_matrix* matrix, size_t* out);
CKFR_API ckfr_status ckfr_matrix_at(const ckfr_matrix* matrix, size_t row, size_t col,
                                    double* out);
CKFR_API ckfr_status ckfr_matrix_save_csv(const ckfr_matrix* matrix, const char* path);
CKFR_API void ckfr_matrix_free(ckfr_matrix* matrix);

/* ---------------------------------------------------------- latent metric */

/* Writes the standardized vector (mean 0, population std 1) into out[m]. */
CKFR_API ckfr_status ckfr_standardize(const double* z, size_t m, double* out);

/* Sum of ell-th powers of absolute coordinate differences after
 * standardizing both vectors. */
CKFR_API ckfr_status ckfr_latent_distance(const double* za, const double* zb, size_t m,
                                          double ell, double* out);

/* |dz_ab * prior_ac - dz_ac * prior_ab| */
CKFR_API ckfr_status ckfr_ratio_triplet_loss(double dz_ab, double dz_ac, double prior_ab,
                                             double prior_ac, double* out);

CKFR_API ckfr_status ckfr_cross_entropy(const double* logits, size_t count, int label,
                                        double* out);

/* ----------------------------------------------------------------- models */

typedef struct ckfr_model ckfr_model;

CKFR_API ckfr_status ckfr_model_load(const char* checkpoint_path, ckfr_model** out);
CKFR_API ckfr_status ckfr_model_save(const ckfr_model* model, const char* checkpoint_path);
CKFR_API void ckfr_model_free(ckfr_model* model);
CKFR_API ckfr_status ckfr_model_latent_dim(const ckfr_model* model, int* out);
CKFR_API ckfr_status ckfr_model_num_classes(const ckfr_model* model, int* out);

/* --------------------------------------------------------------- commands */

/* Command-level entry points mirroring the CLI subcommands. config_json is
 * the full run-configuration document (see README for the schema); artifacts
 * are written under out_dir along with resolved-config.json. */
CKFR_API ckfr_status ckfr_cmd_gen(const char* config_json, const char* out_dir);
CKFR_API ckfr_status ckfr_cmd_distances(const char* tree_path, const char* classes_path,
                                        double default_edge_weight, const char* out_csv);
CKFR_API ckfr_status ckfr_cmd_train(const char* config_json, const char* out_dir);
CKFR_API ckfr_status ckfr_cmd_eval(const char* config_json, const char* checkpoint_path,
                                   const char* out_dir);
CKFR_API ckfr_status ckfr_cmd_cam(const char* config_json, const char* checkpoint_path,
                                  const char* out_dir, int image_count, const char* method);
CKFR_API ckfr_status ckfr_cmd_sweep(const char* config_json, const char* param,
                                    const double* values, size_t value_count,
                                    const char* out_dir);
CKFR_API ckfr_status ckfr_cmd_latent3d(const char* config_json, const char* checkpoint_path,
                                       const char* out_dir);
CKFR_API ckfr_status ckfr_cmd_report(const char* sweep_csv, const char* x_column,
                                     const char* y_column, const char* out_svg);

#ifdef __cplusplus
}
#endif

#endif /* CKFR_H */
