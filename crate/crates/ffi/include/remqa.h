#ifndef REMQA_H
#define REMQA_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum RemqaStatus {
  REMQA_STATUS_OK = 0,
  REMQA_STATUS_NULL_POINTER = 1,
  REMQA_STATUS_INVALID_UTF8 = 2,
  REMQA_STATUS_INVALID_ARGUMENT = 3,
  REMQA_STATUS_PARSE = 4,
  REMQA_STATUS_IO = 5,
  REMQA_STATUS_NOT_FOUND = 6,
  REMQA_STATUS_PANIC = 7,
} RemqaStatus;

/**
 * A loaded dataset together with its scene configurations.
 */
typedef struct RemqaDataset RemqaDataset;

/**
 * A loaded scene configuration.
 */
typedef struct RemqaWorld RemqaWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null. The pointer
 * stays valid until the next call into this library from the same thread.
 */
const char *remqa_last_error_message(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void remqa_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *remqa_version(void);

/**
 * Axis-aligned 3D IoU of two boxes given as `[min_x, min_y, min_z, max_x, max_y, max_z]`.
 *
 * # Safety
 * `a` and `b` must point to six doubles; `out` must be writable.
 */
enum RemqaStatus remqa_iou3d(const double *a, const double *b, double *out);

/**
 * Mean success weighted by path length over `n` episodes.
 *
 * # Safety
 * The three arrays must hold `n` elements each; `out` must be writable.
 */
enum RemqaStatus remqa_spl(const bool *success,
                           const uint32_t *path_taken,
                           const uint32_t *shortest,
                           size_t n,
                           double *out);

/**
 * Parse a question and return its syntax tree as JSON.
 *
 * # Safety
 * `text` must be a valid C string; `out_json` must be writable.
 */
enum RemqaStatus remqa_parse_question(const char *text, char **out_json);

/**
 * Render a JSON syntax tree as a question.
 *
 * # Safety
 * `ast_json` must be a valid C string; `out_text` must be writable.
 */
enum RemqaStatus remqa_realize_question(const char *ast_json, char **out_text);

/**
 * Load a scene configuration file.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum RemqaStatus remqa_world_load(const char *path, struct RemqaWorld **out);

/**
 * # Safety
 * `world` must be null or a handle from [`remqa_world_load`] not yet freed.
 */
void remqa_world_free(struct RemqaWorld *world);

/**
 * # Safety
 * `world` must be a live handle; `out` must be writable.
 */
enum RemqaStatus remqa_world_object_count(const struct RemqaWorld *world, size_t *out);

/**
 * Ground-truth scene graph of a world as JSON.
 *
 * # Safety
 * `world` must be a live handle; `out_json` must be writable.
 */
enum RemqaStatus remqa_world_scene_graph(const struct RemqaWorld *world, char **out_json);

/**
 * Load `dataset.jsonl` and the scene configurations next to it.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum RemqaStatus remqa_dataset_load(const char *path, struct RemqaDataset **out);

/**
 * # Safety
 * `dataset` must be null or a handle from [`remqa_dataset_load`] not yet freed.
 */
void remqa_dataset_free(struct RemqaDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
enum RemqaStatus remqa_dataset_episode_count(const struct RemqaDataset *dataset, size_t *out);

/**
 * Run one episode and return its result as JSON. A null `config_json`
 * selects the default agent configuration; missing fields take defaults.
 *
 * # Safety
 * `dataset` must be a live handle; `episode_id` a valid C string;
 * `config_json` null or a valid C string; `out_json` writable.
 */
enum RemqaStatus remqa_run_episode(const struct RemqaDataset *dataset,
                                   const char *episode_id,
                                   const char *config_json,
                                   char **out_json);

/**
 * Run every episode and return the aggregate metrics as JSON.
 *
 * # Safety
 * `dataset` must be a live handle; `config_json` null or a valid C string;
 * `out_json` writable.
 */
enum RemqaStatus remqa_evaluate(const struct RemqaDataset *dataset,
                                const char *config_json,
                                char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REMQA_H */
