/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef ANNOCAR_H
#define ANNOCAR_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define ANNOCAR_ERROR_TYPE_COUNT 10

// Index of each error type in [`AnnocarCounts::counts`] and
// [`AnnocarTimeTable::times`].
typedef enum AnnocarErrorType {
  ANNOCAR_ERROR_TYPE_FP = 0,
  ANNOCAR_ERROR_TYPE_FN = 1,
  ANNOCAR_ERROR_TYPE_T = 2,
  ANNOCAR_ERROR_TYPE_R = 3,
  ANNOCAR_ERROR_TYPE_S = 4,
  ANNOCAR_ERROR_TYPE_CLS = 5,
  ANNOCAR_ERROR_TYPE_TR = 6,
  ANNOCAR_ERROR_TYPE_RS = 7,
  ANNOCAR_ERROR_TYPE_TS = 8,
  ANNOCAR_ERROR_TYPE_TRS = 9,
} AnnocarErrorType;

// Result codes. The first four mirror the command-line exit codes.
typedef enum AnnocarStatus {
  ANNOCAR_STATUS_OK = 0,
  ANNOCAR_STATUS_IO = 1,
  ANNOCAR_STATUS_DATA = 2,
  ANNOCAR_STATUS_CALIBRATION = 3,
  ANNOCAR_STATUS_INVALID_ARGUMENT = 4,
  ANNOCAR_STATUS_PANIC = 5,
} AnnocarStatus;

// Opaque scene handle.
typedef struct AnnocarScene AnnocarScene;

typedef struct AnnocarThresholds {
  double translation_m;
  double rotation_rad;
  double scale_deficit;
} AnnocarThresholds;

// Per-type correction times and the creation time, in seconds.
typedef struct AnnocarTimeTable {
  double times[ANNOCAR_ERROR_TYPE_COUNT];
  double t_create;
} AnnocarTimeTable;

typedef struct AnnocarCounts {
  uint64_t n_gt;
  uint64_t n_matched;
  uint64_t counts[ANNOCAR_ERROR_TYPE_COUNT];
} AnnocarCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a
// success. Valid until the next call into this library on this thread.
const char *annocar_last_error(void);

// Library version as a static NUL-terminated string.
const char *annocar_version(void);

void annocar_string_free(char *s);

// Load and validate a scene file.
enum AnnocarStatus annocar_scene_load(const char *path, struct AnnocarScene **out);

// Parse and validate a scene from JSON text.
enum AnnocarStatus annocar_scene_from_json(const char *json, struct AnnocarScene **out);

// Canonical JSON text of a scene; free with [`annocar_string_free`].
enum AnnocarStatus annocar_scene_to_json(const struct AnnocarScene *scene, char **out);

enum AnnocarStatus annocar_scene_save(const struct AnnocarScene *scene, const char *path);

void annocar_scene_free(struct AnnocarScene *scene);

// Number of frames, or 0 for a null handle.
size_t annocar_scene_frame_count(const struct AnnocarScene *scene);

// Number of boxes over all frames, or 0 for a null handle.
size_t annocar_scene_box_count(const struct AnnocarScene *scene);

struct AnnocarThresholds annocar_default_thresholds(void);

struct AnnocarTimeTable annocar_default_time_table(void);

// Correction time `C` in seconds.
enum AnnocarStatus annocar_correction_time(const struct AnnocarCounts *counts,
                                           const struct AnnocarTimeTable *table,
                                           double *out_seconds);

// Baseline time `B` in seconds.
enum AnnocarStatus annocar_baseline_time(uint64_t n_gt,
                                         const struct AnnocarTimeTable *table,
                                         double *out_seconds);

// `1 - C/B`. `out_defined` is set to 0 (and `out_car` to NaN) when `B = 0`
// and `C > 0`.
enum AnnocarStatus annocar_car(double correction_s,
                               double baseline_s,
                               double *out_car,
                               bool *out_defined);

// Error counts of a model scene against its corrected version, summed over
// frames.
enum AnnocarStatus annocar_diff(const struct AnnocarScene *model,
                                const struct AnnocarScene *corrected,
                                const struct AnnocarThresholds *thresholds,
                                double gate_m,
                                struct AnnocarCounts *out);

// Run the tracker. `config_toml` may be null for defaults; only its
// `tracker.*` keys matter.
enum AnnocarStatus annocar_track(const struct AnnocarScene *scene,
                                 const char *config_toml,
                                 struct AnnocarScene **out);

// Evaluate JSON arrays of ground-truth and prediction scenes. Writes a
// JSON object `{"car": [...], "ap": [...], "warnings": [...]}`.
enum AnnocarStatus annocar_evaluate_json(const char *gt_scenes_json,
                                         const char *pred_scenes_json,
                                         const char *config_toml,
                                         char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANNOCAR_H */
