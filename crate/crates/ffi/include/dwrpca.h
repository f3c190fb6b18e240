#ifndef DWRPCA_H
#define DWRPCA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DwMaskKind {
  DW_MASK_KIND_DEFECT = 0,
  DW_MASK_KIND_BROKEN = 1,
  DW_MASK_KIND_BLOCK = 2,
  DW_MASK_KIND_BLOCK_PRIOR = 3,
  DW_MASK_KIND_BROKEN_PRIOR = 4,
} DwMaskKind;

typedef enum DwMeshType {
  DW_MESH_TYPE_SQUARE = 0,
  DW_MESH_TYPE_CIRCULAR = 1,
} DwMeshType;

typedef enum DwStatus {
  DW_STATUS_OK = 0,
  DW_STATUS_NULL_POINTER = 1,
  DW_STATUS_INVALID_ARGUMENT = 2,
  DW_STATUS_IO = 3,
  DW_STATUS_FORMAT = 4,
  DW_STATUS_DIMENSION_MISMATCH = 5,
  DW_STATUS_NUMERIC = 6,
  DW_STATUS_CONFIG = 7,
  DW_STATUS_PANIC = 99,
} DwStatus;

typedef struct DwConfig DwConfig;

typedef struct DwDetection DwDetection;

typedef struct DwImage DwImage;

typedef struct DwMask DwMask;

/**
 * Confusion counts and rates; a rate with a zero denominator is NaN.
 */
typedef struct DwMetrics {
  uint64_t tp;
  uint64_t fp;
  uint64_t tn;
  uint64_t fn_;
  double tpr;
  double fpr;
  double ppv;
  double npv;
  double f;
} DwMetrics;

/**
 * Focal lengths in mm, pixel size and FOV in µm.
 */
typedef struct DwOpticsSpec {
  double f_objective;
  double f_tube;
  double f_internal;
  double f_relay;
  double pixel_size;
  double screen_to_sensor_ratio;
  double fov_diameter;
} DwOpticsSpec;

typedef struct DwOpticsReport {
  double optical_magnification;
  double digital_magnification;
  double pixel_pitch_um;
  double fov_diameter_um;
  double fov_pixels;
} DwOpticsReport;

typedef struct DwScanSummary {
  size_t nodes;
  size_t cols;
  size_t rows;
  double overlap_um;
  double total_dwell_s;
} DwScanSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *dw_last_error(void);

/**
 * Library version as a static string.
 */
const char *dw_version(void);

/**
 * Frees a string returned by the library.
 *
 * # Safety
 * `s` must come from this library, or be null.
 */
void dw_string_free(char *s);

/**
 * Copies `height * width` row-major intensities in [0, 1].
 *
 * # Safety
 * `data` must point to `height * width` doubles; `out` must be writable.
 */
enum DwStatus dw_image_new(size_t height, size_t width, const double *data, struct DwImage **out);

/**
 * Loads an 8-bit grayscale PNG or PGM.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum DwStatus dw_image_load(const char *path, struct DwImage **out);

/**
 * # Safety
 * `img` must be a live handle; the out pointers must be writable.
 */
enum DwStatus dw_image_dims(const struct DwImage *img, size_t *height, size_t *width);

/**
 * Copies the pixels into `buf`, which must hold `len >= height * width` doubles.
 *
 * # Safety
 * `img` must be a live handle and `buf` valid for `len` doubles.
 */
enum DwStatus dw_image_read(const struct DwImage *img, double *buf, size_t len);

/**
 * # Safety
 * `img` must come from this library, or be null.
 */
void dw_image_free(struct DwImage *img);

/**
 * Builds a mask from bytes; nonzero is foreground.
 *
 * # Safety
 * `data` must point to `height * width` bytes; `out` must be writable.
 */
enum DwStatus dw_mask_new(size_t height, size_t width, const uint8_t *data, struct DwMask **out);

/**
 * # Safety
 * `mask` must be a live handle; the out pointers must be writable.
 */
enum DwStatus dw_mask_dims(const struct DwMask *mask, size_t *height, size_t *width);

/**
 * Number of foreground pixels, or 0 for a null handle.
 *
 * # Safety
 * `mask` must be a live handle or null.
 */
size_t dw_mask_count(const struct DwMask *mask);

/**
 * Copies the mask as 0/1 bytes into `buf` (`len >= height * width`).
 *
 * # Safety
 * `mask` must be a live handle and `buf` valid for `len` bytes.
 */
enum DwStatus dw_mask_read(const struct DwMask *mask, uint8_t *buf, size_t len);

/**
 * # Safety
 * `mask` must come from this library, or be null.
 */
void dw_mask_free(struct DwMask *mask);

/**
 * Built-in defaults for the mesh type.
 *
 * # Safety
 * `out` must be writable.
 */
enum DwStatus dw_config_new(enum DwMeshType mesh_type, struct DwConfig **out);

/**
 * Parses a flat TOML document; unknown keys are rejected.
 *
 * # Safety
 * `text` must be a nul-terminated string; `out` must be writable.
 */
enum DwStatus dw_config_from_toml(const char *text, struct DwConfig **out);

/**
 * Sets one key; `value` uses TOML value syntax (`0.2`, `"graded"`, `true`).
 * The handle is left untouched on failure.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` nul-terminated strings.
 */
enum DwStatus dw_config_set(struct DwConfig *cfg, const char *key, const char *value);

/**
 * Effective configuration as JSON; release with [`dw_string_free`].
 * Returns null for a null handle.
 *
 * # Safety
 * `cfg` must be a live handle or null.
 */
char *dw_config_json(const struct DwConfig *cfg);

/**
 * # Safety
 * `cfg` must come from this library, or be null.
 */
void dw_config_free(struct DwConfig *cfg);

/**
 * Full pipeline: priors, weights, decomposition and segmentation.
 *
 * # Safety
 * `img` and `cfg` must be live handles; `out` must be writable.
 */
enum DwStatus dw_detect(const struct DwImage *img,
                        const struct DwConfig *cfg,
                        struct DwDetection **out);

/**
 * Returns a new mask handle holding a copy of the requested mask.
 *
 * # Safety
 * `det` must be a live handle; `out` must be writable.
 */
enum DwStatus dw_detection_mask(const struct DwDetection *det,
                                enum DwMaskKind kind,
                                struct DwMask **out);

/**
 * Thresholds used for segmentation and the solver iteration count.
 *
 * # Safety
 * `det` must be a live handle; the out pointers must be writable.
 */
enum DwStatus dw_detection_stats(const struct DwDetection *det,
                                 double *t1,
                                 double *t2,
                                 size_t *iterations);

/**
 * Returns a new image handle holding the sparse component.
 *
 * # Safety
 * `det` must be a live handle; `out` must be writable.
 */
enum DwStatus dw_detection_sparse(const struct DwDetection *det, struct DwImage **out);

/**
 * # Safety
 * `det` must come from this library, or be null.
 */
void dw_detection_free(struct DwDetection *det);

/**
 * Decomposition only (priors and weights from `cfg`). Each non-null out
 * pointer receives a new image handle; pass null to skip a component.
 *
 * # Safety
 * `img` and `cfg` must be live handles; out pointers writable or null.
 */
enum DwStatus dw_solve(const struct DwImage *img,
                       const struct DwConfig *cfg,
                       struct DwImage **low_rank,
                       struct DwImage **sparse,
                       struct DwImage **noise,
                       size_t *iterations);

/**
 * Pixel-level metrics of `pred` against `gt` with F-measure weight `gamma`.
 *
 * # Safety
 * `pred` and `gt` must be live handles; `out` must be writable.
 */
enum DwStatus dw_metrics(const struct DwMask *pred,
                         const struct DwMask *gt,
                         double gamma,
                         struct DwMetrics *out);

/**
 * Fills `out` with the default optical parameters.
 *
 * # Safety
 * `out` must be writable.
 */
enum DwStatus dw_optics_default(struct DwOpticsSpec *out);

/**
 * # Safety
 * `spec` must be readable and `out` writable.
 */
enum DwStatus dw_optics(const struct DwOpticsSpec *spec, struct DwOpticsReport *out);

/**
 * Plans a serpentine scan. If `nodes_xy` is non-null it receives
 * `2 * nodes` doubles (x, y pairs in µm, scan order); `nodes_len` is its
 * capacity in doubles.
 *
 * # Safety
 * `out` must be writable; `nodes_xy` valid for `nodes_len` doubles or null.
 */
enum DwStatus dw_scan_plan(double width_um,
                           double height_um,
                           double step_um,
                           double fov_diameter_um,
                           double dwell_s,
                           struct DwScanSummary *out,
                           double *nodes_xy,
                           size_t nodes_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DWRPCA_H */
