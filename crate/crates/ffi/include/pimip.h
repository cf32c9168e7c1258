#ifndef PIMIP_H
#define PIMIP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PimipStatus {
  PIMIP_STATUS_OK = 0,
  PIMIP_STATUS_NULL_POINTER = 1,
  PIMIP_STATUS_INVALID_UTF8 = 2,
  PIMIP_STATUS_INVALID_ARGUMENT = 3,
  PIMIP_STATUS_OUT_OF_RANGE = 4,
  PIMIP_STATUS_PARSE_ERROR = 5,
  PIMIP_STATUS_UNSUPPORTED = 6,
  PIMIP_STATUS_IO_ERROR = 7,
  PIMIP_STATUS_PANIC = 8,
} PimipStatus;

// Open slide. Only ever seen by C through a pointer.
typedef struct PimipSlide PimipSlide;

// Byte buffer owned by the library.
typedef struct PimipBytes {
  uint8_t *data;
  size_t len;
} PimipBytes;

typedef struct PimipRect {
  int64_t x;
  int64_t y;
  int64_t w;
  int64_t h;
} PimipRect;

typedef struct PimipStrokePoint {
  double x;
  double y;
  // Milliseconds since the stroke started.
  double t;
} PimipStrokePoint;

typedef struct PimipSegment {
  const struct PimipStrokePoint *points;
  size_t len;
  // Viewer zoom at capture; scales the distance threshold.
  double device_zoom;
} PimipSegment;

typedef struct PimipPoint {
  double x;
  double y;
} PimipPoint;

// Polylines stored back to back: polyline `i` has `lengths[i]` points.
typedef struct PimipPolylines {
  struct PimipPoint *points;
  size_t point_count;
  size_t *lengths;
  size_t count;
} PimipPolylines;

// Row-major mask over `bounds`, one byte (0 or 1) per pixel.
typedef struct PimipMask {
  struct PimipRect bounds;
  uint8_t *bits;
  size_t len;
} PimipMask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until
// the next failing call on the same thread.
const char *pimip_last_error_message(void);

void pimip_clear_last_error(void);

// Static, NUL-terminated library version.
const char *pimip_version(void);

// Open a pyramidal TIFF or a pyramid folder.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PimipStatus pimip_slide_open(const char *path, struct PimipSlide **out);

// # Safety
// `slide` must come from `pimip_slide_open` and not be used afterwards.
void pimip_slide_free(struct PimipSlide *slide);

// # Safety
// `slide` must be a live handle; `out` must be writable.
enum PimipStatus pimip_slide_level_count(const struct PimipSlide *slide, uint32_t *out);

// Width, height and channel count of `level`.
//
// # Safety
// `slide` must be a live handle; the out pointers must be writable.
enum PimipStatus pimip_slide_level_info(const struct PimipSlide *slide,
                                        uint32_t level,
                                        uint32_t *width,
                                        uint32_t *height,
                                        uint8_t *channels);

// Scan magnification, or 0 when the file does not record one.
//
// # Safety
// `slide` must be a live handle; `out` must be writable.
enum PimipStatus pimip_slide_magnification(const struct PimipSlide *slide, double *out);

// Interleaved pixels of a level-space rectangle. Areas outside the
// level are white.
//
// # Safety
// `slide` must be a live handle; `out` must be writable.
enum PimipStatus pimip_slide_read_region(const struct PimipSlide *slide,
                                         uint32_t level,
                                         int64_t x,
                                         int64_t y,
                                         uint32_t w,
                                         uint32_t h,
                                         struct PimipBytes *out);

// Encoded Deep Zoom tile; `format` is `png` or `jpg`.
//
// # Safety
// `slide` must be a live handle, `format` a NUL-terminated string and
// `out` writable.
enum PimipStatus pimip_render_tile(const struct PimipSlide *slide,
                                   uint32_t tile_size,
                                   uint32_t overlap,
                                   uint32_t dz_level,
                                   uint32_t col,
                                   uint32_t row,
                                   const char *format,
                                   struct PimipBytes *out);

// # Safety
// `bytes` must be null or filled by this library and not freed before.
void pimip_bytes_free(struct PimipBytes *bytes);

// Number of Deep Zoom levels for a base image.
uint32_t pimip_dz_level_count(uint32_t width, uint32_t height);

// # Safety
// The out pointers must be writable.
enum PimipStatus pimip_dz_level_dims(uint32_t width,
                                     uint32_t height,
                                     uint32_t dz_level,
                                     uint32_t *out_width,
                                     uint32_t *out_height);

// Level-space rectangle of a tile, overlaps included.
//
// # Safety
// `out` must be writable.
enum PimipStatus pimip_dz_tile_rect(uint32_t level_width,
                                    uint32_t level_height,
                                    uint32_t tile_size,
                                    uint32_t overlap,
                                    uint32_t col,
                                    uint32_t row,
                                    struct PimipRect *out);

// Otsu threshold of a 256-bin histogram.
//
// # Safety
// `hist` must point to 256 readable counts; `out` must be writable.
enum PimipStatus pimip_otsu_threshold(const uint64_t *hist, uint8_t *out);

// Join pen-lift gaps no longer than `tau_ms` and `delta_px`.
//
// # Safety
// `segments` must point to `count` segments whose point arrays are
// readable; `out` must be writable.
enum PimipStatus pimip_close_gaps(const struct PimipSegment *segments,
                                  size_t count,
                                  double tau_ms,
                                  double delta_px,
                                  struct PimipPolylines *out);

// # Safety
// `lines` must be null or filled by `pimip_close_gaps` and not freed
// before.
void pimip_polylines_free(struct PimipPolylines *lines);

// Fill a closed ring (first point repeated last) with the nonzero
// winding rule, clipped to `clip`. Boundary pixels are set.
//
// # Safety
// `ring` must point to `len` points; `out` must be writable.
enum PimipStatus pimip_rasterize_polygon(const struct PimipPoint *ring,
                                         size_t len,
                                         struct PimipRect clip,
                                         struct PimipMask *out);

// # Safety
// `mask` must be null or filled by `pimip_rasterize_polygon` and not
// freed before.
void pimip_mask_free(struct PimipMask *mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIMIP_H */
