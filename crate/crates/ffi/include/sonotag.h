#ifndef SONOTAG_H
#define SONOTAG_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SntStatus {
  SNT_STATUS_OK = 0,
  SNT_STATUS_NULL_POINTER = 1,
  SNT_STATUS_INVALID_ARGUMENT = 2,
  SNT_STATUS_IO = 3,
  SNT_STATUS_FORMAT = 4,
  SNT_STATUS_SHAPE = 5,
  SNT_STATUS_TOPOLOGY = 6,
  SNT_STATUS_NUMERIC = 7,
  SNT_STATUS_PANIC = 8,
} SntStatus;

typedef enum SntTopology {
  SNT_TOPOLOGY_CLASSIFIER = 0,
  SNT_TOPOLOGY_UNET = 1,
} SntTopology;

typedef enum SntAttention {
  SNT_ATTENTION_GRAD_CAM = 0,
  SNT_ATTENTION_GUIDED_BACKPROP = 1,
} SntAttention;

typedef struct SntBoxList SntBoxList;

typedef struct SntMask SntMask;

typedef struct SntModel SntModel;

typedef struct SntSpectrogram SntSpectrogram;

typedef struct SntSegParams {
  double factor;
  size_t close_size;
  size_t dilate_size;
  size_t median_k;
  size_t min_area;
} SntSegParams;

// Inclusive box: frames `t0..=t1`, bins `f0..=f1` (bin 0 = lowest
// frequency).
typedef struct SntBox {
  size_t t0;
  size_t t1;
  size_t f0;
  size_t f1;
} SntBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *snt_last_error(void);

// Library version as a static NUL-terminated string.
const char *snt_version(void);

// Spectrogram of `n` mono samples at `sample_rate` with the default STFT
// (window 512, hop 706). `log_scale` != 0 selects dB magnitudes.
//
// # Safety
// `samples` must point to `n` readable doubles and `out` to a writable
// handle slot.
enum SntStatus snt_spectrogram_from_samples(const double *samples,
                                            size_t n,
                                            uint32_t sample_rate,
                                            int32_t log_scale,
                                            struct SntSpectrogram **out);

// Spectrogram of a WAV file (channels averaged).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable handle slot.
enum SntStatus snt_spectrogram_from_wav(const char *path,
                                        int32_t log_scale,
                                        struct SntSpectrogram **out);

// # Safety
// `spec` must be a live handle; `rows` and `cols` writable.
enum SntStatus snt_spectrogram_shape(const struct SntSpectrogram *spec, size_t *rows, size_t *cols);

// Copies the row-major values (row 0 = lowest frequency) into `buf`, which
// must hold exactly `rows * cols` doubles.
//
// # Safety
// `spec` must be a live handle and `buf` writable for `len` doubles.
enum SntStatus snt_spectrogram_values(const struct SntSpectrogram *spec, double *buf, size_t len);

// # Safety
// `spec` must be NULL or a handle not yet freed.
void snt_spectrogram_free(struct SntSpectrogram *spec);

struct SntSegParams snt_seg_params_default(void);

// Blind segmentation of a linear-magnitude spectrogram. `params` may be
// NULL for the defaults. Either output slot may be NULL when unwanted.
//
// # Safety
// `spec` must be a live handle; non-NULL pointers must be valid.
enum SntStatus snt_segment(const struct SntSpectrogram *spec,
                           const struct SntSegParams *params,
                           struct SntMask **mask_out,
                           struct SntBoxList **boxes_out);

// # Safety
// `mask` must be a live handle; `rows` and `cols` writable.
enum SntStatus snt_mask_shape(const struct SntMask *mask, size_t *rows, size_t *cols);

// Copies the mask as row-major 0/1 bytes into `buf` of exactly
// `rows * cols` bytes.
//
// # Safety
// `mask` must be a live handle and `buf` writable for `len` bytes.
enum SntStatus snt_mask_bits(const struct SntMask *mask, uint8_t *buf, size_t len);

// Dice coefficient of two equally shaped masks.
//
// # Safety
// Both masks must be live handles and `out` writable.
enum SntStatus snt_mask_dice(const struct SntMask *a, const struct SntMask *b, double *out);

// # Safety
// `mask` must be NULL or a handle not yet freed.
void snt_mask_free(struct SntMask *mask);

// Number of boxes in the list (0 for NULL).
//
// # Safety
// `list` must be NULL or a live handle.
size_t snt_box_list_len(const struct SntBoxList *list);

// # Safety
// `list` must be a live handle and `out` writable.
enum SntStatus snt_box_list_get(const struct SntBoxList *list, size_t index, struct SntBox *out);

// # Safety
// `list` must be NULL or a handle not yet freed.
void snt_box_list_free(struct SntBoxList *list);

// Intersection over union of two boxes.
//
// # Safety
// `a`, `b` and `out` must be valid pointers.
enum SntStatus snt_iou(const struct SntBox *a, const struct SntBox *b, double *out);

// ROC AUC of `scores` against 0/1 `labels`, ties counted half.
//
// # Safety
// `labels` and `scores` must hold `n` readable elements; `out` writable.
enum SntStatus snt_roc_auc(const uint8_t *labels, const double *scores, size_t n, double *out);

// YOLO label text (`0 cx cy w h` per line) for `n` boxes on an
// `img_w x img_h` image. The string is released with [`snt_string_free`].
//
// # Safety
// `boxes` must hold `n` readable boxes; `out` writable.
enum SntStatus snt_export_yolo(const struct SntBox *boxes,
                               size_t n,
                               size_t img_w,
                               size_t img_h,
                               char **out);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void snt_string_free(char *s);

// Loads a model checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable handle slot.
enum SntStatus snt_model_load(const char *path, struct SntModel **out);

// # Safety
// `model` must be a live handle and `out` writable.
enum SntStatus snt_model_topology(const struct SntModel *model, enum SntTopology *out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void snt_model_free(struct SntModel *model);

// U-net mask on the spectrogram's own grid (pixels with probability
// `>= threshold`). The spectrogram must be linear-magnitude.
//
// # Safety
// `model` and `spec` must be live handles; `out` a writable handle slot.
enum SntStatus snt_predict_mask(const struct SntModel *model,
                                const struct SntSpectrogram *spec,
                                double threshold,
                                struct SntMask **out);

// Classifier probability that the clip contains a call.
//
// # Safety
// `model` and `spec` must be live handles; `out` writable.
enum SntStatus snt_predict_probability(const struct SntModel *model,
                                       const struct SntSpectrogram *spec,
                                       double *out);

// Boxes around attention regions of a classifier, on the spectrogram grid.
//
// # Safety
// `model` and `spec` must be live handles; `out` a writable handle slot.
enum SntStatus snt_attention_boxes(const struct SntModel *model,
                                   const struct SntSpectrogram *spec,
                                   enum SntAttention kind,
                                   double threshold,
                                   size_t min_area,
                                   struct SntBoxList **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SONOTAG_H */
