#ifndef QNTK_H
#define QNTK_H

/* Generated by cbindgen from the qntk-ffi crate; regenerate with `cargo build -p qntk-ffi --features gen-header`. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QntkStatus {
  QNTK_STATUS_OK = 0,
  QNTK_STATUS_NULL_ARGUMENT = 1,
  QNTK_STATUS_INVALID_ARGUMENT = 2,
  QNTK_STATUS_SHAPE_MISMATCH = 3,
  QNTK_STATUS_IO_ERROR = 4,
  QNTK_STATUS_FORMAT_ERROR = 5,
  QNTK_STATUS_DOMAIN_ERROR = 6,
  QNTK_STATUS_INTERNAL_ERROR = 7,
} QntkStatus;

// Opaque model handle.
typedef struct QntkModel QntkModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *qntk_version(void);

// Message for the most recent failure on this thread. Valid until the next
// failing call; never NULL.
const char *qntk_last_error_message(void);

// Load a checkpoint from `path` into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum QntkStatus qntk_model_load(const char *path, struct QntkModel **out);

// Save a model handle to `path` (atomic write).
//
// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum QntkStatus qntk_model_save(const struct QntkModel *model, const char *path);

// Free a handle returned by `qntk_model_load`. NULL is a no-op.
//
// # Safety
// `model` must originate from this library and not be freed twice.
void qntk_model_free(struct QntkModel *model);

// Flat input length (product of the model's input shape); 0 on NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t qntk_model_input_len(const struct QntkModel *model);

// Number of output classes; 0 on NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t qntk_model_num_classes(const struct QntkModel *model);

// Trainable parameter count; 0 on NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t qntk_model_param_count(const struct QntkModel *model);

// Weight bitwidth (0 = full precision); 255 on NULL.
//
// # Safety
// `model` must be NULL or a live handle.
uint8_t qntk_model_weight_bits(const struct QntkModel *model);

// Predicted class per sample into `out_labels` (length `batch`).
//
// # Safety
// `inputs` must hold `batch * input_len` f32 values; `out_labels` must
// hold `batch` u32 slots.
enum QntkStatus qntk_model_predict(const struct QntkModel *model,
                                   const float *inputs,
                                   size_t batch,
                                   size_t input_len,
                                   uint32_t *out_labels);

// Class probabilities into `out_probs` (length `batch * num_classes`).
//
// # Safety
// Buffer lengths as documented above.
enum QntkStatus qntk_model_forward(const struct QntkModel *model,
                                   const float *inputs,
                                   size_t batch,
                                   size_t input_len,
                                   float *out_probs);

// Fraction of samples predicted correctly, into `*out_accuracy`.
//
// # Safety
// `labels` must hold `batch` u32 values below the class count.
enum QntkStatus qntk_model_accuracy(const struct QntkModel *model,
                                    const float *inputs,
                                    const uint32_t *labels,
                                    size_t batch,
                                    size_t input_len,
                                    double *out_accuracy);

// n-bit lattice quantization of a scalar in [0,1] into `*out`.
//
// # Safety
// `out` must be a valid pointer.
enum QntkStatus qntk_quantize_value(float value, uint8_t bits, float *out);

// FGSM adversarial batch into `out_adv` (same length as `inputs`).
//
// # Safety
// Buffer lengths as documented above.
enum QntkStatus qntk_attack_fgsm(const struct QntkModel *model,
                                 const float *inputs,
                                 const uint32_t *labels,
                                 size_t batch,
                                 size_t input_len,
                                 float eps,
                                 float *out_adv);

// Carlini-Wagner L2 adversarial batch into `out_adv`; per-sample success
// flags (0/1) into `out_success` when non-NULL.
//
// # Safety
// Buffer lengths as documented above.
enum QntkStatus qntk_attack_cw(const struct QntkModel *model,
                               const float *inputs,
                               const uint32_t *labels,
                               size_t batch,
                               size_t input_len,
                               float kappa,
                               size_t iterations,
                               size_t binary_search_steps,
                               float c_init,
                               float *out_adv,
                               uint8_t *out_success);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* QNTK_H */
