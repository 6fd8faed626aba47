#ifndef THERMALIGN_H
#define THERMALIGN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result codes shared by every entry point.
 */
typedef enum TaStatus {
  TA_STATUS_OK = 0,
  TA_STATUS_NULL_POINTER = 1,
  TA_STATUS_INVALID_ARGUMENT = 2,
  TA_STATUS_IO = 3,
  TA_STATUS_CHECKPOINT = 4,
  TA_STATUS_SHAPE = 5,
  TA_STATUS_CONFIG = 6,
  TA_STATUS_BUFFER_TOO_SMALL = 7,
  TA_STATUS_INTERNAL = 8,
} TaStatus;

typedef enum TaPromptMode {
  TA_PROMPT_MODE_CLOSED_SET = 0,
  TA_PROMPT_MODE_OPEN_SET = 1,
} TaPromptMode;

/*
 A loaded model. Opaque to C.
 */
typedef struct TaModel TaModel;

typedef struct TaPartition {
  uint64_t trained_params;
  uint64_t total_params;
  double trained_percent;
  uint64_t trained_tensors;
  uint64_t frozen_tensors;
} TaPartition;

/*
 Parsed `Species; Count` answer. `species` is 0 deer, 1 rhino, 2 elephant,
 or -1 when absent or not one of the three.
 */
typedef struct TaPrediction {
  bool ok;
  int32_t species;
  uint32_t count;
} TaPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread. The pointer stays valid until
 the next failing call on the same thread.
 */
const char *ta_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ta_version(void);

/*
 Loads a full checkpoint (backbones and projector).

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TaStatus ta_model_load(const char *path, struct TaModel **out);

/*
 Overlays a projector-only checkpoint onto a loaded model.

 # Safety
 `model` must come from [`ta_model_load`]; `path` must be NUL-terminated.
 */
enum TaStatus ta_model_apply(struct TaModel *model, const char *path);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from [`ta_model_load`] and not be used afterwards.
 */
void ta_model_free(struct TaModel *model);

/*
 Trainable/frozen parameter split of a model.

 # Safety
 `model` must come from [`ta_model_load`]; `out` must be valid.
 */
enum TaStatus ta_model_partition(const struct TaModel *model, struct TaPartition *out);

/*
 Greedy answer for one image given as row-major `height × width ×
 channels` intensities in `[0, 1]`, `channels` being 1 or 3. The answer is
 written NUL-terminated into `buf`; `written` receives its length without
 the terminator. When `buf` is too small nothing is written and `written`
 holds the length needed.

 # Safety
 `pixels` must hold `height·width·channels` values; `buf` must hold
 `buf_len` bytes; `written` must be valid.
 */
enum TaStatus ta_model_answer(const struct TaModel *model,
                              const double *pixels,
                              uintptr_t height,
                              uintptr_t width,
                              uintptr_t channels,
                              enum TaPromptMode mode,
                              uintptr_t max_new_tokens,
                              char *buf,
                              uintptr_t buf_len,
                              uintptr_t *written);

/*
 Parses a `Species; Count` answer. Malformed text is not an error: the
 call succeeds with `ok` false.

 # Safety
 `text` must be NUL-terminated; `out` must be valid.
 */
enum TaStatus ta_parse_species_count(const char *text, struct TaPrediction *out);

/*
 Learning rate at `step` under linear warmup and cosine decay.

 # Safety
 `out` must be valid.
 */
enum TaStatus ta_lr_at(uint64_t step,
                       double peak_lr,
                       double warmup_ratio,
                       uint64_t max_steps,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMALIGN_H */
