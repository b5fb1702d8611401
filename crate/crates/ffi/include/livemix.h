#ifndef LIVEMIX_H
#define LIVEMIX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LmHead {
  LM_HEAD_ALM = 0,
  LM_HEAD_DMC = 1,
} LmHead;

typedef enum LmMode {
  /**
   * 975 ms embedding frames refreshed every 300 ms, 50 ms control frames.
   */
  LM_MODE_MULTI_RATE = 0,
  /**
   * 975 ms frames for both.
   */
  LM_MODE_SINGLE_RATE = 1,
} LmMode;

/**
 * Result of every fallible call.
 */
typedef enum LmStatus {
  LM_STATUS_OK = 0,
  LM_STATUS_NULL_POINTER = 1,
  LM_STATUS_INVALID_ARGUMENT = 2,
  LM_STATUS_MISSING_FILE = 3,
  LM_STATUS_IO = 4,
  LM_STATUS_BAD_FORMAT = 5,
  LM_STATUS_SHAPE_MISMATCH = 6,
  LM_STATUS_FINISHED = 7,
  LM_STATUS_INTERNAL = 8,
  LM_STATUS_PANIC = 9,
} LmStatus;

/**
 * Trained weights.
 */
typedef struct LmModel LmModel;

/**
 * One live mixing stream.
 */
typedef struct LmStream LmStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lm_last_error_message(char *buf, size_t len);

/**
 * Creates a model with seeded random weights.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum LmStatus lm_model_init(uint64_t seed, struct LmModel **out);

/**
 * Loads weights written by `lm_model_save` or the `livemix` tool.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LmStatus lm_model_load(const char *path, struct LmModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum LmStatus lm_model_save(const struct LmModel *model, const char *path);

/**
 * Releases a model. Streams created from it stay valid.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void lm_model_free(struct LmModel *model);

/**
 * Opens a stream mixing `channels` inputs at 16 kHz.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum LmStatus lm_stream_new(const struct LmModel *model,
                            enum LmMode mode,
                            enum LmHead head,
                            size_t channels,
                            struct LmStream **out);

/**
 * Samples per channel the stream expects in each call.
 *
 * # Safety
 * `stream` must be null or a live handle.
 */
size_t lm_stream_frame_len(const struct LmStream *stream);

/**
 * Index of the frame the next `lm_stream_process` call renders.
 *
 * # Safety
 * `stream` must be null or a live handle.
 */
size_t lm_stream_frame_index(const struct LmStream *stream);

/**
 * Mixes one frame. `input` holds `channels * frame_len` samples, channel
 * after channel. `frame_len` equals `lm_stream_frame_len` except for a
 * final shorter frame, after which the stream is finished. `mix` receives
 * `frame_len` samples. `gains`, if not null, receives the `channels`
 * gains applied to this frame.
 *
 * # Safety
 * All buffers must be valid for the lengths above.
 */
enum LmStatus lm_stream_process(struct LmStream *stream,
                                const float *input,
                                size_t frame_len,
                                float *mix,
                                float *gains);

/**
 * Rewinds the stream to its initial state.
 *
 * # Safety
 * `stream` must be a live handle.
 */
enum LmStatus lm_stream_reset(struct LmStream *stream);

/**
 * # Safety
 * `stream` must be null or a handle not yet freed.
 */
void lm_stream_free(struct LmStream *stream);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIVEMIX_H */
