#ifndef MIPNET_H
#define MIPNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MipnetFormat {
  MIPNET_FORMAT_LP = 0,
  MIPNET_FORMAT_MPS = 1,
} MipnetFormat;

typedef enum MipnetStatus {
  MIPNET_STATUS_OK = 0,
  MIPNET_STATUS_NULL_POINTER = 1,
  MIPNET_STATUS_INVALID_UTF8 = 2,
  MIPNET_STATUS_CONFIG = 3,
  MIPNET_STATUS_IO = 4,
  MIPNET_STATUS_PARSE = 5,
  MIPNET_STATUS_MODEL = 6,
  MIPNET_STATUS_AUDIT = 7,
  MIPNET_STATUS_INFEASIBLE = 8,
  MIPNET_STATUS_BUFFER_TOO_SMALL = 9,
  MIPNET_STATUS_PANIC = 10,
} MipnetStatus;

// A built model with its enumeration limit.
typedef struct MipnetModel MipnetModel;

// A concrete network.
typedef struct MipnetNet MipnetNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *mipnet_last_error(void);

// Builds the model described by a run config file.
//
// `config_path` must be a NUL-terminated string and `out` a valid pointer.
enum MipnetStatus mipnet_model_from_config(const char *config_path, struct MipnetModel **out);

// `model` must come from [`mipnet_model_from_config`] and not be used afterwards.
void mipnet_model_free(struct MipnetModel *model);

// Variable, binary, and linear constraint counts.
//
// `model` must be a live handle; the out pointers must be valid.
enum MipnetStatus mipnet_model_size(const struct MipnetModel *model,
                                    size_t *vars,
                                    size_t *binaries,
                                    size_t *constraints);

// Writes the model as LP or MPS text.
//
// `model` must be a live handle and `path` a NUL-terminated string.
enum MipnetStatus mipnet_model_write(const struct MipnetModel *model,
                                     const char *path,
                                     enum MipnetFormat format);

// Solves the model by exhaustive enumeration and stores the optimum.
//
// `model` must be a live handle and `objective` a valid pointer.
enum MipnetStatus mipnet_model_solve_exact(const struct MipnetModel *model, double *objective);

// Runs the whole pipeline for a config file and stores the objective.
//
// `config_path` must be a NUL-terminated string and `objective` a valid pointer.
enum MipnetStatus mipnet_run(const char *config_path, double *objective);

// Loads a network JSON file.
//
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MipnetStatus mipnet_net_load(const char *path, struct MipnetNet **out);

// `net` must come from [`mipnet_net_load`] and not be used afterwards.
void mipnet_net_free(struct MipnetNet *net);

// Forward pass. Writes up to `out_len` outputs and their count to `written`;
// fails with `BufferTooSmall` (and still sets `written`) when `out_len` is short.
//
// `x` must point to `n` doubles, `out` to `out_len` doubles, and `written`
// must be valid.
enum MipnetStatus mipnet_net_forward(const struct MipnetNet *net,
                                     const double *x,
                                     size_t n,
                                     double *out,
                                     size_t out_len,
                                     size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIPNET_H */
