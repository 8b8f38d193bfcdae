#ifndef STREAMKEY_H
#define STREAMKEY_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SkStatus {
  SK_STATUS_OK = 0,
  SK_STATUS_NULL_POINTER = 1,
  SK_STATUS_INVALID_INPUT = 2,
  SK_STATUS_LENGTH_MISMATCH = 3,
  SK_STATUS_PAD_OVER_CONSUMED = 4,
  SK_STATUS_OUT_OF_ORDER = 5,
  SK_STATUS_BUDGET_EXHAUSTED = 6,
  SK_STATUS_UNKNOWN_MATRIX = 7,
  SK_STATUS_RANK_DEFICIENT = 8,
  SK_STATUS_BUFFER_TOO_SMALL = 9,
  SK_STATUS_INTERNAL = 10,
} SkStatus;

/**
 * Opaque reuse ledger.
 */
typedef struct SkLedger SkLedger;

/**
 * Opaque stream pad with its consumption cursor.
 */
typedef struct SkStreamPad SkStreamPad;

/**
 * Opaque Toeplitz hashing matrix.
 */
typedef struct SkToeplitz SkToeplitz;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *sk_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *sk_version(void);

/**
 * `1 - h(e_b) - h(e_p)`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum SkStatus sk_shor_preskill_rate(double e_b, double e_p, double *out);

/**
 * `ceil(n h(e_p))`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SkStatus sk_seed_length(size_t n, double e_p, size_t *out);

/**
 * Draw a random `rows x cols` Toeplitz matrix from the tape named by `seed`.
 *
 * # Safety
 * `out` must be a valid pointer; the handle it receives must be released
 * with [`sk_toeplitz_free`].
 */
enum SkStatus sk_toeplitz_generate(size_t rows,
                                   size_t cols,
                                   uint64_t seed,
                                   struct SkToeplitz **out);

/**
 * Build a matrix from its `rows + cols - 1` diagonal bits.
 *
 * # Safety
 * `diag` must point to `ceil((rows + cols - 1) / 8)` readable bytes and `out`
 * must be a valid pointer.
 */
enum SkStatus sk_toeplitz_from_diag(size_t rows,
                                    size_t cols,
                                    const uint8_t *diag,
                                    struct SkToeplitz **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void sk_toeplitz_free(struct SkToeplitz *m);

/**
 * # Safety
 * `m` must be a live handle.
 */
size_t sk_toeplitz_rows(const struct SkToeplitz *m);

/**
 * # Safety
 * `m` must be a live handle.
 */
size_t sk_toeplitz_cols(const struct SkToeplitz *m);

/**
 * Hash `cols` input bits into `rows` output bits.
 *
 * # Safety
 * `input` must hold `ceil(cols / 8)` bytes and `output` `out_cap` writable bytes.
 */
enum SkStatus sk_toeplitz_apply(const struct SkToeplitz *m,
                                const uint8_t *input,
                                uint8_t *output,
                                size_t out_cap);

/**
 * Pad `d M` for a seed of `rows(M)` bits.
 *
 * # Safety
 * `m` must be a live handle, `seed` must hold `ceil(rows / 8)` bytes and
 * `out` must be a valid pointer.
 */
enum SkStatus sk_pad_new(const struct SkToeplitz *m, const uint8_t *seed, struct SkStreamPad **out);

/**
 * # Safety
 * `p` must be null or a handle from this library not yet freed.
 */
void sk_pad_free(struct SkStreamPad *p);

/**
 * # Safety
 * `p` must be a live handle.
 */
size_t sk_pad_len(const struct SkStreamPad *p);

/**
 * # Safety
 * `p` must be a live handle.
 */
size_t sk_pad_cursor(const struct SkStreamPad *p);

/**
 * XOR the next `nbits` reconciled bits with the pad and write the final-key
 * bits. Fails without consuming anything if the pad would be over-consumed.
 *
 * # Safety
 * `p` must be a live handle, `input` must hold `ceil(nbits / 8)` bytes and
 * `output` `out_cap` writable bytes.
 */
enum SkStatus sk_pad_finalize(struct SkStreamPad *p,
                              const uint8_t *input,
                              size_t nbits,
                              uint8_t *output,
                              size_t out_cap);

/**
 * # Safety
 * `out` must be a valid pointer; release the handle with [`sk_ledger_free`].
 */
enum SkStatus sk_ledger_new(struct SkLedger **out);

/**
 * # Safety
 * `l` must be null or a handle from this library not yet freed.
 */
void sk_ledger_free(struct SkLedger *l);

/**
 * Register a matrix with its per-session failure and total budget; writes
 * the number of sessions the budget allows.
 *
 * # Safety
 * `l` must be a live handle, `matrix_id` a nul-terminated string and
 * `max_sessions` null or a valid pointer.
 */
enum SkStatus sk_ledger_register(const struct SkLedger *l,
                                 const char *matrix_id,
                                 double eps_per_session,
                                 double total_budget,
                                 uint64_t *max_sessions);

/**
 * Grant one session on a registered matrix; writes the updated use count.
 *
 * # Safety
 * As for [`sk_ledger_register`].
 */
enum SkStatus sk_ledger_draw(const struct SkLedger *l,
                             const char *matrix_id,
                             uint64_t *sessions_used);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STREAMKEY_H */
