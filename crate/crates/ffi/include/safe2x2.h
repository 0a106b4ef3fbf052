#ifndef SAFE2X2_H
#define SAFE2X2_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define SAFE2X2_OK 0
#define SAFE2X2_NULL_POINTER 1
#define SAFE2X2_INVALID 2
#define SAFE2X2_DEGENERATE 3
#define SAFE2X2_DOMAIN 4
#define SAFE2X2_CONFIG 5
#define SAFE2X2_UNSUPPORTED 6
#define SAFE2X2_INTERNAL 7
#define SAFE2X2_PANIC 8

typedef struct Safe2x2Process Safe2x2Process;

int safe2x2_process_new(size_t n_a, size_t n_b, Safe2x2Process **handle);
int safe2x2_process_new_json(size_t n_a, size_t n_b, const char *model_json, Safe2x2Process **handle);
void safe2x2_process_free(Safe2x2Process *handle);

/* group: 0 = a, 1 = b. y: 0 or 1. blocks_completed may be NULL. */
int safe2x2_process_observe(Safe2x2Process *handle, int group, int y, size_t *blocks_completed);
double safe2x2_process_log_e(const Safe2x2Process *handle);
uint64_t safe2x2_process_blocks(const Safe2x2Process *handle);
int safe2x2_process_decide(const Safe2x2Process *handle, double alpha, int *reject);

int safe2x2_block_log_e(uint64_t k_a, uint64_t n_a, uint64_t k_b, uint64_t n_b,
                        double theta_a, double theta_b, double *log_e);
int safe2x2_fisher_one_sided(uint64_t n_a1, uint64_t n_a0, uint64_t n_b1, uint64_t n_b0,
                             double *p_value);

const char *safe2x2_last_error(void);
const char *safe2x2_version(void);

#ifdef __cplusplus
}
#endif

#endif
