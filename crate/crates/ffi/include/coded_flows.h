#ifndef CODED_FLOWS_H
#define CODED_FLOWS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_INVALID_ARGUMENT = 1,
  CF_STATUS_DOMAIN = 2,
  CF_STATUS_UNSTABLE = 3,
  CF_STATUS_NON_CONVERGENCE = 4,
  CF_STATUS_POLICY_NON_CONVERGENCE = 5,
  CF_STATUS_BALANCE = 6,
  CF_STATUS_CONFIG = 7,
  CF_STATUS_IO = 8,
  CF_STATUS_NULL_POINTER = 9,
  CF_STATUS_PANIC = 10,
} CfStatus;

// Objective of the batch burst-table search.
typedef enum CfObjective {
  CF_OBJECTIVE_TIME = 0,
  CF_OBJECTIVE_ENERGY = 1,
  CF_OBJECTIVE_PRODUCT = 2,
} CfObjective;

// Burst tables found by the batch search, with their completion statistics.
typedef struct CfBatchPlan CfBatchPlan;

// Line network parameters (arrival rates, erasure probabilities, energies).
typedef struct CfNetwork CfNetwork;

// Steady-state metrics of the genie-aided scheme with coding across flows.
typedef struct CfInterMetrics {
  double mean_i1;
  double mean_i2;
  double p_empty1;
  double p_empty2;
  double delay_node1;
  double delay_node2;
  double flow1_end_to_end;
  double flow2_end_to_end;
  double energy_per_packet_s1;
  double energy_per_packet_s2;
  // Queue caps the chain was solved at.
  uint32_t cap1;
  uint32_t cap2;
} CfInterMetrics;

// Steady-state per-flow delays with per-session coding at S2.
typedef struct CfIntraMetrics {
  double mean_i1;
  double mean_i2;
  double mean_i3;
  double d1_flow1;
  double d2_flow1;
  double d2_flow2;
  double flow1_total;
  double flow2_total;
} CfIntraMetrics;

// Long-run metrics of the half-duplex online scheme.
typedef struct CfOnlineMetrics {
  double mean_i1;
  double mean_i2;
  double delay_node1;
  double delay_node2;
  double mean_delay;
  double energy_per_packet;
  double throughput;
} CfOnlineMetrics;

// Monte Carlo mean with its standard error.
typedef struct CfEstimate {
  double mean;
  double std_err;
  uint64_t samples;
} CfEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *cf_last_error_message(void);

// Static, NUL-terminated name of a status code.
const char *cf_status_name(enum CfStatus status);

// Creates a network with unit slot energies and free ACKs.
//
// # Safety
// `out` must point to writable storage for one pointer.
enum CfStatus cf_network_new(double lambda1,
                             double lambda2,
                             double p1,
                             double p2,
                             struct CfNetwork **out);

// Sets the per-slot energies of S1, S2 and the ACK slot.
//
// # Safety
// `net` must be null or a live handle from [`cf_network_new`].
enum CfStatus cf_network_set_energy(struct CfNetwork *net, double e1, double e2, double e_ack);

// Releases a network handle. Null is ignored.
//
// # Safety
// `net` must be null or a live handle that is not used afterwards.
void cf_network_free(struct CfNetwork *net);

// Genie-aided scheme with coding across flows, caps chosen automatically.
//
// # Safety
// `net` must be a live handle and `out` writable.
enum CfStatus cf_genie_inter(const struct CfNetwork *net, struct CfInterMetrics *out);

// Genie-aided scheme with per-session coding; S2 serves flow 1 with
// probability `ps`. With `strict` an empty scheduled flow idles the slot.
//
// # Safety
// `net` must be a live handle and `out` writable.
enum CfStatus cf_genie_intra(const struct CfNetwork *net,
                             double ps,
                             bool strict,
                             struct CfIntraMetrics *out);

// Half-duplex online scheme with every burst equal to the backlog.
//
// # Safety
// `net` must be a live handle and `out` writable.
enum CfStatus cf_hd_online(const struct CfNetwork *net, struct CfOnlineMetrics *out);

// Searches burst tables for a batch of `m1` + `m2` packets. The arrival
// rates of `net` are ignored; its erasure probabilities and energies apply.
//
// # Safety
// `net` must be a live handle and `out` writable.
enum CfStatus cf_batch_optimize(const struct CfNetwork *net,
                                uint32_t m1,
                                uint32_t m2,
                                enum CfObjective objective,
                                struct CfBatchPlan **out);

// Expected completion time (slots) and energy of the plan.
//
// # Safety
// `plan` must be a live handle; each output is null or writable.
enum CfStatus cf_batch_plan_stats(const struct CfBatchPlan *plan,
                                  double *mean_time,
                                  double *mean_energy,
                                  uint32_t *iterations);

// Burst S1 sends with `i1` dof left, or S2 with `(i1, i2)` when `node` is 2.
// `i2` is ignored for node 1.
//
// # Safety
// `plan` must be a live handle and `out` writable.
enum CfStatus cf_batch_plan_burst(const struct CfBatchPlan *plan,
                                  uint32_t node,
                                  uint32_t i1,
                                  uint32_t i2,
                                  uint32_t *out);

// Monte Carlo completion time and energy of the plan over `runs` batches.
//
// # Safety
// `plan` must be a live handle and both outputs writable.
enum CfStatus cf_batch_plan_simulate(const struct CfBatchPlan *plan,
                                     uint64_t seed,
                                     uint64_t runs,
                                     struct CfEstimate *time,
                                     struct CfEstimate *energy);

// Releases a plan handle. Null is ignored.
//
// # Safety
// `plan` must be null or a live handle that is not used afterwards.
void cf_batch_plan_free(struct CfBatchPlan *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CODED_FLOWS_H */
