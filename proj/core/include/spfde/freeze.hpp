#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spfde/costs.hpp"
#include "spfde/model.hpp"

namespace spfde {

enum class FreezeScheme {
  single_shot,
  single_shot_resume,
  periodic,
  delayed_periodic,
};

FreezeScheme freeze_scheme_from_string(const std::string& s);
std::string to_string(FreezeScheme s);

struct PlannedFreeze {
  std::size_t block = 0;
  int epoch = 0;
  double saved_flops = 0.0;
};

// Block activity over the whole run. For the single-shot family a block is
// active until its freeze epoch (and possibly again after resume_epoch);
// the periodic family gates blocks with power-of-two periods so the active
// set is always a suffix of the block order.
struct FreezePlan {
  FreezeScheme scheme = FreezeScheme::single_shot;
  int total_epochs = 0;  // T
  int start_epoch = 0;   // T_frz; == total_epochs means never freeze
  int interval = 1;      // delta-tau
  std::size_t num_blocks = 0;

  std::vector<PlannedFreeze> freezes;  // single-shot family, block order
  std::optional<int> resume_epoch;
  std::vector<int> block_period;  // periodic family: 4 / 2 / 1 per block
  int periodic_start = 0;

  double baseline_total_flops = 0.0;   // unfrozen run
  double predicted_total_flops = 0.0;  // with this plan

  bool is_active(std::size_t block, int epoch) const;
  std::optional<int> freeze_epoch_of(std::size_t block) const;
  // Total active epochs of the block over the run (E_b for the LR schedule).
  int active_total(std::size_t block) const;
  // Active epochs strictly before `epoch` (t_active).
  int active_count_before(std::size_t block, int epoch) const;
  std::size_t inactive_count_at(int epoch) const;
};

// Alg.-style planner: walk blocks front to back, freezing each at
// T_frz + interval*i while the predicted training FLOPs still exceed
// target_flops. The final block never freezes. Throws PlanningError naming
// the best achievable reduction when the target is out of reach.
FreezePlan generate_freeze_config(double target_flops, int total_epochs,
                                  int start_epoch, int interval,
                                  const CostModel& accountant);

// Smallest-saving/latest start epoch on the interval grid whose prefix
// (blocks covering roughly `frozen_layer_fraction` of the layers, rounded
// down to a block boundary, never the final block) saves at least
// target_reduction of the unfrozen total. Savings grow as the start epoch
// moves earlier, so this returns the largest grid epoch meeting the target.
int solve_start_epoch(const std::vector<std::size_t>& block_layer_counts,
                      double target_reduction, int total_epochs, int interval,
                      const CostModel& accountant,
                      double frozen_layer_fraction = 2.0 / 3.0);

// Turn a single-shot plan into single-shot-resume: all freeze epochs move
// t = interval*ceil(n/2) earlier and every block resumes at T - t.
void apply_resume(FreezePlan& plan, const CostModel& accountant);

// Periodic / delayed-periodic plans: the front third of the blocks updates
// one epoch in four, the middle third one in two, the rest every epoch.
FreezePlan make_periodic_plan(std::size_t num_blocks, int total_epochs,
                              int interval, bool delayed, int start_epoch,
                              const CostModel& accountant);

// Replayed per-epoch accounting of a plan: sum over epochs of the unfrozen
// cost minus the backward cost of inactive blocks.
double simulate_plan_flops(const FreezePlan& plan, const CostModel& accountant);

// Fire the freeze events of `epoch`: prune each newly frozen block to its
// final sparsity, set frozen flags, release momentum. Unfreezes everything
// at resume_epoch under the resume scheme. Returns newly frozen block ids.
std::vector<std::size_t> freeze_step(SparseNetwork& net, int epoch,
                                     const FreezePlan& plan);

// Per-block cosine schedule over the block's total active epochs.
double block_lr(int epoch, std::size_t block, const FreezePlan& plan,
                double lr0, double lr_end);

}  // namespace spfde
