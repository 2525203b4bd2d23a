#include "spfde/freeze.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "spfde/dst.hpp"
#include "spfde/errors.hpp"

namespace spfde {

FreezeScheme freeze_scheme_from_string(const std::string& s) {
  if (s == "single_shot") return FreezeScheme::single_shot;
  if (s == "single_shot_resume") return FreezeScheme::single_shot_resume;
  if (s == "periodic") return FreezeScheme::periodic;
  if (s == "delayed_periodic") return FreezeScheme::delayed_periodic;
  throw ConfigError("unknown freeze scheme '" + s + "'");
}

std::string to_string(FreezeScheme s) {
  switch (s) {
    case FreezeScheme::single_shot: return "single_shot";
    case FreezeScheme::single_shot_resume: return "single_shot_resume";
    case FreezeScheme::periodic: return "periodic";
    case FreezeScheme::delayed_periodic: return "delayed_periodic";
  }
  return "?";
}

bool FreezePlan::is_active(std::size_t block, int epoch) const {
  if (scheme == FreezeScheme::periodic ||
      scheme == FreezeScheme::delayed_periodic) {
    if (epoch < periodic_start) return true;
    const int period = block < block_period.size() ? block_period[block] : 1;
    if (period <= 1) return true;
    return (epoch + 1) % period == 0;
  }
  if (resume_epoch && epoch >= *resume_epoch) return true;
  auto fe = freeze_epoch_of(block);
  return !fe || epoch < *fe;
}

std::optional<int> FreezePlan::freeze_epoch_of(std::size_t block) const {
  for (const PlannedFreeze& f : freezes)
    if (f.block == block) return f.epoch;
  return std::nullopt;
}

int FreezePlan::active_total(std::size_t block) const {
  int n = 0;
  for (int e = 0; e < total_epochs; ++e) n += is_active(block, e) ? 1 : 0;
  return n;
}

int FreezePlan::active_count_before(std::size_t block, int epoch) const {
  int n = 0;
  for (int e = 0; e < std::min(epoch, total_epochs); ++e)
    n += is_active(block, e) ? 1 : 0;
  return n;
}

std::size_t FreezePlan::inactive_count_at(int epoch) const {
  std::size_t n = 0;
  for (std::size_t b = 0; b < num_blocks; ++b)
    n += is_active(b, epoch) ? 0 : 1;
  return n;
}

FreezePlan generate_freeze_config(double target_flops, int total_epochs,
                                  int start_epoch, int interval,
                                  const CostModel& accountant) {
  if (total_epochs <= 0) throw ConfigError("freeze: total_epochs must be > 0");
  if (interval <= 0) throw ConfigError("freeze: interval must be > 0");
  if (start_epoch <= 0 || start_epoch > total_epochs) {
    throw ConfigError("freeze: start epoch " + std::to_string(start_epoch) +
                      " outside (0, T=" + std::to_string(total_epochs) + "]");
  }

  FreezePlan plan;
  plan.scheme = FreezeScheme::single_shot;
  plan.total_epochs = total_epochs;
  plan.start_epoch = start_epoch;
  plan.interval = interval;
  plan.num_blocks = accountant.num_blocks();

  double baseline = 0.0;
  for (int e = 0; e < total_epochs; ++e)
    baseline += accountant.epoch_flops_unfrozen(e);
  plan.baseline_total_flops = baseline;

  double train_flops = baseline;
  const std::size_t n = accountant.num_blocks();
  for (std::size_t i = 0; i + 1 < n; ++i) {  // the final block never freezes
    if (train_flops <= target_flops) break;
    const int freeze_epoch = start_epoch + interval * static_cast<int>(i);
    if (freeze_epoch >= total_epochs) break;  // empty window, nothing to save
    double saved = 0.0;
    for (int e = freeze_epoch; e < total_epochs; ++e)
      saved += accountant.block_bwd_flops(i, e);
    plan.freezes.push_back({i, freeze_epoch, saved});
    train_flops -= saved;
  }
  plan.predicted_total_flops = train_flops;

  if (train_flops > target_flops) {
    std::ostringstream os;
    os << "freeze: target " << target_flops
       << " FLOPs unreachable; best achievable is " << train_flops << " ("
       << 100.0 * (baseline - train_flops) / baseline
       << "% reduction) freezing all but the final block";
    throw PlanningError(os.str());
  }
  return plan;
}

int solve_start_epoch(const std::vector<std::size_t>& block_layer_counts,
                      double target_reduction, int total_epochs, int interval,
                      const CostModel& accountant,
                      double frozen_layer_fraction) {
  if (interval <= 0) throw ConfigError("freeze: interval must be > 0");
  if (target_reduction >= 1.0)
    throw PlanningError("freeze: target reduction must be < 1");
  if (target_reduction <= 0.0) return total_epochs;  // never freeze

  std::size_t total_layers = 0;
  for (std::size_t c : block_layer_counts) total_layers += c;
  const std::size_t budget_layers = static_cast<std::size_t>(
      std::floor(frozen_layer_fraction * static_cast<double>(total_layers)));
  std::size_t prefix_blocks = 0;
  std::size_t covered = 0;
  while (prefix_blocks + 1 < block_layer_counts.size() &&
         covered + block_layer_counts[prefix_blocks] <= budget_layers) {
    covered += block_layer_counts[prefix_blocks];
    ++prefix_blocks;
  }
  if (prefix_blocks == 0) {
    throw PlanningError(
        "freeze: frozen-layer fraction admits no whole block; nothing can "
        "freeze");
  }

  double baseline = 0.0;
  for (int e = 0; e < total_epochs; ++e)
    baseline += accountant.epoch_flops_unfrozen(e);

  auto savings_at = [&](int t_frz) {
    double saved = 0.0;
    for (std::size_t i = 0; i < prefix_blocks; ++i) {
      const int freeze_epoch = t_frz + interval * static_cast<int>(i);
      for (int e = freeze_epoch; e < total_epochs; ++e)
        saved += accountant.block_bwd_flops(i, e);
    }
    return saved;
  };

  for (int t_frz = total_epochs; t_frz >= interval; t_frz -= interval) {
    if (savings_at(t_frz) >= target_reduction * baseline) return t_frz;
  }
  std::ostringstream os;
  os << "freeze: target reduction " << 100.0 * target_reduction
     << "% unreachable with a " << prefix_blocks
     << "-block prefix; best achievable is "
     << 100.0 * savings_at(interval) / baseline << "%";
  throw PlanningError(os.str());
}

void apply_resume(FreezePlan& plan, const CostModel& accountant) {
  plan.scheme = FreezeScheme::single_shot_resume;
  if (plan.freezes.empty()) return;
  const int n = static_cast<int>(plan.freezes.size());
  const int t = plan.interval * ((n + 1) / 2);
  for (PlannedFreeze& f : plan.freezes) {
    f.epoch -= t;
    if (f.epoch <= 0) {
      throw PlanningError(
          "freeze: resume shift moves block " + std::to_string(f.block) +
          " to a non-positive freeze epoch; lower the target or start later");
    }
  }
  plan.start_epoch -= t;
  plan.resume_epoch = plan.total_epochs - t;
  plan.predicted_total_flops = simulate_plan_flops(plan, accountant);
}

FreezePlan make_periodic_plan(std::size_t num_blocks, int total_epochs,
                              int interval, bool delayed, int start_epoch,
                              const CostModel& accountant) {
  FreezePlan plan;
  plan.scheme =
      delayed ? FreezeScheme::delayed_periodic : FreezeScheme::periodic;
  plan.total_epochs = total_epochs;
  plan.interval = interval;
  plan.start_epoch = delayed ? start_epoch : 0;
  plan.periodic_start = delayed ? start_epoch : 0;
  plan.num_blocks = num_blocks;
  plan.block_period.assign(num_blocks, 1);
  // Front third of the blocks: one update in four epochs; middle third: one
  // in two; the rest always active. Power-of-two periods keep the active
  // set a suffix.
  const std::size_t third = num_blocks / 3;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    if (b < third) {
      plan.block_period[b] = 4;
    } else if (b < 2 * third) {
      plan.block_period[b] = 2;
    }
  }
  double baseline = 0.0;
  for (int e = 0; e < total_epochs; ++e)
    baseline += accountant.epoch_flops_unfrozen(e);
  plan.baseline_total_flops = baseline;
  plan.predicted_total_flops = simulate_plan_flops(plan, accountant);
  return plan;
}

double simulate_plan_flops(const FreezePlan& plan,
                           const CostModel& accountant) {
  double total = 0.0;
  for (int e = 0; e < plan.total_epochs; ++e) {
    total += accountant.epoch_flops_unfrozen(e);
    for (std::size_t b = 0; b < accountant.num_blocks(); ++b) {
      if (!plan.is_active(b, e)) total -= accountant.block_bwd_flops(b, e);
    }
  }
  return total;
}

std::vector<std::size_t> freeze_step(SparseNetwork& net, int epoch,
                                     const FreezePlan& plan) {
  std::vector<std::size_t> newly_frozen;
  if (plan.scheme == FreezeScheme::periodic ||
      plan.scheme == FreezeScheme::delayed_periodic) {
    return newly_frozen;  // activity is plan-gated, no permanent state
  }
  if (plan.resume_epoch && epoch == *plan.resume_epoch) {
    for (MaskedLayer& layer : net.layers()) {
      if (!layer.frozen) continue;
      layer.frozen = false;
      layer.alloc_momentum();
    }
    return newly_frozen;
  }
  for (const PlannedFreeze& f : plan.freezes) {
    if (f.epoch != epoch) continue;
    for (std::size_t li : net.blocks()[f.block].layers) {
      MaskedLayer& layer = net.layers()[li];
      // Lock the block in at its final sparsity; a block frozen mid-search
      // would otherwise carry its temporary search-phase density forever.
      if (layer.target_sparsity > 0.0)
        prune_to(layer, layer.target_sparsity);
      layer.frozen = true;
      layer.release_momentum();
    }
    newly_frozen.push_back(f.block);
  }
  if (!newly_frozen.empty()) net.check_frozen_prefix();
  return newly_frozen;
}

double block_lr(int epoch, std::size_t block, const FreezePlan& plan,
                double lr0, double lr_end) {
  const int horizon = plan.active_total(block);
  if (horizon <= 0) return lr_end;
  const int t_active = plan.active_count_before(block, epoch);
  const double phase = static_cast<double>(t_active) /
                       static_cast<double>(horizon);
  return lr_end +
         0.5 * (lr0 - lr_end) * (1.0 + std::cos(std::numbers::pi * phase));
}

}  // namespace spfde
