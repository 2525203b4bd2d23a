#pragma once

#include <string>
#include <vector>

#include "spfde/checkpoint.hpp"
#include "spfde/config.hpp"
#include "spfde/costs.hpp"
#include "spfde/dst.hpp"
#include "spfde/freeze.hpp"
#include "spfde/metrics.hpp"

namespace spfde {

DstSchedule make_schedule(const RunConfig& cfg);

struct BudgetRow {
  std::size_t block = 0;
  int freeze_epoch = 0;
  double bp_flops_per_epoch = 0.0;  // at the freeze epoch's sparsity
  double saved_flops = 0.0;
  double cumulative_total = 0.0;    // predicted train FLOPs so far
};

struct BudgetResult {
  FreezePlan plan;
  std::vector<BudgetRow> rows;
  double baseline_flops = 0.0;
  double replayed_flops = 0.0;  // per-epoch replay of the plan
  std::size_t samples_per_epoch = 0;
};

// Plan the freeze schedule for a config without training.
BudgetResult run_budget(const RunConfig& cfg);

// Build the freeze plan a training run would use (shared by budget/train).
FreezePlan plan_freezing(const RunConfig& cfg, const SparseNetwork& net,
                         const CostModel& accountant);

struct TrainResult {
  std::string metrics_path;
  std::string final_checkpoint;
  SummaryRecord summary;
  std::vector<double> epoch_seconds;  // wall time, not logged
};

// The three-stage training flow: initialize sparse net + sieve partition,
// run the epoch loop (freeze events, structure updates, sieve swaps, SGD
// with per-block cosine LR), emit the metrics log and checkpoints.
TrainResult run_train(const RunConfig& cfg, const std::string& out_dir);

struct ReportResult {
  SummaryRecord summary;
  bool has_summary = false;
  std::string csv;  // per-epoch table for plotting
};

ReportResult run_report(const std::string& metrics_path);

std::string config_to_json(const RunConfig& cfg);

}  // namespace spfde
