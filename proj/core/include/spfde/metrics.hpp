#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "spfde/costs.hpp"
#include "spfde/sieve.hpp"

namespace spfde {

// One line-delimited UTF-8 record per epoch, plus typed records for the
// run configuration echo, sieve swaps, and the final summary.
struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double eval_acc = 0.0;
  std::vector<double> lr_per_block;  // 0.0 for inactive blocks
  double epoch_flops = 0.0;
  double cum_flops = 0.0;
  std::uint64_t mem_bytes = 0;
  std::size_t frozen_blocks = 0;
  std::size_t sieve_swaps = 0;
  std::vector<double> sparsity_per_layer;
  std::vector<std::uint64_t> nnz_per_layer;
};

struct SummaryRecord {
  FlopsReport flops;
  std::uint64_t mem_min_bytes = 0;
  double mem_avg_bytes = 0.0;
  std::uint64_t mem_baseline_bytes = 0;
  double final_train_acc = 0.0;
  double final_eval_acc = 0.0;
  int epochs = 0;
};

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void write_config_echo(const std::string& config_json);
  void write(const EpochRecord& rec);
  void write(const SieveReport& rep);
  void write(const SummaryRecord& sum);

 private:
  std::ofstream out_;
};

struct MetricsLog {
  std::string config_json;  // raw echo, may be empty
  std::vector<EpochRecord> epochs;
  std::vector<SieveReport> sieve_updates;
  std::optional<SummaryRecord> summary;

  // Throws DataError naming the 1-based line number on malformed records.
  static MetricsLog read(const std::string& path);
};

}  // namespace spfde
