#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spfde/tensor.hpp"

namespace spfde {

struct TraceRow {
  std::uint64_t epoch = 0;
  std::string layer;
  double value = 0.0;
  double delta = 0.0;  // |value(t) - value(t-1)| where the trace defines it
};

struct TraceOptions {
  std::optional<std::string> layer;         // restrict to one layer name
  std::optional<std::string> dataset_spec;  // override checkpoint's eval data
  double top_fraction = 0.5;                // structural similarity
  bool symmetric = false;                   // intersect with final's top set
  std::size_t eval_batch = 512;             // cka / gradnorm sample count
};

// Each trace walks every checkpoint under `trace_dir` (files ending in
// .spfd, ordered by stored epoch) against the reference checkpoint.
std::vector<TraceRow> trace_structural(const std::string& ref_checkpoint,
                                       const std::string& trace_dir,
                                       const TraceOptions& opt = {});
std::vector<TraceRow> trace_cka(const std::string& ref_checkpoint,
                                const std::string& trace_dir,
                                const TraceOptions& opt = {});
std::vector<TraceRow> trace_gradnorm(const std::string& ref_checkpoint,
                                     const std::string& trace_dir,
                                     const TraceOptions& opt = {});

std::string trace_to_csv(const std::vector<TraceRow>& rows, bool with_delta);

// The fixed seeded evaluation batch every checkpoint of a trace shares.
std::pair<Tensor, std::vector<std::int32_t>> trace_eval_batch(
    const std::string& dataset_spec, std::size_t n);

}  // namespace spfde
