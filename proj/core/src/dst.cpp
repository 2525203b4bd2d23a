#include "spfde/dst.hpp"

#include <algorithm>
#include <cmath>

#include "spfde/errors.hpp"

namespace spfde {

DstSchedule DstSchedule::make(int interval, int search_end,
                              std::vector<std::pair<int, double>> phase_starts,
                              double sparsity) {
  if (interval <= 0) throw ConfigError("dst: update interval must be positive");
  if (search_end < 0) throw ConfigError("dst: search_end must be >= 0");
  if (search_end % interval != 0) {
    throw ConfigError("dst: search_end " + std::to_string(search_end) +
                      " must lie on the update grid (interval " +
                      std::to_string(interval) + ")");
  }
  DstSchedule s;
  s.interval = interval;
  s.search_end = search_end;
  for (std::size_t i = 0; i < phase_starts.size(); ++i) {
    auto [start, delta] = phase_starts[i];
    if (i == 0 && start != 0)
      throw ConfigError("dst: first phase must start at epoch 0");
    if (i > 0 && start <= phase_starts[i - 1].first)
      throw ConfigError("dst: phase starts must be ascending");
    if (start % interval != 0)
      throw ConfigError("dst: phase start " + std::to_string(start) +
                        " must lie on the update grid");
    if (delta <= 0.0 || delta >= 1.0 - sparsity) {
      throw ConfigError("dst: grow offset " + std::to_string(delta) +
                        " must satisfy 0 < delta < 1 - s");
    }
    const int end =
        (i + 1 < phase_starts.size()) ? phase_starts[i + 1].first : search_end;
    if (end > search_end)
      throw ConfigError("dst: phase extends past search_end");
    s.phases.push_back({start, end, delta});
  }
  return s;
}

std::optional<double> DstSchedule::delta_at(int epoch) const {
  if (epoch >= search_end) return std::nullopt;
  for (const DstPhase& p : phases) {
    if (epoch >= p.start_epoch && epoch < p.end_epoch) return p.grow_offset;
  }
  return std::nullopt;
}

double DstSchedule::sparsity_at(double s, int epoch) const {
  auto delta = delta_at(epoch);
  return delta ? s - *delta : s;
}

std::size_t target_nnz(std::size_t size, double sparsity) {
  return static_cast<std::size_t>(
      std::llround((1.0 - sparsity) * static_cast<double>(size)));
}

void prune_to(MaskedLayer& layer, double target_sparsity) {
  if (layer.frozen)
    throw UsageError("prune_to: layer '" + layer.name + "' is frozen");
  const std::size_t size = layer.weight_count();
  const std::size_t keep = target_nnz(size, target_sparsity);
  const std::size_t cur = layer.nnz();
  if (keep > cur) {
    throw UsageError("prune_to: target sparsity " +
                     std::to_string(target_sparsity) +
                     " is below the layer's current level");
  }
  if (keep == cur) return;

  struct Entry {
    double mag;
    std::uint32_t idx;
  };
  std::vector<Entry> entries;
  entries.reserve(cur);
  const Tensor& w = layer.weights->data;
  for (std::size_t i = 0; i < size; ++i) {
    if (layer.mask[i]) entries.push_back({std::fabs(w.at(i)), static_cast<std::uint32_t>(i)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag) return a.mag > b.mag;
    return a.idx < b.idx;
  });
  Tensor& wm = layer.weights->data;
  const bool has_momentum = layer.w_momentum.size() > 0;
  for (std::size_t k = keep; k < entries.size(); ++k) {
    const std::uint32_t i = entries[k].idx;
    layer.mask[i] = 0;
    wm.set(i, 0.0);
    if (has_momentum) layer.w_momentum.set(i, 0.0);
  }
}

void grow_to(MaskedLayer& layer, double target_sparsity, Rng& rng) {
  if (layer.frozen)
    throw UsageError("grow_to: layer '" + layer.name + "' is frozen");
  const std::size_t size = layer.weight_count();
  const std::size_t want = target_nnz(size, target_sparsity);
  const std::size_t cur = layer.nnz();
  if (want < cur) {
    throw UsageError("grow_to: target sparsity " +
                     std::to_string(target_sparsity) +
                     " is above the layer's current level");
  }
  if (want == cur) return;
  const std::size_t k_new = want - cur;

  std::vector<std::uint32_t> masked;
  masked.reserve(size - cur);
  for (std::size_t i = 0; i < size; ++i)
    if (!layer.mask[i]) masked.push_back(static_cast<std::uint32_t>(i));
  if (k_new > masked.size()) {
    throw InternalError("grow_to: not enough masked positions in '" +
                        layer.name + "'");
  }
  Tensor& w = layer.weights->data;
  const bool has_momentum = layer.w_momentum.size() > 0;
  for (std::uint32_t pick : rng.sample_without_replacement(masked.size(), k_new)) {
    const std::uint32_t i = masked[pick];
    layer.mask[i] = 1;
    w.set(i, 0.0);
    if (has_momentum) layer.w_momentum.set(i, 0.0);
  }
}

void structure_update(SparseNetwork& net, int epoch, const DstSchedule& sched,
                      Rng& rng,
                      const std::function<bool(std::size_t)>& block_active) {
  if (epoch % sched.interval != 0) {
    throw UsageError("structure_update: epoch " + std::to_string(epoch) +
                     " is off the update grid (interval " +
                     std::to_string(sched.interval) + ")");
  }
  if (epoch > sched.search_end) return;  // search finished
  const bool final_prune = epoch == sched.search_end;
  const auto delta = sched.delta_at(epoch);
  if (!final_prune && !delta) return;  // no phase covers this epoch

  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    MaskedLayer& layer = net.layers()[li];
    if (layer.frozen) continue;
    if (layer.target_sparsity <= 0.0) continue;  // dense layers never search
    if (block_active && !block_active(net.block_of_layer(li))) continue;
    prune_to(layer, layer.target_sparsity);
    if (!final_prune)
      grow_to(layer, layer.target_sparsity - *delta, rng);
  }
}

}  // namespace spfde
