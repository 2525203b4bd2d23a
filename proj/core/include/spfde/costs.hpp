#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "spfde/dst.hpp"
#include "spfde/model.hpp"

namespace spfde {

// Static shape facts the FLOPs formulas need, decoupled from live tensors.
struct LayerShape {
  LayerKind kind = LayerKind::Affine;
  std::size_t in = 0, out = 0;                    // affine
  std::size_t cin = 0, cout = 0, kh = 0, kw = 0;  // conv
  std::size_t out_h = 0, out_w = 0;
  std::size_t weight_count = 0;

  static LayerShape of(const MaskedLayer& layer);
};

// Multiply-accumulate counts as 2 FLOPs; bias and activation-function work
// is not charged. Sparsity scales the dense count by (1 - s).
double layer_fwd_flops(const LayerShape& layer, double sparsity,
                       std::size_t batch);

// One pass for input gradients plus one for weight gradients: 2x forward.
// A frozen layer charges nothing.
double layer_bwd_flops(const LayerShape& layer, double sparsity,
                       std::size_t batch, bool frozen);

// Per-epoch cost of the live network: forward for every layer, backward
// only for layers in active blocks, times the partial-set size. Sparsity is
// taken from the actual masks.
double epoch_flops(const SparseNetwork& net,
                   const std::function<bool(std::size_t)>& block_active,
                   std::size_t samples_per_epoch);

// Training-memory breakdown in bytes, 32-bit scalars. The frozen prefix
// contributes weight values only; the boundary activation feeding the first
// active block is retained.
struct MemoryReport {
  std::uint64_t weights_bytes = 0;
  std::uint64_t activations_bytes = 0;
  std::uint64_t weight_grad_bytes = 0;
  std::uint64_t activation_grad_bytes = 0;
  std::uint64_t optimizer_bytes = 0;
  std::uint64_t mask_index_bytes = 0;  // informational, outside total()

  std::uint64_t total() const {
    return weights_bytes + activations_bytes + weight_grad_bytes +
           activation_grad_bytes + optimizer_bytes;
  }
};

MemoryReport memory_snapshot(const SparseNetwork& net,
                             const std::function<bool(std::size_t)>& block_active,
                             std::size_t batch);

// Cumulative FLOPs ledger with the savings split by source. The three
// buckets decompose dense_baseline - actual exactly.
struct FlopsReport {
  double actual = 0.0;           // measured training FLOPs
  double dense_baseline = 0.0;   // dense, full dataset, never frozen
  double sparse_baseline = 0.0;  // sparse, full dataset, never frozen
  double saved_sparsity = 0.0;
  double saved_sieving = 0.0;
  double saved_freezing = 0.0;
};

// Accountant interface consumed by the freeze planner; production code uses
// ScheduleCostModel, tests may stub it.
class CostModel {
 public:
  virtual ~CostModel() = default;
  virtual std::size_t num_blocks() const = 0;
  // Backward FLOPs one unfrozen epoch charges to `block`.
  virtual double block_bwd_flops(std::size_t block, int epoch) const = 0;
  // Whole-network fwd+bwd FLOPs of one unfrozen epoch.
  virtual double epoch_flops_unfrozen(int epoch) const = 0;
};

// Accountant over a network's shapes with sparsity following the DST
// staircase and a fixed per-epoch sample count.
class ScheduleCostModel final : public CostModel {
 public:
  ScheduleCostModel(const SparseNetwork& net, const DstSchedule& schedule,
                    std::size_t samples_per_epoch);

  std::size_t num_blocks() const override { return n_blocks_; }
  double block_bwd_flops(std::size_t block, int epoch) const override;
  double epoch_flops_unfrozen(int epoch) const override;

  double layer_fwd(std::size_t layer, int epoch) const;
  std::size_t samples_per_epoch() const { return samples_; }

 private:
  std::vector<LayerShape> shapes_;
  std::vector<double> target_sparsity_;
  std::vector<std::size_t> block_of_;
  std::size_t n_blocks_ = 0;
  DstSchedule schedule_;
  std::size_t samples_ = 0;
};

}  // namespace spfde
