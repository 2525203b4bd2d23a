#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spfde/autodiff.hpp"
#include "spfde/rng.hpp"
#include "spfde/tensor.hpp"

namespace spfde {

enum class LayerKind : std::uint8_t { Affine = 0, Conv2d = 1 };
enum class OpKind : std::uint8_t { Affine, Conv2d, Relu, Flatten };

struct OpSpec {
  OpKind kind;
  std::size_t in = 0, out = 0;            // affine: features; conv: channels
  std::size_t kh = 0, kw = 0;             // conv kernel
  std::size_t stride = 1, pad = 0;        // conv geometry
};

// Parsed architecture: a chain of ops with resolved shapes.
//
// Arch strings:
//   mlp:784-256-128-10
//   cnn:3x32x32,conv16k3s1p1,relu,conv32k3s2p1,relu,flatten,fc10
//   resnet32[x<width-mult>]     plain conv chain with ResNet-32 layer shapes
struct ModelDesc {
  std::string arch;
  std::vector<std::size_t> input_shape;   // [features] or [C,H,W]
  std::vector<OpSpec> ops;                // includes implicit flatten for mlp
  std::vector<std::size_t> param_ops;     // op indices of affine/conv layers

  static ModelDesc parse(const std::string& arch);
  std::size_t layer_count() const { return param_ops.size(); }
};

struct ConvGeom {
  std::size_t stride = 1, pad = 0;
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

// A parameterized layer: dense weight tensor + binary mask + dense bias.
// Invariant maintained by every engine operation: weights are exactly zero
// wherever mask is zero. A frozen layer's weights/mask/bias never change
// again and its momentum buffers are released.
struct MaskedLayer {
  std::string name;
  LayerKind kind = LayerKind::Affine;
  ValuePtr weights;
  ValuePtr bias;
  std::vector<std::uint8_t> mask;
  bool frozen = false;
  double target_sparsity = 0.0;
  ConvGeom geom;

  Tensor w_momentum;  // same shape as weights
  Tensor b_momentum;  // same shape as bias

  std::size_t weight_count() const { return weights->data.size(); }
  std::size_t nnz() const;
  double sparsity() const {
    return 1.0 - static_cast<double>(nnz()) /
                     static_cast<double>(weight_count());
  }
  void release_momentum();
  void alloc_momentum();
};

// Zero the weights at masked positions.
void apply_mask(MaskedLayer& layer);
// Zero the weight-gradient entries at masked positions.
void mask_gradient(MaskedLayer& layer);

// SHA-256 over (weights, mask, bias) bytes; hex string. Constant for a
// frozen layer by contract.
std::string layer_digest(const MaskedLayer& layer);

// Freezing unit: a run of consecutive layers. Frozen blocks always form a
// prefix of the block order.
struct Block {
  std::size_t index = 0;
  std::vector<std::size_t> layers;
  std::optional<int> freeze_epoch;
};

struct TrainForward {
  Tape tape;
  ValuePtr logits;
  ValuePtr loss;
};

class SparseNetwork {
 public:
  // Shell with zeroed weights and full masks; used by the checkpoint loader.
  static SparseNetwork build(const ModelDesc& desc, double sparsity,
                             Precision prec, bool dense_last,
                             std::vector<std::size_t> block_sizes = {});

  // Random sparse initialization: per masked layer exactly
  // round((1-target)*size) mask entries survive, positions uniform; the
  // dense tensor is filled with scaled uniform fan-in values first, then
  // masked. The first layer stays dense.
  static SparseNetwork init_random_sparse(const ModelDesc& desc,
                                          double sparsity, std::uint64_t seed,
                                          Precision prec = Precision::F32,
                                          bool dense_last = false,
                                          std::vector<std::size_t> block_sizes = {});

  const ModelDesc& desc() const { return desc_; }
  Precision precision() const { return prec_; }
  double model_sparsity() const { return sparsity_; }
  bool dense_last() const { return dense_last_; }

  std::vector<MaskedLayer>& layers() { return layers_; }
  const std::vector<MaskedLayer>& layers() const { return layers_; }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t block_of_layer(std::size_t layer_id) const;
  std::vector<std::size_t> block_sizes() const;

  // Lowest block index that is not frozen (== blocks().size() if all are).
  std::size_t first_unfrozen_block() const;
  // Frozen blocks must form a prefix; violations are internal errors.
  void check_frozen_prefix() const;

  // Inference forward. `capture`, if given, receives one flattened
  // [batch, features] tensor per parameterized layer (taken after a
  // directly following relu, when present).
  Tensor forward(const Tensor& input, std::vector<Tensor>* capture = nullptr) const;

  // Training forward: blocks before `first_active_block` run untaped (no
  // activations retained, no gradients), the rest is recorded on the tape
  // with a cross-entropy head.
  TrainForward train_forward(const Tensor& input,
                             std::span<const std::int32_t> labels,
                             std::size_t first_active_block = 0);

  // Per-parameter gradients after a backward pass; frozen layers (and
  // layers below the active boundary) have no entry.
  std::map<std::string, Tensor> gradient_map() const;

 private:
  ModelDesc desc_;
  Precision prec_ = Precision::F32;
  double sparsity_ = 0.0;
  bool dense_last_ = false;
  std::vector<MaskedLayer> layers_;
  std::vector<Block> blocks_;
  std::vector<std::size_t> op_block_;   // block id per op in desc_.ops
  std::vector<std::size_t> op_layer_;   // masked-layer id per op (param ops)
};

// Default block partition: one block per affine layer for pure MLPs; for
// conv nets, each run of consecutive equal-width conv layers is a block and
// each trailing affine is its own block. `block_sizes` (layer counts per
// block) overrides.
std::vector<std::vector<std::size_t>> partition_blocks(
    const ModelDesc& desc, std::vector<std::size_t> block_sizes);

}  // namespace spfde
