#include "spfde/costs.hpp"

#include "spfde/errors.hpp"

namespace spfde {

LayerShape LayerShape::of(const MaskedLayer& layer) {
  LayerShape s;
  s.kind = layer.kind;
  s.weight_count = layer.weight_count();
  const auto& dims = layer.weights->data.shape();
  if (layer.kind == LayerKind::Affine) {
    s.in = dims[0];
    s.out = dims[1];
  } else {
    s.cout = dims[0];
    s.cin = dims[1];
    s.kh = dims[2];
    s.kw = dims[3];
    s.out_h = layer.geom.out_h;
    s.out_w = layer.geom.out_w;
  }
  return s;
}

double layer_fwd_flops(const LayerShape& layer, double sparsity,
                       std::size_t batch) {
  const double density = 1.0 - sparsity;
  const double b = static_cast<double>(batch);
  if (layer.kind == LayerKind::Affine) {
    return 2.0 * static_cast<double>(layer.in) *
           static_cast<double>(layer.out) * density * b;
  }
  return 2.0 * static_cast<double>(layer.kh) * static_cast<double>(layer.kw) *
         static_cast<double>(layer.cin) * static_cast<double>(layer.cout) *
         static_cast<double>(layer.out_h) * static_cast<double>(layer.out_w) *
         density * b;
}

double layer_bwd_flops(const LayerShape& layer, double sparsity,
                       std::size_t batch, bool frozen) {
  if (frozen) return 0.0;
  return 2.0 * layer_fwd_flops(layer, sparsity, batch);
}

double epoch_flops(const SparseNetwork& net,
                   const std::function<bool(std::size_t)>& block_active,
                   std::size_t samples_per_epoch) {
  double total = 0.0;
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const MaskedLayer& layer = net.layers()[li];
    const LayerShape shape = LayerShape::of(layer);
    const double s = layer.sparsity();
    const bool active =
        !layer.frozen &&
        (!block_active || block_active(net.block_of_layer(li)));
    total += layer_fwd_flops(shape, s, 1);
    total += layer_bwd_flops(shape, s, 1, !active);
  }
  return total * static_cast<double>(samples_per_epoch);
}

namespace {

// Per-sample activation element counts: for each block the op outputs it
// owns, plus the input size feeding each op (to resolve boundaries).
struct ActivationLayout {
  std::vector<std::uint64_t> block_outputs;  // sum of op output sizes
  std::vector<std::uint64_t> block_boundary;     // input size of block's first op
  std::uint64_t input_size = 0;
};

ActivationLayout activation_layout(const SparseNetwork& net) {
  const ModelDesc& desc = net.desc();
  ActivationLayout out;
  out.block_outputs.assign(net.blocks().size(), 0);
  out.block_boundary.assign(net.blocks().size(), 0);
  out.input_size = shape_product(desc.input_shape);

  std::vector<std::size_t> shape = desc.input_shape;
  std::size_t param_seen = 0;
  std::size_t cur_block = 0;
  std::vector<bool> block_started(net.blocks().size(), false);
  std::vector<std::size_t> layer_block(net.layers().size());
  for (const Block& b : net.blocks())
    for (std::size_t l : b.layers) layer_block[l] = b.index;

  for (const OpSpec& op : desc.ops) {
    const std::uint64_t in_size = shape_product(shape);
    bool new_buffer = true;
    switch (op.kind) {
      case OpKind::Conv2d: {
        auto [oh, ow] =
            conv_output_hw(shape[1], shape[2], op.kh, op.kw, op.stride, op.pad);
        cur_block = layer_block[param_seen++];
        shape = {op.out, oh, ow};
        break;
      }
      case OpKind::Affine:
        cur_block = layer_block[param_seen++];
        shape = {op.out};
        break;
      case OpKind::Flatten:
        // A reshape, not a retained buffer.
        shape = {shape_product(shape)};
        new_buffer = false;
        break;
      case OpKind::Relu:
        break;
    }
    if (!block_started[cur_block]) {
      block_started[cur_block] = true;
      out.block_boundary[cur_block] = in_size;
    }
    if (new_buffer) out.block_outputs[cur_block] += shape_product(shape);
  }
  return out;
}

}  // namespace

MemoryReport memory_snapshot(const SparseNetwork& net,
                             const std::function<bool(std::size_t)>& block_active,
                             std::size_t batch) {
  constexpr std::uint64_t kScalar = 4;  // 32-bit values
  MemoryReport rep;

  auto active = [&](std::size_t block) {
    bool frozen = true;
    for (std::size_t l : net.blocks()[block].layers)
      frozen &= net.layers()[l].frozen;
    if (frozen) return false;
    return !block_active || block_active(block);
  };

  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const MaskedLayer& layer = net.layers()[li];
    const std::uint64_t nnz = layer.nnz();
    rep.weights_bytes += kScalar * nnz;
    rep.mask_index_bytes += kScalar * nnz;
    if (active(net.block_of_layer(li))) {
      rep.weight_grad_bytes += kScalar * nnz;
      rep.optimizer_bytes += kScalar * nnz;
    }
  }

  const ActivationLayout layout = activation_layout(net);
  std::uint64_t act_elems = 0;
  std::uint64_t grad_elems = 0;
  bool boundary_counted = false;
  for (std::size_t b = 0; b < net.blocks().size(); ++b) {
    if (!active(b)) continue;
    if (!boundary_counted) {
      act_elems += layout.block_boundary[b];
      boundary_counted = true;
    }
    act_elems += layout.block_outputs[b];
    grad_elems += layout.block_outputs[b];
  }
  rep.activations_bytes = kScalar * static_cast<std::uint64_t>(batch) * act_elems;
  rep.activation_grad_bytes =
      kScalar * static_cast<std::uint64_t>(batch) * grad_elems;
  return rep;
}

ScheduleCostModel::ScheduleCostModel(const SparseNetwork& net,
                                     const DstSchedule& schedule,
                                     std::size_t samples_per_epoch)
    : schedule_(schedule), samples_(samples_per_epoch) {
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    shapes_.push_back(LayerShape::of(net.layers()[li]));
    target_sparsity_.push_back(net.layers()[li].target_sparsity);
    block_of_.push_back(net.block_of_layer(li));
  }
  n_blocks_ = net.blocks().size();
}

double ScheduleCostModel::layer_fwd(std::size_t layer, int epoch) const {
  const double s = schedule_.sparsity_at(target_sparsity_[layer], epoch);
  const double eff = target_sparsity_[layer] <= 0.0 ? 0.0 : s;
  return layer_fwd_flops(shapes_[layer], eff, 1) *
         static_cast<double>(samples_);
}

double ScheduleCostModel::block_bwd_flops(std::size_t block, int epoch) const {
  double total = 0.0;
  for (std::size_t li = 0; li < shapes_.size(); ++li) {
    if (block_of_[li] != block) continue;
    total += 2.0 * layer_fwd(li, epoch);
  }
  return total;
}

double ScheduleCostModel::epoch_flops_unfrozen(int epoch) const {
  double total = 0.0;
  for (std::size_t li = 0; li < shapes_.size(); ++li)
    total += 3.0 * layer_fwd(li, epoch);  // fwd + 2x fwd backward
  return total;
}

}  // namespace spfde
