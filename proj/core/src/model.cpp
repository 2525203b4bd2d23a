#include "spfde/model.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "spfde/errors.hpp"

namespace spfde {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::size_t parse_dim(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size() || v <= 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("arch: bad " + what + " '" + s + "'");
  }
}

ModelDesc parse_mlp(const std::string& body) {
  auto dims = split(body, '-');
  if (dims.size() < 2) throw ConfigError("arch: mlp needs at least two dims");
  ModelDesc d;
  d.input_shape = {parse_dim(dims[0], "mlp dim")};
  std::size_t prev = d.input_shape[0];
  for (std::size_t i = 1; i < dims.size(); ++i) {
    std::size_t cur = parse_dim(dims[i], "mlp dim");
    OpSpec op;
    op.kind = OpKind::Affine;
    op.in = prev;
    op.out = cur;
    d.ops.push_back(op);
    if (i + 1 < dims.size()) d.ops.push_back({OpKind::Relu});
    prev = cur;
  }
  return d;
}

// conv<out>k<k>[s<stride>][p<pad>]
OpSpec parse_conv_token(const std::string& tok) {
  OpSpec op;
  op.kind = OpKind::Conv2d;
  std::size_t i = 4;  // past "conv"
  auto read_num = [&](const char* what) {
    std::size_t start = i;
    while (i < tok.size() && std::isdigit(static_cast<unsigned char>(tok[i])))
      ++i;
    if (start == i) throw ConfigError(std::string("arch: conv token '") + tok +
                                      "' missing " + what);
    return static_cast<std::size_t>(std::stoull(tok.substr(start, i - start)));
  };
  op.out = read_num("out channels");
  op.stride = 1;
  op.pad = 0;
  while (i < tok.size()) {
    char tag = tok[i++];
    if (tag == 'k') {
      op.kh = op.kw = read_num("kernel");
    } else if (tag == 's') {
      op.stride = read_num("stride");
    } else if (tag == 'p') {
      op.pad = read_num("pad");
    } else {
      throw ConfigError(std::string("arch: conv token '") + tok +
                        "' has unknown field '" + tag + "'");
    }
  }
  if (op.kh == 0) throw ConfigError("arch: conv token '" + tok + "' missing k");
  return op;
}

ModelDesc parse_cnn(const std::string& body) {
  auto toks = split(body, ',');
  if (toks.empty()) throw ConfigError("arch: empty cnn spec");
  auto in_dims = split(toks[0], 'x');
  if (in_dims.size() != 3)
    throw ConfigError("arch: cnn input must be CxHxW, got '" + toks[0] + "'");
  ModelDesc d;
  d.input_shape = {parse_dim(in_dims[0], "channels"),
                   parse_dim(in_dims[1], "height"),
                   parse_dim(in_dims[2], "width")};
  for (std::size_t i = 1; i < toks.size(); ++i) {
    const std::string& t = toks[i];
    if (t.rfind("conv", 0) == 0) {
      d.ops.push_back(parse_conv_token(t));
    } else if (t == "relu") {
      d.ops.push_back({OpKind::Relu});
    } else if (t == "flatten") {
      d.ops.push_back({OpKind::Flatten});
    } else if (t.rfind("fc", 0) == 0) {
      OpSpec op;
      op.kind = OpKind::Affine;
      op.out = parse_dim(t.substr(2), "fc width");
      d.ops.push_back(op);
    } else {
      throw ConfigError("arch: unknown cnn token '" + t + "'");
    }
  }
  return d;
}

// Plain conv chain with ResNet-32 layer shapes (3 stages of 10 convs after
// the stem; stride-2 at stage transitions; no residual adds). Used mainly
// for budget arithmetic on realistically shaped block lists. The transition
// convs use a 4x4 kernel: output sizes must divide exactly, and k3/s2/p1 on
// an even extent does not.
ModelDesc parse_resnet32(const std::string& arch) {
  std::size_t width = 16;
  auto xpos = arch.find('x');
  if (xpos != std::string::npos) {
    width = 16 * parse_dim(arch.substr(xpos + 1), "width multiplier");
  }
  std::ostringstream os;
  os << "cnn:3x32x32,conv" << width << "k3s1p1,relu";
  const std::size_t stage_width[3] = {width, 2 * width, 4 * width};
  for (int stage = 0; stage < 3; ++stage) {
    for (int i = 0; i < 10; ++i) {
      const bool downsample = stage > 0 && i == 0;
      os << ",conv" << stage_width[stage]
         << (downsample ? "k4s2p1" : "k3s1p1") << ",relu";
    }
  }
  os << ",flatten,fc10";
  ModelDesc d = parse_cnn(os.str().substr(4));
  return d;
}

void resolve_shapes(ModelDesc& d) {
  // Walk the chain once to fill conv in-channels, affine in-dims, and to
  // insert an implicit flatten before an affine fed by a 4-d activation.
  std::vector<std::size_t> shape = d.input_shape;  // without batch dim
  std::vector<OpSpec> resolved;
  for (OpSpec op : d.ops) {
    switch (op.kind) {
      case OpKind::Conv2d: {
        if (shape.size() != 3)
          throw ConfigError("arch: conv2d needs a CxHxW activation");
        op.in = shape[0];
        auto [oh, ow] =
            conv_output_hw(shape[1], shape[2], op.kh, op.kw, op.stride, op.pad);
        shape = {op.out, oh, ow};
        break;
      }
      case OpKind::Flatten: {
        shape = {shape_product(shape)};
        break;
      }
      case OpKind::Relu:
        break;
      case OpKind::Affine: {
        if (shape.size() != 1) {
          resolved.push_back({OpKind::Flatten});
          shape = {shape_product(shape)};
        }
        op.in = shape[0];
        shape = {op.out};
        break;
      }
    }
    resolved.push_back(op);
  }
  d.ops = std::move(resolved);
  d.param_ops.clear();
  for (std::size_t i = 0; i < d.ops.size(); ++i) {
    if (d.ops[i].kind == OpKind::Affine || d.ops[i].kind == OpKind::Conv2d)
      d.param_ops.push_back(i);
  }
  if (d.param_ops.empty())
    throw ConfigError("arch: model has no parameterized layers");
}

}  // namespace

ModelDesc ModelDesc::parse(const std::string& arch) {
  ModelDesc d;
  if (arch.rfind("mlp:", 0) == 0) {
    d = parse_mlp(arch.substr(4));
  } else if (arch.rfind("cnn:", 0) == 0) {
    d = parse_cnn(arch.substr(4));
  } else if (arch.rfind("resnet32", 0) == 0) {
    d = parse_resnet32(arch);
  } else {
    throw ConfigError("arch: unknown architecture '" + arch + "'");
  }
  d.arch = arch;
  resolve_shapes(d);
  return d;
}

std::size_t MaskedLayer::nnz() const {
  std::size_t n = 0;
  for (std::uint8_t m : mask) n += m ? 1 : 0;
  return n;
}

void MaskedLayer::release_momentum() {
  w_momentum = Tensor();
  b_momentum = Tensor();
}

void MaskedLayer::alloc_momentum() {
  w_momentum = Tensor::zeros(weights->data.shape(), weights->data.precision());
  b_momentum = Tensor::zeros(bias->data.shape(), bias->data.precision());
}

void apply_mask(MaskedLayer& layer) {
  Tensor& w = layer.weights->data;
  for (std::size_t i = 0; i < layer.mask.size(); ++i) {
    if (!layer.mask[i]) w.set(i, 0.0);
  }
}

void mask_gradient(MaskedLayer& layer) {
  if (!layer.weights->has_grad()) return;
  Tensor& g = layer.weights->grad();
  for (std::size_t i = 0; i < layer.mask.size(); ++i) {
    if (!layer.mask[i]) g.set(i, 0.0);
  }
}

std::string layer_digest(const MaskedLayer& layer) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw InternalError("digest: EVP_MD_CTX_new failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  auto feed_tensor = [&](const Tensor& t) {
    if (t.precision() == Precision::F32) {
      auto s = t.data<float>();
      EVP_DigestUpdate(ctx, s.data(), s.size() * sizeof(float));
    } else {
      auto s = t.data<double>();
      EVP_DigestUpdate(ctx, s.data(), s.size() * sizeof(double));
    }
  };
  feed_tensor(layer.weights->data);
  EVP_DigestUpdate(ctx, layer.mask.data(), layer.mask.size());
  feed_tensor(layer.bias->data);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

std::vector<std::vector<std::size_t>> partition_blocks(
    const ModelDesc& desc, std::vector<std::size_t> block_sizes) {
  const std::size_t n_layers = desc.layer_count();
  std::vector<std::vector<std::size_t>> groups;
  if (!block_sizes.empty()) {
    std::size_t cursor = 0;
    for (std::size_t count : block_sizes) {
      if (count == 0) throw ConfigError("blocks: zero-sized block");
      std::vector<std::size_t> g;
      for (std::size_t i = 0; i < count; ++i) {
        if (cursor >= n_layers)
          throw ConfigError("blocks: sizes exceed layer count " +
                            std::to_string(n_layers));
        g.push_back(cursor++);
      }
      groups.push_back(std::move(g));
    }
    if (cursor != n_layers)
      throw ConfigError("blocks: sizes cover " + std::to_string(cursor) +
                        " of " + std::to_string(n_layers) + " layers");
    return groups;
  }

  bool has_conv = false;
  for (std::size_t op : desc.param_ops)
    has_conv = has_conv || desc.ops[op].kind == OpKind::Conv2d;

  if (!has_conv) {
    for (std::size_t i = 0; i < n_layers; ++i) groups.push_back({i});
    return groups;
  }

  // Conv stages: consecutive convs with equal output width share a block.
  for (std::size_t i = 0; i < n_layers; ++i) {
    const OpSpec& op = desc.ops[desc.param_ops[i]];
    bool start_new = groups.empty();
    if (!start_new) {
      const OpSpec& prev = desc.ops[desc.param_ops[groups.back().back()]];
      start_new = op.kind != prev.kind ||
                  (op.kind == OpKind::Conv2d && op.out != prev.out) ||
                  op.kind == OpKind::Affine;  // each affine its own block
    }
    if (start_new) groups.push_back({});
    groups.back().push_back(i);
  }
  return groups;
}

SparseNetwork SparseNetwork::build(const ModelDesc& desc, double sparsity,
                                   Precision prec, bool dense_last,
                                   std::vector<std::size_t> block_sizes) {
  if (sparsity < 0.0 || sparsity >= 1.0)
    throw ConfigError("sparsity must be in [0,1), got " +
                      std::to_string(sparsity));
  SparseNetwork net;
  net.desc_ = desc;
  net.prec_ = prec;
  net.sparsity_ = sparsity;
  net.dense_last_ = dense_last;

  // Allocate layers with resolved geometry.
  std::vector<std::size_t> shape = desc.input_shape;
  std::size_t layer_idx = 0;
  for (const OpSpec& op : desc.ops) {
    if (op.kind == OpKind::Conv2d) {
      MaskedLayer layer;
      layer.kind = LayerKind::Conv2d;
      layer.name = "conv_" + std::to_string(layer_idx);
      layer.geom.stride = op.stride;
      layer.geom.pad = op.pad;
      layer.geom.in_h = shape[1];
      layer.geom.in_w = shape[2];
      auto [oh, ow] =
          conv_output_hw(shape[1], shape[2], op.kh, op.kw, op.stride, op.pad);
      layer.geom.out_h = oh;
      layer.geom.out_w = ow;
      layer.weights =
          make_leaf(Tensor::zeros({op.out, op.in, op.kh, op.kw}, prec));
      layer.bias = make_leaf(Tensor::zeros({op.out}, prec));
      layer.mask.assign(layer.weights->data.size(), 1);
      layer.alloc_momentum();
      net.layers_.push_back(std::move(layer));
      shape = {op.out, oh, ow};
      ++layer_idx;
    } else if (op.kind == OpKind::Affine) {
      MaskedLayer layer;
      layer.kind = LayerKind::Affine;
      layer.name = "affine_" + std::to_string(layer_idx);
      layer.weights = make_leaf(Tensor::zeros({op.in, op.out}, prec));
      layer.bias = make_leaf(Tensor::zeros({op.out}, prec));
      layer.mask.assign(layer.weights->data.size(), 1);
      layer.alloc_momentum();
      net.layers_.push_back(std::move(layer));
      shape = {op.out};
      ++layer_idx;
    } else if (op.kind == OpKind::Flatten) {
      shape = {shape_product(shape)};
    }
  }

  // Target sparsity: uniform s, first layer dense, optionally last dense.
  for (std::size_t i = 0; i < net.layers_.size(); ++i) {
    bool dense = i == 0 || (dense_last && i + 1 == net.layers_.size());
    net.layers_[i].target_sparsity = dense ? 0.0 : sparsity;
  }

  auto groups = partition_blocks(desc, std::move(block_sizes));
  for (std::size_t b = 0; b < groups.size(); ++b) {
    Block blk;
    blk.index = b;
    blk.layers = groups[b];
    net.blocks_.push_back(std::move(blk));
  }

  // op -> block / layer maps.
  net.op_block_.assign(desc.ops.size(), 0);
  net.op_layer_.assign(desc.ops.size(), SIZE_MAX);
  std::vector<std::size_t> layer_block(net.layers_.size());
  for (const Block& b : net.blocks_)
    for (std::size_t l : b.layers) layer_block[l] = b.index;
  std::size_t param_seen = 0;
  std::size_t current_block = 0;
  for (std::size_t i = 0; i < desc.ops.size(); ++i) {
    if (desc.ops[i].kind == OpKind::Affine ||
        desc.ops[i].kind == OpKind::Conv2d) {
      net.op_layer_[i] = param_seen;
      current_block = layer_block[param_seen];
      ++param_seen;
    }
    net.op_block_[i] = current_block;
  }
  return net;
}

SparseNetwork SparseNetwork::init_random_sparse(
    const ModelDesc& desc, double sparsity, std::uint64_t seed, Precision prec,
    bool dense_last, std::vector<std::size_t> block_sizes) {
  SparseNetwork net =
      build(desc, sparsity, prec, dense_last, std::move(block_sizes));
  Rng rng = Rng::derive(seed, /*stream=*/0x1417);
  for (MaskedLayer& layer : net.layers_) {
    // Scaled uniform fan-in init on the dense tensor, then mask.
    std::size_t fan_in = 0;
    if (layer.kind == LayerKind::Affine) {
      fan_in = layer.weights->data.dim(0);
    } else {
      fan_in = layer.weights->data.dim(1) * layer.weights->data.dim(2) *
               layer.weights->data.dim(3);
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor& w = layer.weights->data;
    for (std::size_t i = 0; i < w.size(); ++i)
      w.set(i, rng.uniform_real(-bound, bound));

    const std::size_t size = w.size();
    const std::size_t keep = static_cast<std::size_t>(
        std::llround((1.0 - layer.target_sparsity) * static_cast<double>(size)));
    if (keep < size) {
      std::fill(layer.mask.begin(), layer.mask.end(), 0);
      for (std::uint32_t idx : rng.sample_without_replacement(size, keep))
        layer.mask[idx] = 1;
      apply_mask(layer);
    }
  }
  return net;
}

std::size_t SparseNetwork::block_of_layer(std::size_t layer_id) const {
  for (const Block& b : blocks_)
    for (std::size_t l : b.layers)
      if (l == layer_id) return b.index;
  throw InternalError("block_of_layer: unknown layer id " +
                      std::to_string(layer_id));
}

std::vector<std::size_t> SparseNetwork::block_sizes() const {
  std::vector<std::size_t> out;
  for (const Block& b : blocks_) out.push_back(b.layers.size());
  return out;
}

std::size_t SparseNetwork::first_unfrozen_block() const {
  for (const Block& b : blocks_) {
    bool any_unfrozen = false;
    for (std::size_t l : b.layers) any_unfrozen |= !layers_[l].frozen;
    if (any_unfrozen) return b.index;
  }
  return blocks_.size();
}

void SparseNetwork::check_frozen_prefix() const {
  bool seen_unfrozen = false;
  for (const Block& b : blocks_) {
    bool frozen = true;
    bool any = false;
    for (std::size_t l : b.layers) {
      frozen &= layers_[l].frozen;
      any |= layers_[l].frozen;
    }
    if (any && !frozen)
      throw InternalError("frozen prefix violated: block " +
                          std::to_string(b.index) + " partially frozen");
    if (frozen && seen_unfrozen)
      throw InternalError("frozen prefix violated: block " +
                          std::to_string(b.index) +
                          " frozen after an unfrozen block");
    if (!frozen) seen_unfrozen = true;
  }
}

namespace {

// Batch tensors arrive as [batch, ...sample dims]; align them with the
// model's declared input shape (pure reshape when element counts agree).
Tensor normalize_input(const Tensor& input, const ModelDesc& desc) {
  if (input.rank() == 0)
    throw ConfigError("forward: input tensor has no batch dimension");
  const std::size_t batch = input.dim(0);
  std::vector<std::size_t> expected{batch};
  expected.insert(expected.end(), desc.input_shape.begin(),
                  desc.input_shape.end());
  if (input.shape() == expected) return input;
  if (input.size() != batch * shape_product(desc.input_shape)) {
    throw ConfigError("forward: input shape " + shape_to_string(input.shape()) +
                      " does not match model input " +
                      shape_to_string(desc.input_shape));
  }
  return input.reshaped(std::move(expected));
}

}  // namespace

Tensor SparseNetwork::forward(const Tensor& input,
                              std::vector<Tensor>* capture) const {
  Tensor act = normalize_input(input, desc_);
  for (std::size_t i = 0; i < desc_.ops.size(); ++i) {
    const OpSpec& op = desc_.ops[i];
    switch (op.kind) {
      case OpKind::Affine: {
        const MaskedLayer& l = layers_[op_layer_[i]];
        act = affine_forward(act, l.weights->data, l.bias->data);
        break;
      }
      case OpKind::Conv2d: {
        const MaskedLayer& l = layers_[op_layer_[i]];
        act = conv2d_forward(act, l.weights->data, l.bias->data, op.stride,
                             op.pad);
        break;
      }
      case OpKind::Relu:
        act = relu_forward(act);
        break;
      case OpKind::Flatten:
        act = flatten_forward(act);
        break;
    }
    if (!capture) continue;
    // One capture per parameterized layer; take the post-relu activation
    // when a relu immediately follows the layer.
    const bool param_without_relu =
        op_layer_[i] != SIZE_MAX &&
        (i + 1 >= desc_.ops.size() || desc_.ops[i + 1].kind != OpKind::Relu);
    const bool relu_after_param =
        op.kind == OpKind::Relu && i > 0 && op_layer_[i - 1] != SIZE_MAX;
    if (param_without_relu || relu_after_param)
      capture->push_back(flatten_forward(act));
  }
  return act;
}

TrainForward SparseNetwork::train_forward(
    const Tensor& input, std::span<const std::int32_t> labels,
    std::size_t first_active_block) {
  TrainForward tf;
  // Untaped prefix.
  Tensor act = normalize_input(input, desc_);
  std::size_t i = 0;
  for (; i < desc_.ops.size() && op_block_[i] < first_active_block; ++i) {
    const OpSpec& op = desc_.ops[i];
    switch (op.kind) {
      case OpKind::Affine: {
        const MaskedLayer& l = layers_[op_layer_[i]];
        act = affine_forward(act, l.weights->data, l.bias->data);
        break;
      }
      case OpKind::Conv2d: {
        const MaskedLayer& l = layers_[op_layer_[i]];
        act = conv2d_forward(act, l.weights->data, l.bias->data, op.stride,
                             op.pad);
        break;
      }
      case OpKind::Relu:
        act = relu_forward(act);
        break;
      case OpKind::Flatten:
        act = flatten_forward(act);
        break;
    }
  }
  // Taped suffix.
  ValuePtr cur = make_leaf(std::move(act), /*requires_grad=*/false);
  for (; i < desc_.ops.size(); ++i) {
    const OpSpec& op = desc_.ops[i];
    switch (op.kind) {
      case OpKind::Affine:
      case OpKind::Conv2d: {
        MaskedLayer& l = layers_[op_layer_[i]];
        if (l.frozen)
          throw InternalError("train_forward: frozen layer '" + l.name +
                              "' inside the active region");
        l.weights->requires_grad = true;
        l.bias->requires_grad = true;
        cur = op.kind == OpKind::Affine
                  ? tf.tape.affine(cur, l.weights, l.bias)
                  : tf.tape.conv2d(cur, l.weights, l.bias, op.stride, op.pad);
        break;
      }
      case OpKind::Relu:
        cur = tf.tape.relu(cur);
        break;
      case OpKind::Flatten:
        cur = tf.tape.flatten(cur);
        break;
    }
  }
  tf.logits = cur;
  tf.loss = tf.tape.softmax_cross_entropy(cur, labels);
  return tf;
}

std::map<std::string, Tensor> SparseNetwork::gradient_map() const {
  std::map<std::string, Tensor> grads;
  for (const MaskedLayer& l : layers_) {
    if (l.frozen) continue;
    if (!l.weights->requires_grad || !l.weights->has_grad()) continue;
    grads[l.name + ".w"] = l.weights->grad();
    grads[l.name + ".b"] = l.bias->grad();
  }
  return grads;
}

}  // namespace spfde
