#include "spfde/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "spfde/errors.hpp"

namespace spfde {

namespace {

void require_same_precision(const Tensor& a, const Tensor& b,
                            const char* op) {
  if (a.precision() != b.precision()) {
    throw InternalError(std::string(op) + ": mixed tensor precisions");
  }
}

kernels::ConvDims make_conv_dims(const Tensor& x, const Tensor& w,
                                 std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ConfigError("conv2d: expected x[batch,Cin,H,W] and w[Cout,Cin,Kh,Kw], got " +
                      shape_to_string(x.shape()) + " and " +
                      shape_to_string(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw ConfigError("conv2d: input channels " + std::to_string(x.dim(1)) +
                      " != kernel channels " + std::to_string(w.dim(1)));
  }
  auto [oh, ow] = conv_output_hw(x.dim(2), x.dim(3), w.dim(2), w.dim(3),
                                 stride, pad);
  return kernels::ConvDims{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                           w.dim(0), w.dim(2), w.dim(3),
                           stride,   pad,      oh,       ow};
}

}  // namespace

Tensor& Value::grad() {
  if (grad_.empty()) grad_ = Tensor::zeros(data.shape(), data.precision());
  return grad_;
}

void Value::zero_grad() {
  if (!grad_.empty()) grad_.fill(0.0);
}

ValuePtr make_leaf(Tensor t, bool requires_grad) {
  return std::make_shared<Value>(std::move(t), requires_grad);
}

std::pair<std::size_t, std::size_t> conv_output_hw(std::size_t h,
                                                   std::size_t w,
                                                   std::size_t kh,
                                                   std::size_t kw,
                                                   std::size_t stride,
                                                   std::size_t pad) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const auto extent = [&](std::size_t dim, std::size_t k,
                          const char* name) -> std::size_t {
    const std::size_t padded = dim + 2 * pad;
    if (padded < k || (padded - k) % stride != 0) {
      throw ConfigError(std::string("conv2d: output ") + name +
                        " is not a positive integer (dim=" +
                        std::to_string(dim) + ", k=" + std::to_string(k) +
                        ", stride=" + std::to_string(stride) +
                        ", pad=" + std::to_string(pad) + ")");
    }
    return (padded - k) / stride + 1;
  };
  return {extent(h, kh, "height"), extent(w, kw, "width")};
}

Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
    throw ConfigError("affine: expected x[batch,in], w[in,out], b[out], got " +
                      shape_to_string(x.shape()) + ", " +
                      shape_to_string(w.shape()) + ", " +
                      shape_to_string(b.shape()));
  }
  if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0)) {
    throw ConfigError("affine: shape mismatch " + shape_to_string(x.shape()) +
                      " x " + shape_to_string(w.shape()) + " + " +
                      shape_to_string(b.shape()));
  }
  require_same_precision(x, w, "affine");
  require_same_precision(x, b, "affine");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  Tensor y = Tensor::zeros({m, n}, x.precision());
  if (x.precision() == Precision::F32) {
    kernels::matmul_nn(x.data<float>().data(), w.data<float>().data(),
                       y.data<float>().data(), m, k, n);
    auto yd = y.data<float>();
    auto bd = b.data<float>();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) yd[i * n + j] += bd[j];
  } else {
    kernels::matmul_nn(x.data<double>().data(), w.data<double>().data(),
                       y.data<double>().data(), m, k, n);
    auto yd = y.data<double>();
    auto bd = b.data<double>();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) yd[i * n + j] += bd[j];
  }
  return y;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      std::size_t stride, std::size_t pad) {
  auto d = make_conv_dims(x, w, stride, pad);
  if (b.rank() != 1 || b.dim(0) != d.cout) {
    throw ConfigError("conv2d: bias shape " + shape_to_string(b.shape()) +
                      " does not match Cout=" + std::to_string(d.cout));
  }
  require_same_precision(x, w, "conv2d");
  Tensor y = Tensor::zeros({d.batch, d.cout, d.out_h, d.out_w}, x.precision());
  if (x.precision() == Precision::F32) {
    kernels::conv2d_forward(x.data<float>().data(), w.data<float>().data(),
                            b.data<float>().data(), y.data<float>().data(), d);
  } else {
    kernels::conv2d_forward(x.data<double>().data(), w.data<double>().data(),
                            b.data<double>().data(), y.data<double>().data(),
                            d);
  }
  return y;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  if (x.precision() == Precision::F32) {
    for (auto& v : y.data<float>()) v = std::max(v, 0.0f);
  } else {
    for (auto& v : y.data<double>()) v = std::max(v, 0.0);
  }
  return y;
}

Tensor flatten_forward(const Tensor& x) {
  if (x.rank() < 2) throw ConfigError("flatten: expected rank >= 2");
  std::size_t rest = 1;
  for (std::size_t i = 1; i < x.rank(); ++i) rest *= x.dim(i);
  return x.reshaped({x.dim(0), rest});
}

XentResult softmax_cross_entropy_forward(
    const Tensor& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) {
    throw ConfigError("softmax_cross_entropy: expected logits[batch,classes]");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DataError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                    " labels for batch " + std::to_string(batch));
  }
  Tensor probs = Tensor::zeros({batch, classes}, logits.precision());
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::int32_t label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                      " out of range [0," + std::to_string(classes) + ")");
    }
    double maxv = logits.at(i * classes);
    for (std::size_t c = 1; c < classes; ++c)
      maxv = std::max(maxv, logits.at(i * classes + c));
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
      denom += std::exp(logits.at(i * classes + c) - maxv);
    for (std::size_t c = 0; c < classes; ++c) {
      probs.set(i * classes + c,
                std::exp(logits.at(i * classes + c) - maxv) / denom);
    }
    total += std::log(denom) - (logits.at(i * classes + label) - maxv);
  }
  return XentResult{total / static_cast<double>(batch), std::move(probs)};
}

ValuePtr Tape::record(Tensor out, std::vector<ValuePtr> parents,
                      std::function<void(Value&)> fn) {
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  auto node = std::make_shared<Value>(std::move(out), needs_grad);
  node->parents = std::move(parents);
  if (needs_grad) node->backward_fn = std::move(fn);
  nodes_.push_back(node);
  return node;
}

ValuePtr Tape::affine(const ValuePtr& x, const ValuePtr& w,
                      const ValuePtr& b) {
  Tensor y = affine_forward(x->data, w->data, b->data);
  auto fn = [x, w, b](Value& out) {
    const std::size_t m = x->data.dim(0), k = x->data.dim(1),
                      n = w->data.dim(1);
    if (out.data.precision() == Precision::F32) {
      auto dy = out.grad().data<float>();
      if (x->requires_grad) {
        kernels::matmul_nt_acc(dy.data(), w->data.data<float>().data(),
                               x->grad().data<float>().data(), m, n, k);
      }
      if (w->requires_grad) {
        kernels::matmul_tn_acc(x->data.data<float>().data(), dy.data(),
                               w->grad().data<float>().data(), m, k, n);
      }
      if (b->requires_grad) {
        auto db = b->grad().data<float>();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
      }
    } else {
      auto dy = out.grad().data<double>();
      if (x->requires_grad) {
        kernels::matmul_nt_acc(dy.data(), w->data.data<double>().data(),
                               x->grad().data<double>().data(), m, n, k);
      }
      if (w->requires_grad) {
        kernels::matmul_tn_acc(x->data.data<double>().data(), dy.data(),
                               w->grad().data<double>().data(), m, k, n);
      }
      if (b->requires_grad) {
        auto db = b->grad().data<double>();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
      }
    }
  };
  return record(std::move(y), {x, w, b}, std::move(fn));
}

ValuePtr Tape::conv2d(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b,
                      std::size_t stride, std::size_t pad) {
  Tensor y = conv2d_forward(x->data, w->data, b->data, stride, pad);
  auto d = make_conv_dims(x->data, w->data, stride, pad);
  auto fn = [x, w, b, d](Value& out) {
    if (out.data.precision() == Precision::F32) {
      auto dy = out.grad().data<float>();
      if (x->requires_grad) {
        kernels::conv2d_backward_input(dy.data(), w->data.data<float>().data(),
                                       x->grad().data<float>().data(), d);
      }
      if (w->requires_grad) {
        kernels::conv2d_backward_weight(dy.data(),
                                        x->data.data<float>().data(),
                                        w->grad().data<float>().data(), d);
      }
      if (b->requires_grad) {
        kernels::conv2d_backward_bias(dy.data(), b->grad().data<float>().data(),
                                      d);
      }
    } else {
      auto dy = out.grad().data<double>();
      if (x->requires_grad) {
        kernels::conv2d_backward_input(dy.data(),
                                       w->data.data<double>().data(),
                                       x->grad().data<double>().data(), d);
      }
      if (w->requires_grad) {
        kernels::conv2d_backward_weight(dy.data(),
                                        x->data.data<double>().data(),
                                        w->grad().data<double>().data(), d);
      }
      if (b->requires_grad) {
        kernels::conv2d_backward_bias(dy.data(),
                                      b->grad().data<double>().data(), d);
      }
    }
  };
  return record(std::move(y), {x, w, b}, std::move(fn));
}

ValuePtr Tape::relu(const ValuePtr& x) {
  Tensor y = relu_forward(x->data);
  auto fn = [x](Value& out) {
    if (!x->requires_grad) return;
    const std::size_t n = out.data.size();
    if (out.data.precision() == Precision::F32) {
      auto dy = out.grad().data<float>();
      auto yv = out.data.data<float>();
      auto dx = x->grad().data<float>();
      for (std::size_t i = 0; i < n; ++i)
        if (yv[i] > 0.0f) dx[i] += dy[i];
    } else {
      auto dy = out.grad().data<double>();
      auto yv = out.data.data<double>();
      auto dx = x->grad().data<double>();
      for (std::size_t i = 0; i < n; ++i)
        if (yv[i] > 0.0) dx[i] += dy[i];
    }
  };
  return record(std::move(y), {x}, std::move(fn));
}

ValuePtr Tape::flatten(const ValuePtr& x) {
  Tensor y = flatten_forward(x->data);
  auto fn = [x](Value& out) {
    if (!x->requires_grad) return;
    const std::size_t n = out.data.size();
    if (out.data.precision() == Precision::F32) {
      auto dy = out.grad().data<float>();
      auto dx = x->grad().data<float>();
      for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i];
    } else {
      auto dy = out.grad().data<double>();
      auto dx = x->grad().data<double>();
      for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i];
    }
  };
  return record(std::move(y), {x}, std::move(fn));
}

ValuePtr Tape::softmax_cross_entropy(const ValuePtr& logits,
                                     std::span<const std::int32_t> labels) {
  XentResult res = softmax_cross_entropy_forward(logits->data, labels);
  Tensor loss = Tensor::scalar(res.loss, logits->data.precision());
  std::vector<std::int32_t> owned_labels(labels.begin(), labels.end());
  Tensor probs = std::move(res.probs);
  auto fn = [logits, probs = std::move(probs),
             owned_labels = std::move(owned_labels)](Value& out) {
    if (!logits->requires_grad) return;
    const std::size_t batch = probs.dim(0), classes = probs.dim(1);
    const double g = out.grad().at(0) / static_cast<double>(batch);
    Tensor& dl = logits->grad();
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double onehot =
            (static_cast<std::size_t>(owned_labels[i]) == c) ? 1.0 : 0.0;
        dl.set(i * classes + c,
               dl.at(i * classes + c) +
                   g * (probs.at(i * classes + c) - onehot));
      }
    }
  };
  return record(std::move(loss), {logits}, std::move(fn));
}

ValuePtr Tape::sum(const ValuePtr& x) {
  double total = 0.0;
  for (std::size_t i = 0; i < x->data.size(); ++i) total += x->data.at(i);
  Tensor loss = Tensor::scalar(total, x->data.precision());
  auto fn = [x](Value& out) {
    if (!x->requires_grad) return;
    const double g = out.grad().at(0);
    Tensor& dx = x->grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx.set(i, dx.at(i) + g);
  };
  return record(std::move(loss), {x}, std::move(fn));
}

void Tape::backward(const ValuePtr& loss) {
  if (spent_) {
    throw UsageError("tape: backward called twice on one tape");
  }
  if (!loss || loss->data.size() != 1) {
    throw UsageError("tape: backward requires a scalar loss");
  }
  if (std::find(nodes_.begin(), nodes_.end(), loss) == nodes_.end()) {
    throw UsageError("tape: loss was not produced by this tape");
  }
  spent_ = true;
  loss->grad().set(0, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Value& node = **it;
    if (node.backward_fn && node.requires_grad) node.backward_fn(node);
  }
}

}  // namespace spfde
