#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "spfde/tensor.hpp"

namespace spfde {

class Value;
using ValuePtr = std::shared_ptr<Value>;

// A node in the reverse-mode graph: a tensor plus an optional gradient
// buffer. Parameters are long-lived leaf Values; op outputs are created
// per forward pass by a Tape.
class Value {
 public:
  explicit Value(Tensor t, bool needs_grad = false)
      : data(std::move(t)), requires_grad(needs_grad) {}

  Tensor data;
  bool requires_grad = false;

  Tensor& grad();  // lazily allocated zero tensor of data's shape
  bool has_grad() const { return !grad_.empty() || data.size() == 0; }
  void zero_grad();

  std::vector<ValuePtr> parents;
  std::function<void(Value&)> backward_fn;  // empty for leaves

 private:
  Tensor grad_;
};

ValuePtr make_leaf(Tensor t, bool requires_grad = false);

// Records one forward pass. Ops are appended in execution order, which is
// a valid topological order; backward() replays them once in reverse.
class Tape {
 public:
  ValuePtr affine(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b);
  ValuePtr conv2d(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b,
                  std::size_t stride, std::size_t pad);
  ValuePtr relu(const ValuePtr& x);
  ValuePtr flatten(const ValuePtr& x);
  // Mean over the batch of -log softmax(logits)[label]. Scalar output.
  ValuePtr softmax_cross_entropy(const ValuePtr& logits,
                                 std::span<const std::int32_t> labels);
  // Sum of all elements; scalar. Used by gradient checks.
  ValuePtr sum(const ValuePtr& x);

  // Seeds d(loss)/d(loss)=1 and accumulates gradients into every
  // requires_grad Value reachable from `loss`. A tape can be walked once;
  // a second call is a usage error.
  void backward(const ValuePtr& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  ValuePtr record(Tensor out, std::vector<ValuePtr> parents,
                  std::function<void(Value&)> fn);
  std::vector<ValuePtr> nodes_;
  bool spent_ = false;
};

// Untaped forward primitives (inference/analysis path). The taped ops call
// these for their forward halves.
Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      std::size_t stride, std::size_t pad);
Tensor relu_forward(const Tensor& x);
Tensor flatten_forward(const Tensor& x);

struct XentResult {
  double loss;
  Tensor probs;  // [batch, classes]
};
XentResult softmax_cross_entropy_forward(const Tensor& logits,
                                         std::span<const std::int32_t> labels);

// (out_h, out_w) for a conv; throws ConfigError unless both are positive
// integers under the given stride/padding.
std::pair<std::size_t, std::size_t> conv_output_hw(std::size_t h,
                                                   std::size_t w,
                                                   std::size_t kh,
                                                   std::size_t kw,
                                                   std::size_t stride,
                                                   std::size_t pad);

}  // namespace spfde
