#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "spfde/autodiff.hpp"
#include "spfde/errors.hpp"
#include "spfde/model.hpp"
#include "spfde/rng.hpp"
#include "test_helpers.hpp"

using namespace spfde;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, Precision p) {
  Tensor t = Tensor::zeros(std::move(shape), p);
  for (std::size_t i = 0; i < t.size(); ++i)
    t.set(i, rng.uniform_real(-1.0, 1.0));
  return t;
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max(std::fabs(a) + std::fabs(b), 1e-6);
}

}  // namespace

TEST_CASE("affine identity case") {
  Tensor x = Tensor::from_f32({2, 2}, {1, 0, 0, 1});
  Tensor w = Tensor::from_f32({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::zeros({2}, Precision::F32);
  Tensor y = affine_forward(x, w, b);
  CHECK(y.at(0) == 1.0);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == 0.0);
  CHECK(y.at(3) == 1.0);
}

TEST_CASE("affine hand arithmetic") {
  Tensor x = Tensor::from_f32({1, 2}, {1, 2});
  Tensor w = Tensor::from_f32({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_f32({2}, {3, 4});
  Tensor y = affine_forward(x, w, b);
  CHECK(y.at(0) == doctest::Approx(4.0));
  CHECK(y.at(1) == doctest::Approx(6.0));
}

TEST_CASE("affine random matches triple-loop oracle") {
  Rng rng(7);
  Tensor x = random_tensor({3, 4}, rng, Precision::F32);
  Tensor w = random_tensor({4, 5}, rng, Precision::F32);
  Tensor b = random_tensor({5}, rng, Precision::F32);
  Tensor y = affine_forward(x, w, b);

  auto ref = oracles::matmul(testutil::to_doubles(x), testutil::to_doubles(w),
                             3, 4, 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      ref[i * 5 + j] += b.at(j);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(rel_err(y.at(i), ref[i]) < 1e-6);
}

TEST_CASE("affine shape mismatch is a configuration error") {
  Tensor x = Tensor::zeros({2, 3}, Precision::F32);
  Tensor w = Tensor::zeros({4, 5}, Precision::F32);
  Tensor b = Tensor::zeros({5}, Precision::F32);
  CHECK_THROWS_AS(affine_forward(x, w, b), ConfigError);
}

TEST_CASE("conv2d 1x1 identity kernel") {
  Rng rng(3);
  Tensor x = random_tensor({1, 1, 4, 4}, rng, Precision::F32);
  Tensor w = Tensor::from_f32({1, 1, 1, 1}, {1.0f});
  Tensor b = Tensor::zeros({1}, Precision::F32);
  Tensor y = conv2d_forward(x, w, b, 1, 0);
  CHECK(y.bit_equal(x));
}

TEST_CASE("conv2d all-ones 3x3 on all-ones 5x5") {
  Tensor x = Tensor::full({1, 1, 5, 5}, 1.0, Precision::F32);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0, Precision::F32);
  Tensor b = Tensor::zeros({1}, Precision::F32);
  Tensor y = conv2d_forward(x, w, b, 1, 0);
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 3, 3});
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == 9.0);
}

TEST_CASE("conv2d random matches 7-loop oracle") {
  Rng rng(11);
  oracles::ConvSpec spec{2, 3, 7, 7, 4, 3, 3, 2, 1};
  Tensor x = random_tensor({spec.batch, spec.cin, spec.h, spec.w}, rng,
                           Precision::F32);
  Tensor w = random_tensor({spec.cout, spec.cin, spec.kh, spec.kw}, rng,
                           Precision::F32);
  Tensor b = random_tensor({spec.cout}, rng, Precision::F32);
  Tensor y = conv2d_forward(x, w, b, spec.stride, spec.pad);

  auto ref = oracles::conv2d(testutil::to_doubles(x), testutil::to_doubles(w),
                             testutil::to_doubles(b), spec);
  REQUIRE(y.size() == ref.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(rel_err(y.at(i), ref[i]) < 1e-5);
}

TEST_CASE("conv2d non-integer output size is a configuration error") {
  Tensor x = Tensor::zeros({1, 1, 5, 5}, Precision::F32);
  Tensor w = Tensor::zeros({1, 1, 2, 2}, Precision::F32);
  Tensor b = Tensor::zeros({1}, Precision::F32);
  CHECK_THROWS_AS(conv2d_forward(x, w, b, 2, 0), ConfigError);
}

TEST_CASE("cross entropy of uniform logits is ln(C)") {
  Tensor logits = Tensor::zeros({4, 10}, Precision::F64);
  std::vector<std::int32_t> labels{0, 3, 7, 9};
  auto res = softmax_cross_entropy_forward(logits, labels);
  CHECK(res.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy saturates to zero on a huge correct logit") {
  Tensor logits = Tensor::zeros({1, 5}, Precision::F64);
  logits.set(2, 1000.0);
  std::vector<std::int32_t> labels{2};
  auto res = softmax_cross_entropy_forward(logits, labels);
  CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy random batch matches direct oracle") {
  Rng rng(5);
  Tensor logits = random_tensor({6, 8}, rng, Precision::F64);
  std::vector<std::int32_t> labels;
  for (int i = 0; i < 6; ++i)
    labels.push_back(static_cast<std::int32_t>(rng.uniform_index(8)));
  auto res = softmax_cross_entropy_forward(logits, labels);
  const double ref =
      oracles::cross_entropy(testutil::to_doubles(logits), labels, 8);
  CHECK(rel_err(res.loss, ref) < 1e-6);
}

TEST_CASE("cross entropy label out of range is a data error") {
  Tensor logits = Tensor::zeros({1, 3}, Precision::F32);
  std::vector<std::int32_t> labels{3};
  CHECK_THROWS_AS(softmax_cross_entropy_forward(logits, labels), DataError);
  labels[0] = -1;
  CHECK_THROWS_AS(softmax_cross_entropy_forward(logits, labels), DataError);
}

TEST_CASE("backward of sum(w) is all ones") {
  Rng rng(2);
  auto w = make_leaf(random_tensor({3, 4}, rng, Precision::F64), true);
  Tape tape;
  auto loss = tape.sum(w);
  tape.backward(loss);
  for (std::size_t i = 0; i < w->grad().size(); ++i)
    CHECK(w->grad().at(i) == 1.0);
}

TEST_CASE("backward twice on one tape is a usage error") {
  auto w = make_leaf(Tensor::full({2}, 1.0, Precision::F32), true);
  Tape tape;
  auto loss = tape.sum(w);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), UsageError);
}

TEST_CASE("backward rejects a loss from another tape") {
  auto w = make_leaf(Tensor::full({2}, 1.0, Precision::F32), true);
  Tape a;
  auto loss = a.sum(w);
  Tape b;
  CHECK_THROWS_AS(b.backward(loss), UsageError);
}

TEST_CASE("frozen prefix keeps gradients out of the gradient map") {
  ModelDesc desc = ModelDesc::parse("mlp:4-4-4-3");
  SparseNetwork net = SparseNetwork::init_random_sparse(desc, 0.0, 9);
  REQUIRE(net.blocks().size() == 3);
  for (std::size_t li : net.blocks()[0].layers) {
    net.layers()[li].frozen = true;
    net.layers()[li].release_momentum();
    net.layers()[li].weights->requires_grad = false;
  }

  Rng rng(4);
  Tensor x = random_tensor({5, 4}, rng, Precision::F32);
  std::vector<std::int32_t> labels{0, 1, 2, 0, 1};
  TrainForward tf = net.train_forward(x, labels, net.first_unfrozen_block());
  tf.tape.backward(tf.loss);

  auto grads = net.gradient_map();
  CHECK(grads.count("affine_0.w") == 0);
  CHECK(grads.count("affine_0.b") == 0);
  CHECK(grads.count("affine_1.w") == 1);
  CHECK(grads.count("affine_2.w") == 1);
}

namespace {

// FD harness: loss(theta) through the untaped forward path.
void check_gradients_fd(SparseNetwork& net, const Tensor& x,
                        const std::vector<std::int32_t>& labels, double h,
                        double tol) {
  for (MaskedLayer& layer : net.layers()) {
    layer.weights->zero_grad();
    layer.bias->zero_grad();
  }
  TrainForward tf = net.train_forward(x, labels, 0);
  tf.tape.backward(tf.loss);

  auto loss_now = [&]() {
    return softmax_cross_entropy_forward(net.forward(x), labels).loss;
  };
  for (MaskedLayer& layer : net.layers()) {
    for (Tensor* param : {&layer.weights->data, &layer.bias->data}) {
      const Tensor& grad = param == &layer.weights->data
                               ? layer.weights->grad()
                               : layer.bias->grad();
      for (std::size_t i = 0; i < param->size(); ++i) {
        const double theta = param->at(i);
        param->set(i, theta + h);
        const double up = loss_now();
        param->set(i, theta - h);
        const double down = loss_now();
        param->set(i, theta);
        const double fd = (up - down) / (2.0 * h);
        const double an = grad.at(i);
        INFO("layer ", layer.name, " param index ", i, " fd ", fd,
             " analytic ", an);
        CHECK(rel_err(an, fd) < tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences (mlp)") {
  for (std::uint64_t seed : {0, 1, 2}) {
    ModelDesc desc = ModelDesc::parse("mlp:6-5-4");
    SparseNetwork net =
        SparseNetwork::init_random_sparse(desc, 0.0, seed, Precision::F64);
    Rng rng(100 + seed);
    Tensor x = random_tensor({3, 6}, rng, Precision::F64);
    std::vector<std::int32_t> labels{0, 3, 1};
    check_gradients_fd(net, x, labels, 1e-5, 1e-4);
  }
}

TEST_CASE("analytic gradients match central finite differences (cnn)") {
  for (std::uint64_t seed : {0, 1, 2}) {
    ModelDesc desc =
        ModelDesc::parse("cnn:2x6x6,conv3k3s1p1,relu,conv4k4s2p1,relu,flatten,fc3");
    SparseNetwork net =
        SparseNetwork::init_random_sparse(desc, 0.0, seed, Precision::F64);
    Rng rng(200 + seed);
    Tensor x = random_tensor({2, 2, 6, 6}, rng, Precision::F64);
    std::vector<std::int32_t> labels{1, 2};
    check_gradients_fd(net, x, labels, 1e-5, 1e-4);
  }
}

TEST_CASE("forward and backward are deterministic bit for bit") {
  auto run_once = [](std::uint64_t seed) {
    ModelDesc desc = ModelDesc::parse("mlp:8-6-4");
    SparseNetwork net = SparseNetwork::init_random_sparse(desc, 0.5, seed);
    Rng rng(seed ^ 0xF00D);
    Tensor x = random_tensor({4, 8}, rng, Precision::F32);
    std::vector<std::int32_t> labels{0, 1, 2, 3};
    TrainForward tf = net.train_forward(x, labels, 0);
    tf.tape.backward(tf.loss);
    return std::make_pair(tf.logits->data,
                          net.layers()[0].weights->grad());
  };
  auto [logits_a, grad_a] = run_once(42);
  auto [logits_b, grad_b] = run_once(42);
  CHECK(logits_a.bit_equal(logits_b));
  CHECK(grad_a.bit_equal(grad_b));
}

TEST_CASE("masked positions do not affect the forward pass") {
  ModelDesc desc = ModelDesc::parse("mlp:6-8-4");
  SparseNetwork net = SparseNetwork::init_random_sparse(desc, 0.5, 21);
  MaskedLayer& layer = net.layers()[1];
  REQUIRE(layer.nnz() < layer.weight_count());

  Rng rng(77);
  Tensor x = random_tensor({3, 6}, rng, Precision::F32);
  Tensor before = net.forward(x);

  // Corrupt every masked position, then restore the mask contract.
  for (std::size_t i = 0; i < layer.mask.size(); ++i)
    if (!layer.mask[i]) layer.weights->data.set(i, 123.0);
  apply_mask(layer);
  Tensor after = net.forward(x);
  CHECK(before.bit_equal(after));
}

TEST_CASE("mask discards gradient entries at masked positions") {
  ModelDesc desc = ModelDesc::parse("mlp:6-8-4");
  SparseNetwork net = SparseNetwork::init_random_sparse(desc, 0.5, 31);
  Rng rng(78);
  Tensor x = random_tensor({3, 6}, rng, Precision::F32);
  std::vector<std::int32_t> labels{0, 1, 2};
  TrainForward tf = net.train_forward(x, labels, 0);
  tf.tape.backward(tf.loss);
  MaskedLayer& layer = net.layers()[1];
  mask_gradient(layer);
  for (std::size_t i = 0; i < layer.mask.size(); ++i)
    if (!layer.mask[i]) CHECK(layer.weights->grad().at(i) == 0.0);
}

TEST_CASE("forward outputs stay finite on finite inputs") {
  ModelDesc desc = ModelDesc::parse("mlp:10-16-8");
  SparseNetwork net = SparseNetwork::init_random_sparse(desc, 0.8, 3);
  Rng rng(9);
  Tensor x = random_tensor({8, 10}, rng, Precision::F32);
  std::vector<std::int32_t> labels(8, 1);
  TrainForward tf = net.train_forward(x, labels, 0);
  tf.tape.backward(tf.loss);
  CHECK(tf.logits->data.all_finite());
  CHECK(net.layers()[0].weights->grad().all_finite());
}
