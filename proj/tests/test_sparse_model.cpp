#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "spfde/checkpoint.hpp"
#include "spfde/dst.hpp"
#include "spfde/errors.hpp"
#include "spfde/model.hpp"
#include "test_helpers.hpp"

using namespace spfde;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

SparseNetwork small_net(std::uint64_t seed, double s = 0.9) {
  return SparseNetwork::init_random_sparse(ModelDesc::parse("mlp:10-10-10-5"),
                                           s, seed);
}

}  // namespace

TEST_CASE("zero sparsity keeps every mask entry set") {
  SparseNetwork net = small_net(1, 0.0);
  for (const MaskedLayer& l : net.layers()) CHECK(l.nnz() == l.weight_count());
}

TEST_CASE("sparsity rounding: 100 weights at s=0.9 keep exactly 10") {
  SparseNetwork net = small_net(2, 0.9);
  // Layer 1 is 10x10; layer 0 stays dense.
  CHECK(net.layers()[0].nnz() == net.layers()[0].weight_count());
  CHECK(net.layers()[1].nnz() == 10);
}

TEST_CASE("sparsity outside [0,1) is a configuration error") {
  CHECK_THROWS_AS(small_net(1, 1.0), ConfigError);
  CHECK_THROWS_AS(small_net(1, -0.1), ConfigError);
}

TEST_CASE("mask positions are uniform across seeds (chi-square)") {
  // Layer 1 of mlp:4-6-4 has 24 weights; keep 6 at s = 0.75.
  const std::size_t cells = 24, keep = 6, trials = 10000;
  std::vector<std::size_t> counts(cells, 0);
  for (std::size_t seed = 0; seed < trials; ++seed) {
    SparseNetwork net = SparseNetwork::init_random_sparse(
        ModelDesc::parse("mlp:4-6-4"), 0.75, seed);
    const MaskedLayer& l = net.layers()[1];
    REQUIRE(l.nnz() == keep);
    for (std::size_t i = 0; i < cells; ++i)
      if (l.mask[i]) ++counts[i];
  }
  const double expected =
      static_cast<double>(trials * keep) / static_cast<double>(cells);
  const double stat = oracles::chi_square_uniform(counts, expected);
  CHECK(stat < oracles::chi2_crit_99(static_cast<int>(cells) - 1));
}

TEST_CASE("apply_mask zeroes exactly the masked coordinates") {
  std::vector<float> w = {1, 2, 3, 4, 5, 6};
  SUBCASE("full mask leaves weights unchanged") {
    auto layer = testutil::make_affine_layer(2, 3, w, {1, 1, 1, 1, 1, 1});
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(layer.weights->data.at(i) == doctest::Approx(w[i]));
  }
  SUBCASE("zero mask zeroes everything") {
    auto layer = testutil::make_affine_layer(2, 3, w, {0, 0, 0, 0, 0, 0});
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(layer.weights->data.at(i) == 0.0);
  }
  SUBCASE("mixed mask zeroes only masked entries") {
    auto layer = testutil::make_affine_layer(2, 3, w, {1, 0, 1, 0, 1, 0});
    for (std::size_t i = 0; i < 6; ++i) {
      if (i % 2 == 0)
        CHECK(layer.weights->data.at(i) == doctest::Approx(w[i]));
      else
        CHECK(layer.weights->data.at(i) == 0.0);
    }
  }
}

TEST_CASE("checkpoint round-trips byte for byte") {
  SparseNetwork net = small_net(5);
  CheckpointMeta meta;
  meta.epoch = 17;
  meta.rng_state = Rng(99).serialize();
  meta.dataset_spec = "synth:n=100,classes=2,dim=4,seed=1,stream=2,scale=0.35,noise=1";
  meta.eval_spec = "";
  const std::string p1 = temp_path("spfde_ckpt_a.spfd");
  const std::string p2 = temp_path("spfde_ckpt_b.spfd");
  save_checkpoint(net, meta, p1);
  LoadedCheckpoint loaded = load_checkpoint(p1);
  CHECK(loaded.meta.epoch == 17);
  CHECK(loaded.meta.rng_state == meta.rng_state);
  save_checkpoint(loaded.net, loaded.meta, p2);
  CHECK(slurp(p1) == slurp(p2));

  // Weights, masks, momentum round-trip losslessly.
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const MaskedLayer& a = net.layers()[li];
    const MaskedLayer& b = loaded.net.layers()[li];
    CHECK(a.weights->data.bit_equal(b.weights->data));
    CHECK(a.mask == b.mask);
    CHECK(a.bias->data.bit_equal(b.bias->data));
    CHECK(a.w_momentum.bit_equal(b.w_momentum));
    CHECK(a.frozen == b.frozen);
  }
}

TEST_CASE("checkpoint with frozen layers round-trips and drops momentum") {
  SparseNetwork net = small_net(6);
  for (std::size_t li : net.blocks()[0].layers) {
    net.layers()[li].frozen = true;
    net.layers()[li].release_momentum();
  }
  const std::string p1 = temp_path("spfde_ckpt_frozen.spfd");
  CheckpointMeta meta;
  meta.rng_state = Rng(1).serialize();
  meta.dataset_spec = "x:";
  save_checkpoint(net, meta, p1);
  LoadedCheckpoint loaded = load_checkpoint(p1);
  CHECK(loaded.net.layers()[0].frozen);
  CHECK(loaded.net.layers()[0].w_momentum.empty());
  const std::string p2 = temp_path("spfde_ckpt_frozen2.spfd");
  save_checkpoint(loaded.net, loaded.meta, p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("corrupted magic is a format error") {
  SparseNetwork net = small_net(7);
  CheckpointMeta meta;
  meta.rng_state = Rng(1).serialize();
  const std::string p = temp_path("spfde_ckpt_badmagic.spfd");
  save_checkpoint(net, meta, p);
  auto bytes = slurp(p);
  bytes[0] = 'X';
  spit(p, bytes);
  CHECK_THROWS_AS(load_checkpoint(p), DataError);
}

TEST_CASE("truncated checkpoint is a format error naming an offset") {
  SparseNetwork net = small_net(8);
  CheckpointMeta meta;
  meta.rng_state = Rng(1).serialize();
  const std::string p = temp_path("spfde_ckpt_trunc.spfd");
  save_checkpoint(net, meta, p);
  auto bytes = slurp(p);
  bytes.resize(bytes.size() / 2);
  spit(p, bytes);
  try {
    load_checkpoint(p);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("flipped payload byte fails the checksum") {
  SparseNetwork net = small_net(9);
  CheckpointMeta meta;
  meta.rng_state = Rng(1).serialize();
  const std::string p = temp_path("spfde_ckpt_crc.spfd");
  save_checkpoint(net, meta, p);
  auto bytes = slurp(p);
  bytes[bytes.size() / 2] ^= 0xFF;
  spit(p, bytes);
  CHECK_THROWS_AS(load_checkpoint(p), DataError);
}

TEST_CASE("recorded nnz equals the number of stored values") {
  SparseNetwork net = small_net(10);
  CheckpointMeta meta;
  meta.rng_state = Rng(1).serialize();
  const std::string p = temp_path("spfde_ckpt_nnz.spfd");
  save_checkpoint(net, meta, p);
  LoadedCheckpoint loaded = load_checkpoint(p);
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    // The loader reconstructs the mask from the stored indices; equality of
    // popcounts means header nnz == stored entry count.
    CHECK(loaded.net.layers()[li].nnz() == net.layers()[li].nnz());
  }
}

TEST_CASE("f64 networks refuse to serialize") {
  SparseNetwork net = SparseNetwork::init_random_sparse(
      ModelDesc::parse("mlp:4-4-2"), 0.0, 1, Precision::F64);
  CheckpointMeta meta;
  CHECK_THROWS_AS(save_checkpoint(net, meta, temp_path("nope.spfd")),
                  UsageError);
}

TEST_CASE("frozen layer digest is constant while others train") {
  SparseNetwork net = small_net(11);
  MaskedLayer& frozen = net.layers()[0];
  frozen.frozen = true;
  frozen.release_momentum();
  const std::string digest0 = layer_digest(frozen);

  Rng rng(3);
  for (int step = 0; step < 5; ++step) {
    // Twiddle the other layers the way the engine would.
    for (std::size_t li = 1; li < net.layers().size(); ++li) {
      MaskedLayer& l = net.layers()[li];
      for (std::size_t i = 0; i < l.weight_count(); ++i)
        if (l.mask[i]) l.weights->data.set(i, rng.uniform_real(-1, 1));
      apply_mask(l);
    }
    CHECK(layer_digest(frozen) == digest0);
  }
}

TEST_CASE("frozen blocks must form a prefix") {
  SparseNetwork net = small_net(12);
  net.layers()[1].frozen = true;  // block 1 frozen, block 0 not
  CHECK_THROWS_AS(net.check_frozen_prefix(), InternalError);
  net.layers()[1].frozen = false;
  net.layers()[0].frozen = true;
  CHECK_NOTHROW(net.check_frozen_prefix());
}

TEST_CASE("default block partition: one block per mlp layer") {
  SparseNetwork net = SparseNetwork::init_random_sparse(
      ModelDesc::parse("mlp:784-256-128-10"), 0.9, 1);
  REQUIRE(net.blocks().size() == 3);
  for (std::size_t b = 0; b < 3; ++b)
    CHECK(net.blocks()[b].layers == std::vector<std::size_t>{b});
  CHECK(net.layers()[0].target_sparsity == 0.0);  // first layer dense
  CHECK(net.layers()[1].target_sparsity == 0.9);
  CHECK(net.layers()[2].target_sparsity == 0.9);
}

TEST_CASE("default block partition: conv stages by equal width") {
  SparseNetwork net = SparseNetwork::init_random_sparse(
      ModelDesc::parse("cnn:3x8x8,conv4k3s1p1,relu,conv4k3s1p1,relu,"
                       "conv8k4s2p1,relu,flatten,fc10"),
      0.5, 1);
  REQUIRE(net.blocks().size() == 3);
  CHECK(net.blocks()[0].layers == std::vector<std::size_t>{0, 1});
  CHECK(net.blocks()[1].layers == std::vector<std::size_t>{2});
  CHECK(net.blocks()[2].layers == std::vector<std::size_t>{3});
}

TEST_CASE("explicit block sizes override the default partition") {
  SparseNetwork net = SparseNetwork::init_random_sparse(
      ModelDesc::parse("mlp:8-8-8-8-4"), 0.5, 1, Precision::F32, false,
      {2, 2});
  REQUIRE(net.blocks().size() == 2);
  CHECK(net.blocks()[0].layers == std::vector<std::size_t>{0, 1});
  CHECK(net.blocks()[1].layers == std::vector<std::size_t>{2, 3});
  CHECK_THROWS_AS(SparseNetwork::init_random_sparse(
                      ModelDesc::parse("mlp:8-8-4"), 0.5, 1, Precision::F32,
                      false, {3}),
                  ConfigError);
}

TEST_CASE("resnet32 preset has 32 parameterized layers in 4 stage blocks") {
  ModelDesc desc = ModelDesc::parse("resnet32");
  CHECK(desc.layer_count() == 32);
  SparseNetwork net = SparseNetwork::build(desc, 0.9, Precision::F32, false);
  REQUIRE(net.blocks().size() == 4);
  CHECK(net.blocks()[0].layers.size() == 11);
  CHECK(net.blocks()[1].layers.size() == 10);
  CHECK(net.blocks()[2].layers.size() == 10);
  CHECK(net.blocks()[3].layers.size() == 1);
}

TEST_CASE("dense_last exempts the classifier from masking") {
  SparseNetwork net = SparseNetwork::init_random_sparse(
      ModelDesc::parse("mlp:8-8-4"), 0.5, 1, Precision::F32, true);
  CHECK(net.layers().back().target_sparsity == 0.0);
  CHECK(net.layers().back().nnz() == net.layers().back().weight_count());
}

TEST_CASE("nonzero counts survive forward, backward, and sgd-style writes") {
  SparseNetwork net = small_net(13);
  std::vector<std::size_t> nnz_before;
  for (const MaskedLayer& l : net.layers()) nnz_before.push_back(l.nnz());

  Rng rng(5);
  Tensor x = Tensor::zeros({4, 10}, Precision::F32);
  for (std::size_t i = 0; i < x.size(); ++i) x.set(i, rng.uniform_real(-1, 1));
  std::vector<std::int32_t> labels{0, 1, 2, 3};
  TrainForward tf = net.train_forward(x, labels, 0);
  tf.tape.backward(tf.loss);
  for (MaskedLayer& l : net.layers()) {
    mask_gradient(l);
    for (std::size_t i = 0; i < l.weight_count(); ++i)
      if (l.mask[i])
        l.weights->data.set(i, l.weights->data.at(i) -
                                   0.1 * l.weights->grad().at(i));
    apply_mask(l);
  }
  for (std::size_t li = 0; li < net.layers().size(); ++li)
    CHECK(net.layers()[li].nnz() == nnz_before[li]);
}
