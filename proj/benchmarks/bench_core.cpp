// Microbenchmarks for the hot paths: dense kernels, structure updates, and
// whole training epochs with and without a frozen prefix. The epoch pair
// gives a quick local read on the freezing speedup.

#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "spfde/autodiff.hpp"
#include "spfde/config.hpp"
#include "spfde/data.hpp"
#include "spfde/dst.hpp"
#include "spfde/model.hpp"
#include "spfde/rng.hpp"

using namespace spfde;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape), Precision::F32);
  for (std::size_t i = 0; i < t.size(); ++i)
    t.set(i, rng.uniform_real(-1.0, 1.0));
  return t;
}

void BM_affine_forward(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor x = random_tensor({64, n}, 1);
  Tensor w = random_tensor({n, n}, 2);
  Tensor b = random_tensor({n}, 3);
  for (auto _ : state) {
    Tensor y = affine_forward(x, w, b);
    benchmark::DoNotOptimize(y.data<float>().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * 64 * n * n);
}
BENCHMARK(BM_affine_forward)->Arg(256)->Arg(512);

void BM_conv2d_forward(benchmark::State& state) {
  Tensor x = random_tensor({8, 16, 16, 16}, 1);
  Tensor w = random_tensor({16, 16, 3, 3}, 2);
  Tensor b = random_tensor({16}, 3);
  for (auto _ : state) {
    Tensor y = conv2d_forward(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.data<float>().data());
  }
}
BENCHMARK(BM_conv2d_forward);

void BM_structure_update(benchmark::State& state) {
  DstSchedule sched = DstSchedule::make(5, 1000, {{0, 0.05}}, 0.9);
  SparseNetwork net = SparseNetwork::init_random_sparse(
      ModelDesc::parse("mlp:784-256-128-10"), 0.9, 7);
  Rng rng(3);
  int epoch = 0;
  for (auto _ : state) {
    structure_update(net, epoch, sched, rng);
    epoch += 5;
    if (epoch >= 1000) epoch = 0;
  }
}
BENCHMARK(BM_structure_update);

// One full training epoch of the desk MLP, frozen prefix vs none.
void bench_epoch(benchmark::State& state, bool freeze_prefix) {
  Dataset ds = synth_blobs(1024, 10, 784, 5);
  SparseNetwork net = SparseNetwork::init_random_sparse(
      ModelDesc::parse("mlp:784-256-128-10"), 0.9, 9);
  if (freeze_prefix) {
    for (std::size_t li : net.blocks()[0].layers) {
      net.layers()[li].frozen = true;
      net.layers()[li].release_momentum();
    }
  }
  const std::size_t first_active = net.first_unfrozen_block();
  std::vector<std::uint32_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0u);
  std::uint64_t epoch = 0;
  for (auto _ : state) {
    BatchStream stream(ds, all, 64, mix_seed(11, epoch++));
    while (auto batch = stream.next()) {
      for (MaskedLayer& l : net.layers()) {
        if (l.frozen) continue;
        l.weights->zero_grad();
        l.bias->zero_grad();
      }
      TrainForward tf =
          net.train_forward(batch->images, batch->labels, first_active);
      tf.tape.backward(tf.loss);
      for (MaskedLayer& l : net.layers()) {
        if (l.frozen) continue;
        mask_gradient(l);
        for (std::size_t i = 0; i < l.weight_count(); ++i)
          if (l.mask[i])
            l.weights->data.set(
                i, l.weights->data.at(i) - 0.01 * l.weights->grad().at(i));
        apply_mask(l);
      }
    }
  }
}

void BM_epoch_baseline(benchmark::State& state) { bench_epoch(state, false); }
void BM_epoch_frozen_prefix(benchmark::State& state) {
  bench_epoch(state, true);
}
BENCHMARK(BM_epoch_baseline)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_epoch_frozen_prefix)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
