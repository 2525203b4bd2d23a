#include "spfde/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "spfde/errors.hpp"

namespace spfde {

namespace {

// Top-K nonzero positions by (|w| desc, index asc).
std::vector<std::uint32_t> top_positions(const MaskedLayer& layer,
                                         std::size_t k) {
  struct Entry {
    double mag;
    std::uint32_t idx;
  };
  std::vector<Entry> entries;
  const Tensor& w = layer.weights->data;
  for (std::size_t i = 0; i < layer.mask.size(); ++i) {
    if (layer.mask[i])
      entries.push_back({std::fabs(w.at(i)), static_cast<std::uint32_t>(i)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag) return a.mag > b.mag;
    return a.idx < b.idx;
  });
  entries.resize(std::min(k, entries.size()));
  std::vector<std::uint32_t> out;
  out.reserve(entries.size());
  for (const Entry& e : entries) out.push_back(e.idx);
  return out;
}

}  // namespace

double structural_similarity(const MaskedLayer& intermediate,
                             const MaskedLayer& final_layer,
                             double top_fraction, bool symmetric) {
  if (intermediate.weights->data.shape() != final_layer.weights->data.shape())
    throw UsageError("structural_similarity: layer shapes differ");
  if (top_fraction <= 0.0 || top_fraction > 1.0)
    throw ConfigError("structural_similarity: top_fraction must be in (0,1]");

  const std::size_t k = static_cast<std::size_t>(std::llround(
      top_fraction * static_cast<double>(intermediate.nnz())));
  if (k == 0) return 1.0;
  const auto top = top_positions(intermediate, k);

  std::vector<std::uint8_t> target(final_layer.mask.size(), 0);
  if (symmetric) {
    const std::size_t kf = static_cast<std::size_t>(
        std::llround(top_fraction * static_cast<double>(final_layer.nnz())));
    for (std::uint32_t i : top_positions(final_layer, kf)) target[i] = 1;
  } else {
    for (std::size_t i = 0; i < final_layer.mask.size(); ++i)
      target[i] = final_layer.mask[i];
  }

  std::size_t common = 0;
  for (std::uint32_t i : top) common += target[i] ? 1 : 0;
  return static_cast<double>(common) / static_cast<double>(k);
}

double linear_cka(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2)
    throw UsageError("cka: expected [n, features] matrices");
  if (x.dim(0) != y.dim(0))
    throw UsageError("cka: row counts differ");
  const std::size_t n = x.dim(0);
  if (n < 2) throw UsageError("cka: need at least 2 rows");

  auto centered = [&](const Tensor& t) {
    const std::size_t p = t.dim(1);
    std::vector<double> m(t.dim(0) * p);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = t.at(i);
    for (std::size_t j = 0; j < p; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < t.dim(0); ++i) mean += m[i * p + j];
      mean /= static_cast<double>(t.dim(0));
      for (std::size_t i = 0; i < t.dim(0); ++i) m[i * p + j] -= mean;
    }
    return m;
  };

  const std::size_t p1 = x.dim(1), p2 = y.dim(1);
  std::vector<double> xc = centered(x);
  std::vector<double> yc = centered(y);

  auto cross_fro2 = [&](const std::vector<double>& a, std::size_t pa,
                        const std::vector<double>& b, std::size_t pb) {
    // ||A^T B||_F^2 for A [n,pa], B [n,pb]
    std::vector<double> prod(pa * pb, 0.0);
    kernels::matmul_tn_acc(a.data(), b.data(), prod.data(), n, pa, pb);
    double s = 0.0;
    for (double v : prod) s += v * v;
    return s;
  };

  const double num = cross_fro2(yc, p2, xc, p1);
  const double den_x = std::sqrt(cross_fro2(xc, p1, xc, p1));
  const double den_y = std::sqrt(cross_fro2(yc, p2, yc, p2));
  if (den_x == 0.0 || den_y == 0.0)
    throw DataError("cka: zero-variance input, similarity undefined");
  return num / (den_x * den_y);
}

std::vector<GradNormEntry> gradient_norms(SparseNetwork& net,
                                          const Tensor& images,
                                          std::span<const std::int32_t> labels) {
  const std::size_t first_active = net.first_unfrozen_block();
  if (first_active >= net.blocks().size())
    throw UsageError("gradient_norms: no unfrozen layers");
  for (MaskedLayer& layer : net.layers()) {
    if (layer.frozen) continue;
    layer.weights->zero_grad();
    layer.bias->zero_grad();
  }
  TrainForward tf = net.train_forward(images, labels, first_active);
  tf.tape.backward(tf.loss);

  std::vector<GradNormEntry> out;
  for (MaskedLayer& layer : net.layers()) {
    if (layer.frozen) continue;
    mask_gradient(layer);
    const Tensor& g = layer.weights->grad();
    double sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = g.at(i);
      sq += v * v;
    }
    out.push_back({layer.name, std::sqrt(sq)});
  }
  return out;
}

}  // namespace spfde
