#pragma once

// Test-only reference implementations. Everything here is written directly
// from the mathematical definitions and stays independent of the library's
// compute paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "spfde/tensor.hpp"

namespace oracles {

// Plain triple loop, f64 accumulation.
inline std::vector<double> matmul(const std::vector<double>& x,
                                  const std::vector<double>& w,
                                  std::size_t m, std::size_t k,
                                  std::size_t n) {
  std::vector<double> y(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t kk = 0; kk < k; ++kk)
        y[i * n + j] += x[i * k + kk] * w[kk * n + j];
  return y;
}

struct ConvSpec {
  std::size_t batch, cin, h, w, cout, kh, kw, stride, pad;
  std::size_t out_h() const { return (h + 2 * pad - kh) / stride + 1; }
  std::size_t out_w() const { return (w + 2 * pad - kw) / stride + 1; }
};

// Direct 7-nested-loop cross-correlation, f64.
inline std::vector<double> conv2d(const std::vector<double>& x,
                                  const std::vector<double>& w,
                                  const std::vector<double>& bias,
                                  const ConvSpec& s) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  std::vector<double> y(s.batch * s.cout * oh * ow, 0.0);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t co = 0; co < s.cout; ++co)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < s.cin; ++ci)
            for (std::size_t u = 0; u < s.kh; ++u)
              for (std::size_t v = 0; v < s.kw; ++v) {
                const long long ih = static_cast<long long>(i * s.stride + u) -
                                     static_cast<long long>(s.pad);
                const long long iw = static_cast<long long>(j * s.stride + v) -
                                     static_cast<long long>(s.pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<long long>(s.h) ||
                    iw >= static_cast<long long>(s.w))
                  continue;
                acc += x[((b * s.cin + ci) * s.h + ih) * s.w + iw] *
                       w[((co * s.cin + ci) * s.kh + u) * s.kw + v];
              }
          y[((b * s.cout + co) * oh + i) * ow + j] = acc;
        }
  return y;
}

// Instrumented MAC count of the same loops, skipping masked weights:
// 2 FLOPs per multiply-accumulate actually performed.
inline double conv2d_flops(const std::vector<std::uint8_t>& mask,
                           const ConvSpec& s) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  double flops = 0.0;
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t co = 0; co < s.cout; ++co)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t ci = 0; ci < s.cin; ++ci)
            for (std::size_t u = 0; u < s.kh; ++u)
              for (std::size_t v = 0; v < s.kw; ++v)
                if (mask[((co * s.cin + ci) * s.kh + u) * s.kw + v])
                  flops += 2.0;
  (void)oh;
  return flops;
}

// Mean of -log softmax(logits)[label], long-double accumulation.
inline double cross_entropy(const std::vector<double>& logits,
                            const std::vector<std::int32_t>& labels,
                            std::size_t classes) {
  long double total = 0.0L;
  const std::size_t batch = labels.size();
  for (std::size_t i = 0; i < batch; ++i) {
    long double maxv = logits[i * classes];
    for (std::size_t c = 1; c < classes; ++c)
      maxv = std::max(maxv, static_cast<long double>(logits[i * classes + c]));
    long double denom = 0.0L;
    for (std::size_t c = 0; c < classes; ++c)
      denom += expl(logits[i * classes + c] - maxv);
    total += logl(denom) - (logits[i * classes + labels[i]] - maxv);
  }
  return static_cast<double>(total / batch);
}

// Central finite difference of `loss_of(theta)` w.r.t. one scalar.
inline double central_difference(const std::function<double(double)>& loss_of,
                                 double theta, double h) {
  return (loss_of(theta + h) - loss_of(theta - h)) / (2.0 * h);
}

// Forgetting events: count correct->incorrect transitions in a history.
inline int count_forgetting(const std::vector<int>& history) {
  int events = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i - 1] == 1 && history[i] == 0) ++events;
  return events;
}

// Pearson chi-square statistic against uniform expected counts.
inline double chi_square_uniform(const std::vector<std::size_t>& observed,
                                 double expected) {
  double stat = 0.0;
  for (std::size_t o : observed) {
    const double d = static_cast<double>(o) - expected;
    stat += d * d / expected;
  }
  return stat;
}

// chi2.ppf(0.99, df): statistic above these would reject uniformity at
// p < 0.01.
inline double chi2_crit_99(int df) {
  switch (df) {
    case 11: return 24.724970311318277;
    case 19: return 36.19086912927004;
    case 23: return 41.638398118858476;
    default: return -1.0;
  }
}

}  // namespace oracles
