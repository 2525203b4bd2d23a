#pragma once

// Scalar compute kernels behind the autodiff ops. All loops have a fixed
// accumulation order per output element, so results are bitwise stable
// across runs and across OpenMP thread counts (each output element is
// written by exactly one thread).

#include <cstddef>

namespace spfde::kernels {

// c[m,n] = a[m,k] * b[k,n]
template <class T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = arow[kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[m,k] += a[m,n] * b[k,n]^T   (rows of a dotted with rows of b)
template <class T>
void matmul_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n,
                   std::size_t k) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[kk] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <class T>
void matmul_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                   std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long kk = 0; kk < static_cast<long long>(k); ++kk) {
    T* crow = c + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T aik = a[i * k + kk];
      const T* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

struct ConvDims {
  std::size_t batch, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

// Cross-correlation: y[b,co,oh,ow] = sum_{ci,i,j} x[b,ci,oh*s+i-p,ow*s+j-p] * w[co,ci,i,j]
template <class T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y,
                    const ConvDims& d) {
#pragma omp parallel for schedule(static)
  for (long long bb = 0; bb < static_cast<long long>(d.batch); ++bb) {
    const T* xb = x + bb * d.cin * d.h * d.w;
    T* yb = y + bb * d.cout * d.out_h * d.out_w;
    for (std::size_t co = 0; co < d.cout; ++co) {
      const T* wc = w + co * d.cin * d.kh * d.kw;
      for (std::size_t oh = 0; oh < d.out_h; ++oh) {
        for (std::size_t ow = 0; ow < d.out_w; ++ow) {
          T acc = bias ? bias[co] : T(0);
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            const T* xc = xb + ci * d.h * d.w;
            const T* wk = wc + ci * d.kh * d.kw;
            for (std::size_t i = 0; i < d.kh; ++i) {
              const long long ih =
                  static_cast<long long>(oh * d.stride + i) -
                  static_cast<long long>(d.pad);
              if (ih < 0 || ih >= static_cast<long long>(d.h)) continue;
              for (std::size_t j = 0; j < d.kw; ++j) {
                const long long iw =
                    static_cast<long long>(ow * d.stride + j) -
                    static_cast<long long>(d.pad);
                if (iw < 0 || iw >= static_cast<long long>(d.w)) continue;
                acc += xc[ih * d.w + iw] * wk[i * d.kw + j];
              }
            }
          }
          yb[(co * d.out_h + oh) * d.out_w + ow] = acc;
        }
      }
    }
  }
}

// dx[b,ci,ih,iw] += sum dy[b,co,oh,ow] * w[co,ci,i,j]; one thread per batch row.
template <class T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, const ConvDims& d) {
#pragma omp parallel for schedule(static)
  for (long long bb = 0; bb < static_cast<long long>(d.batch); ++bb) {
    const T* dyb = dy + bb * d.cout * d.out_h * d.out_w;
    T* dxb = dx + bb * d.cin * d.h * d.w;
    for (std::size_t co = 0; co < d.cout; ++co) {
      const T* wc = w + co * d.cin * d.kh * d.kw;
      for (std::size_t oh = 0; oh < d.out_h; ++oh) {
        for (std::size_t ow = 0; ow < d.out_w; ++ow) {
          const T g = dyb[(co * d.out_h + oh) * d.out_w + ow];
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            T* dxc = dxb + ci * d.h * d.w;
            const T* wk = wc + ci * d.kh * d.kw;
            for (std::size_t i = 0; i < d.kh; ++i) {
              const long long ih =
                  static_cast<long long>(oh * d.stride + i) -
                  static_cast<long long>(d.pad);
              if (ih < 0 || ih >= static_cast<long long>(d.h)) continue;
              for (std::size_t j = 0; j < d.kw; ++j) {
                const long long iw =
                    static_cast<long long>(ow * d.stride + j) -
                    static_cast<long long>(d.pad);
                if (iw < 0 || iw >= static_cast<long long>(d.w)) continue;
                dxc[ih * d.w + iw] += g * wk[i * d.kw + j];
              }
            }
          }
        }
      }
    }
  }
}

// dw[co,ci,i,j] += sum_b,oh,ow dy[b,co,oh,ow] * x[...]; one thread per out channel.
template <class T>
void conv2d_backward_weight(const T* dy, const T* x, T* dw, const ConvDims& d) {
#pragma omp parallel for schedule(static)
  for (long long co = 0; co < static_cast<long long>(d.cout); ++co) {
    T* dwc = dw + co * d.cin * d.kh * d.kw;
    for (std::size_t bb = 0; bb < d.batch; ++bb) {
      const T* xb = x + bb * d.cin * d.h * d.w;
      const T* dyb = dy + (bb * d.cout + co) * d.out_h * d.out_w;
      for (std::size_t oh = 0; oh < d.out_h; ++oh) {
        for (std::size_t ow = 0; ow < d.out_w; ++ow) {
          const T g = dyb[oh * d.out_w + ow];
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            const T* xc = xb + ci * d.h * d.w;
            T* dwk = dwc + ci * d.kh * d.kw;
            for (std::size_t i = 0; i < d.kh; ++i) {
              const long long ih =
                  static_cast<long long>(oh * d.stride + i) -
                  static_cast<long long>(d.pad);
              if (ih < 0 || ih >= static_cast<long long>(d.h)) continue;
              for (std::size_t j = 0; j < d.kw; ++j) {
                const long long iw =
                    static_cast<long long>(ow * d.stride + j) -
                    static_cast<long long>(d.pad);
                if (iw < 0 || iw >= static_cast<long long>(d.w)) continue;
                dwk[i * d.kw + j] += g * xc[ih * d.w + iw];
              }
            }
          }
        }
      }
    }
  }
}

// db[co] += sum over batch and spatial dims of dy.
template <class T>
void conv2d_backward_bias(const T* dy, T* db, const ConvDims& d) {
  for (std::size_t co = 0; co < d.cout; ++co) {
    T acc = T(0);
    for (std::size_t bb = 0; bb < d.batch; ++bb) {
      const T* dyb = dy + (bb * d.cout + co) * d.out_h * d.out_w;
      for (std::size_t s = 0; s < d.out_h * d.out_w; ++s) acc += dyb[s];
    }
    db[co] += acc;
  }
}

}  // namespace spfde::kernels
