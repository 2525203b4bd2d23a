#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spfde/model.hpp"
#include "spfde/tensor.hpp"

namespace spfde {

// Fraction of the intermediate layer's top-|w| nonzero positions that are
// still nonzero in the final layer. K = round(top_fraction * nnz); ties at
// the K-th magnitude keep the lower flat index. With `symmetric` the final
// layer is also reduced to its top fraction before intersecting.
double structural_similarity(const MaskedLayer& intermediate,
                             const MaskedLayer& final_layer,
                             double top_fraction = 0.5,
                             bool symmetric = false);

// Linear centered kernel alignment between activation matrices [n, p]:
// ||Y^T X||_F^2 / (||X^T X||_F * ||Y^T Y||_F) after centering columns.
// Computed in f64. Zero-variance input is an error.
double linear_cka(const Tensor& x, const Tensor& y);

struct GradNormEntry {
  std::string layer;
  double norm = 0.0;
};

// Euclidean norm of each active layer's masked weight gradient on one
// batch. Frozen layers are skipped.
std::vector<GradNormEntry> gradient_norms(SparseNetwork& net,
                                          const Tensor& images,
                                          std::span<const std::int32_t> labels);

}  // namespace spfde
