#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spfde/rng.hpp"
#include "spfde/tensor.hpp"

namespace spfde {

struct Dataset {
  Tensor images;  // [n, C, H, W], f32, scaled to [0,1]
  std::vector<std::int32_t> labels;
  std::size_t classes = 0;
  std::vector<float> channel_mean;  // per-channel normalization
  std::vector<float> channel_std;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  // Dataset-wide per-channel mean/std (population std; floor 1e-8).
  void compute_normalization();
  void identity_normalization();
};

// Big-endian IDX pair: images magic 0x00000803, labels magic 0x00000801.
// Bytes scale to [0,1].
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

// CIFAR-10 binary batches: files of exactly 10000 records x 3073 bytes
// (1 label byte + 3072 channel-major pixels).
Dataset load_cifar10_binary(const std::vector<std::string>& paths);

// Seeded Gaussian class clusters; images shaped [n, dim, 1, 1]. Class means
// depend on the seed only, so different sample streams (train/test) share
// the same clusters.
Dataset synth_blobs(std::size_t n, std::size_t classes, std::size_t dim,
                    std::uint64_t seed, std::uint64_t sample_stream = 0,
                    double mean_scale = 0.35, double noise = 1.0);

// Canonical "kind:key=value,..." spec strings, embedded in checkpoints so
// analysis tools can rebuild the evaluation data.
std::string make_synth_spec(std::size_t n, std::size_t classes,
                            std::size_t dim, std::uint64_t seed,
                            std::uint64_t stream, double mean_scale,
                            double noise);
Dataset load_dataset_spec(const std::string& spec);

// Sample count without materializing the data (headers / file sizes only).
std::size_t dataset_spec_size(const std::string& spec);

struct Batch {
  Tensor images;
  std::vector<std::int32_t> labels;
  std::vector<std::uint32_t> indices;  // original dataset sample ids
};

// Deterministic epoch iteration over the partial set: a seeded permutation,
// full batches plus one ragged tail. Augmentation (pad-4 random crop +
// horizontal flip) applies only when enabled and the images are spatial.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, std::span<const std::uint32_t> partial,
              std::size_t batch_size, std::uint64_t epoch_seed,
              bool augment = false, bool normalize = true);

  std::optional<Batch> next();
  std::size_t batch_count() const;

 private:
  const Dataset& dataset_;
  std::vector<std::uint32_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  Rng rng_;
  bool augment_ = false;
  bool normalize_ = true;
};

}  // namespace spfde
