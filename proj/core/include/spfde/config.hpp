#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spfde/freeze.hpp"
#include "spfde/sieve.hpp"
#include "spfde/tensor.hpp"

namespace spfde {

// Parsed run configuration. File format: UTF-8 key=value lines grouped by
// [section] headers; '#' starts a comment; unknown sections or keys are
// configuration errors.
struct RunConfig {
  // [run]
  int epochs = 0;
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  Precision precision = Precision::F32;
  int warmup_epochs = 0;

  // [dataset]
  std::string dataset_kind;  // synth | idx | cifar10
  std::size_t synth_train_n = 4000;
  std::size_t synth_test_n = 1000;
  std::size_t synth_classes = 10;
  std::size_t synth_dim = 784;
  double synth_scale = 0.35;
  double synth_noise = 1.0;
  std::uint64_t dataset_seed = 0;  // 0: derive from run seed
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::string> train_files, test_files;
  bool augment = false;
  bool normalize = true;

  // [model]
  std::string arch;
  std::vector<std::size_t> blocks;  // empty: default partition
  bool dense_last = false;

  // [dst]
  double sparsity = 0.0;
  int update_interval = 5;
  int search_end = 0;
  std::vector<std::pair<int, double>> grow_phases;

  // [freeze]
  FreezeScheme scheme = FreezeScheme::single_shot;
  std::optional<double> target_reduction;
  std::optional<int> start_epoch;
  double frozen_layer_fraction = 2.0 / 3.0;

  // [sieve]
  double sieve_p = 0.0;
  double sieve_update_ratio = 0.30;
  SieveShuffleMode sieve_shuffle = SieveShuffleMode::after_each_update;

  // [optimizer]
  double lr0 = 0.15;
  double lr_end = 4e-8;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_string(const std::string& text);

  std::uint64_t effective_dataset_seed() const {
    return dataset_seed ? dataset_seed : seed;
  }
  // Canonical dataset spec strings (see data.hpp).
  std::string train_spec() const;
  std::string test_spec() const;  // empty when no test split configured
  bool freezing_enabled() const {
    return target_reduction.has_value() || start_epoch.has_value();
  }
};

}  // namespace spfde
