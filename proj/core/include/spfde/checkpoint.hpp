#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spfde/model.hpp"

namespace spfde {

// Run state carried alongside the network so that save -> load -> save is
// byte-identical and a resumed run is bitwise the same as an uninterrupted
// one.
struct CheckpointMeta {
  std::uint64_t epoch = 0;
  std::string rng_state;     // Rng::serialize()
  std::string dataset_spec;  // training data, "kind:key=value,..."
  std::string eval_spec;     // held-out data for analysis; may be empty
};

// Binary layout (all integers little-endian):
//   "SPFD" | u32 version | u32 blob_len | blob (UTF-8 JSON)
//   per layer:
//     u32 name_len | name | u8 kind | u32 rank | u32 dims[rank] | u8 frozen
//     u64 nnz | u32 indices[nnz] (sorted) | f32 values[nnz]
//     f32 bias[out]
//     if !frozen: f32 w_momentum[nnz] | f32 b_momentum[out]
//   u32 crc32 of all preceding bytes
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const SparseNetwork& net, const CheckpointMeta& meta,
                     const std::string& path);

struct LoadedCheckpoint {
  SparseNetwork net;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace spfde
