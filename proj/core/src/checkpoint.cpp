#include "spfde/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "spfde/errors.hpp"

namespace spfde {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'F', 'D'};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back((v >> (8 * i)) & 0xFF);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back((v >> (8 * i)) & 0xFF);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> data)
      : data_(std::move(data)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw DataError("checkpoint: truncated reading " + std::string(what) +
                      " at offset " + std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return data_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data),
              static_cast<uInt>(n)));
}

}  // namespace

void save_checkpoint(const SparseNetwork& net, const CheckpointMeta& meta,
                     const std::string& path) {
  if (net.precision() != Precision::F32) {
    throw UsageError(
        "checkpoint: only f32 networks serialize (format stores f32 values)");
  }
  nlohmann::json blob;
  blob["arch"] = net.desc().arch;
  blob["precision"] = to_string(net.precision());
  blob["sparsity"] = net.model_sparsity();
  blob["dense_last"] = net.dense_last();
  blob["blocks"] = net.block_sizes();
  blob["dataset"] = meta.dataset_spec;
  blob["eval_dataset"] = meta.eval_spec;
  blob["epoch"] = meta.epoch;
  blob["rng"] = meta.rng_state;
  const std::string blob_str = blob.dump();

  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(blob_str.size()));
  w.bytes(blob_str.data(), blob_str.size());

  for (const MaskedLayer& layer : net.layers()) {
    w.u32(static_cast<std::uint32_t>(layer.name.size()));
    w.bytes(layer.name.data(), layer.name.size());
    w.u8(static_cast<std::uint8_t>(layer.kind));
    const auto& shape = layer.weights->data.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
    w.u8(layer.frozen ? 1 : 0);

    std::vector<std::uint32_t> indices;
    indices.reserve(layer.nnz());
    for (std::size_t i = 0; i < layer.mask.size(); ++i)
      if (layer.mask[i]) indices.push_back(static_cast<std::uint32_t>(i));
    w.u64(indices.size());
    for (std::uint32_t idx : indices) w.u32(idx);
    auto wdata = layer.weights->data.data<float>();
    for (std::uint32_t idx : indices) w.f32(wdata[idx]);
    for (float b : layer.bias->data.data<float>()) w.f32(b);
    if (!layer.frozen) {
      auto wm = layer.w_momentum.data<float>();
      for (std::uint32_t idx : indices) w.f32(wm[idx]);
      for (float b : layer.b_momentum.data<float>()) w.f32(b);
    }
  }

  const std::uint32_t crc = crc_of(w.buffer().data(), w.buffer().size());
  w.u32(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open '" + path + "' for write");
  out.write(reinterpret_cast<const char*>(w.buffer().data()),
            static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw DataError("checkpoint: short write to '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 12) {
    throw DataError("checkpoint: truncated file (" +
                    std::to_string(bytes.size()) + " bytes) at offset 0");
  }
  // Trailing CRC covers everything before it.
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<std::uint32_t>(bytes[bytes.size() - 4 + i])
                  << (8 * i);
  const std::uint32_t actual_crc = crc_of(bytes.data(), bytes.size() - 4);
  if (stored_crc != actual_crc) {
    throw DataError("checkpoint: CRC mismatch at offset " +
                    std::to_string(bytes.size() - 4));
  }
  bytes.resize(bytes.size() - 4);

  ByteReader r(std::move(bytes));
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic at offset 0");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version) + " at offset 4");
  }
  const std::uint32_t blob_len = r.u32("description length");
  const std::string blob_str = r.str(blob_len, "description blob");

  nlohmann::json blob;
  try {
    blob = nlohmann::json::parse(blob_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad description blob: ") +
                    e.what());
  }

  LoadedCheckpoint out{
      SparseNetwork::build(
          ModelDesc::parse(blob.at("arch").get<std::string>()),
          blob.at("sparsity").get<double>(),
          precision_from_string(blob.at("precision").get<std::string>()),
          blob.at("dense_last").get<bool>(),
          blob.at("blocks").get<std::vector<std::size_t>>()),
      CheckpointMeta{}};
  out.meta.epoch = blob.at("epoch").get<std::uint64_t>();
  out.meta.rng_state = blob.at("rng").get<std::string>();
  out.meta.dataset_spec = blob.at("dataset").get<std::string>();
  out.meta.eval_spec = blob.at("eval_dataset").get<std::string>();

  for (MaskedLayer& layer : out.net.layers()) {
    const std::uint32_t name_len = r.u32("layer name length");
    const std::string name = r.str(name_len, "layer name");
    if (name != layer.name) {
      throw DataError("checkpoint: layer name '" + name +
                      "' does not match architecture layer '" + layer.name +
                      "' at offset " + std::to_string(r.offset()));
    }
    const std::uint8_t kind = r.u8("layer kind");
    if (kind != static_cast<std::uint8_t>(layer.kind))
      throw DataError("checkpoint: layer kind mismatch for '" + name + "'");
    const std::uint32_t rank = r.u32("shape rank");
    const auto& shape = layer.weights->data.shape();
    if (rank != shape.size())
      throw DataError("checkpoint: shape rank mismatch for '" + name + "'");
    for (std::size_t d = 0; d < rank; ++d) {
      if (r.u32("shape dim") != shape[d])
        throw DataError("checkpoint: shape mismatch for '" + name + "'");
    }
    layer.frozen = r.u8("frozen flag") != 0;

    const std::uint64_t nnz = r.u64("nnz");
    const std::size_t size = layer.weight_count();
    if (nnz > size)
      throw DataError("checkpoint: nnz " + std::to_string(nnz) +
                      " exceeds layer size " + std::to_string(size));
    std::vector<std::uint32_t> indices(nnz);
    std::uint32_t prev = 0;
    for (std::size_t i = 0; i < nnz; ++i) {
      indices[i] = r.u32("mask index");
      if (indices[i] >= size || (i > 0 && indices[i] <= prev)) {
        throw DataError("checkpoint: bad mask index at offset " +
                        std::to_string(r.offset() - 4));
      }
      prev = indices[i];
    }
    std::fill(layer.mask.begin(), layer.mask.end(), 0);
    for (std::uint32_t idx : indices) layer.mask[idx] = 1;

    auto wdata = layer.weights->data.data<float>();
    for (std::uint32_t idx : indices) wdata[idx] = r.f32("weight value");
    auto bdata = layer.bias->data.data<float>();
    for (std::size_t i = 0; i < bdata.size(); ++i) bdata[i] = r.f32("bias");
    if (layer.frozen) {
      layer.release_momentum();
    } else {
      layer.alloc_momentum();
      auto wm = layer.w_momentum.data<float>();
      for (std::uint32_t idx : indices) wm[idx] = r.f32("weight momentum");
      auto bm = layer.b_momentum.data<float>();
      for (std::size_t i = 0; i < bm.size(); ++i)
        bm[i] = r.f32("bias momentum");
    }
  }
  if (r.remaining() != 0) {
    throw DataError("checkpoint: " + std::to_string(r.remaining()) +
                    " trailing bytes at offset " + std::to_string(r.offset()));
  }
  out.net.check_frozen_prefix();
  return out;
}

}  // namespace spfde
