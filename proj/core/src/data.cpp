#include "spfde/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "spfde/errors.hpp"

namespace spfde {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarRecordsPerFile = 10000;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) |
         static_cast<std::uint32_t>(p[3]);
}

}  // namespace

void Dataset::compute_normalization() {
  const std::size_t n = size(), c = channels(), hw = height() * width();
  channel_mean.assign(c, 0.0f);
  channel_std.assign(c, 1.0f);
  if (n == 0) return;
  auto px = images.data<float>();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* base = px.data() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        sum += base[k];
        sq += static_cast<double>(base[k]) * base[k];
      }
    }
    const double count = static_cast<double>(n * hw);
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    channel_mean[ch] = static_cast<float>(mean);
    channel_std[ch] = static_cast<float>(std::max(std::sqrt(var), 1e-8));
  }
}

void Dataset::identity_normalization() {
  channel_mean.assign(channels(), 0.0f);
  channel_std.assign(channels(), 1.0f);
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  const auto img = read_file(images_path);
  if (img.size() < 16)
    throw DataError("idx: '" + images_path + "' truncated header");
  if (be32(img.data()) != kIdxImagesMagic) {
    throw DataError("idx: '" + images_path + "' has magic " +
                    std::to_string(be32(img.data())) +
                    ", expected 2051 (0x00000803)");
  }
  const std::size_t n = be32(img.data() + 4);
  const std::size_t rows = be32(img.data() + 8);
  const std::size_t cols = be32(img.data() + 12);
  if (img.size() != 16 + n * rows * cols) {
    throw DataError("idx: '" + images_path + "' holds " +
                    std::to_string(img.size() - 16) + " pixel bytes, header says " +
                    std::to_string(n * rows * cols));
  }

  const auto lab = read_file(labels_path);
  if (lab.size() < 8)
    throw DataError("idx: '" + labels_path + "' truncated header");
  if (be32(lab.data()) != kIdxLabelsMagic) {
    throw DataError("idx: '" + labels_path + "' has magic " +
                    std::to_string(be32(lab.data())) +
                    ", expected 2049 (0x00000801)");
  }
  const std::size_t n_labels = be32(lab.data() + 4);
  if (lab.size() != 8 + n_labels)
    throw DataError("idx: '" + labels_path + "' label bytes do not match header");
  if (n_labels != n) {
    throw DataError("idx: " + std::to_string(n) + " images but " +
                    std::to_string(n_labels) + " labels");
  }

  Dataset ds;
  std::vector<float> pixels(n * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.images = Tensor::from_f32({n, 1, rows, cols}, std::move(pixels));
  ds.labels.resize(n);
  std::int32_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  ds.compute_normalization();
  return ds;
}

Dataset load_cifar10_binary(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("cifar10: no batch files given");
  std::vector<std::uint8_t> all;
  for (const std::string& p : paths) {
    auto bytes = read_file(p);
    if (bytes.size() != kCifarRecord * kCifarRecordsPerFile) {
      throw DataError("cifar10: '" + p + "' is " +
                      std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(kCifarRecord * kCifarRecordsPerFile));
    }
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  const std::size_t n = all.size() / kCifarRecord;
  Dataset ds;
  std::vector<float> pixels(n * 3072);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = all.data() + i * kCifarRecord;
    if (rec[0] > 9)
      throw DataError("cifar10: record " + std::to_string(i) + " has label " +
                      std::to_string(rec[0]) + " outside [0,9]");
    ds.labels[i] = rec[0];
    for (std::size_t k = 0; k < 3072; ++k)
      pixels[i * 3072 + k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
  ds.images = Tensor::from_f32({n, 3, 32, 32}, std::move(pixels));
  ds.classes = 10;
  ds.compute_normalization();
  return ds;
}

Dataset synth_blobs(std::size_t n, std::size_t classes, std::size_t dim,
                    std::uint64_t seed, std::uint64_t sample_stream,
                    double mean_scale, double noise) {
  if (classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (dim == 0) throw ConfigError("synth: dim must be positive");

  Rng mean_rng = Rng::derive(seed, 0xB10B5);
  std::vector<double> means(classes * dim);
  for (double& m : means) m = mean_rng.normal() * mean_scale;

  Rng srng = Rng::derive(seed, 0xDA7A00 + sample_stream);
  std::vector<float> pixels(n * dim);
  Dataset ds;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;  // balanced within +-1
    ds.labels[i] = static_cast<std::int32_t>(label);
    const double* mu = means.data() + label * dim;
    float* px = pixels.data() + i * dim;
    for (std::size_t d = 0; d < dim; ++d)
      px[d] = static_cast<float>(mu[d] + srng.normal() * noise);
  }
  ds.images = Tensor::from_f32({n, dim, 1, 1}, std::move(pixels));
  ds.classes = classes;
  ds.identity_normalization();
  return ds;
}

namespace {

std::map<std::string, std::string> parse_kv(const std::string& body) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos)
      throw DataError("dataset spec: bad entry '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

std::vector<std::string> split_paths(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) out.push_back(item);
  return out;
}

}  // namespace

std::string make_synth_spec(std::size_t n, std::size_t classes,
                            std::size_t dim, std::uint64_t seed,
                            std::uint64_t stream, double mean_scale,
                            double noise) {
  std::ostringstream os;
  os << "synth:n=" << n << ",classes=" << classes << ",dim=" << dim
     << ",seed=" << seed << ",stream=" << stream << ",scale=" << mean_scale
     << ",noise=" << noise;
  return os.str();
}

Dataset load_dataset_spec(const std::string& spec) {
  auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw DataError("dataset spec: missing kind in '" + spec + "'");
  const std::string kind = spec.substr(0, colon);
  auto kv = parse_kv(spec.substr(colon + 1));
  if (kind == "synth") {
    return synth_blobs(std::stoull(kv.at("n")), std::stoull(kv.at("classes")),
                       std::stoull(kv.at("dim")), std::stoull(kv.at("seed")),
                       std::stoull(kv.at("stream")), std::stod(kv.at("scale")),
                       std::stod(kv.at("noise")));
  }
  if (kind == "idx") return load_idx(kv.at("images"), kv.at("labels"));
  if (kind == "cifar10")
    return load_cifar10_binary(split_paths(kv.at("files")));
  throw DataError("dataset spec: unknown kind '" + kind + "'");
}

std::size_t dataset_spec_size(const std::string& spec) {
  auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw DataError("dataset spec: missing kind in '" + spec + "'");
  const std::string kind = spec.substr(0, colon);
  auto kv = parse_kv(spec.substr(colon + 1));
  if (kind == "synth") return std::stoull(kv.at("n"));
  if (kind == "idx") {
    auto bytes = read_file(kv.at("labels"));
    if (bytes.size() < 8 || be32(bytes.data()) != kIdxLabelsMagic)
      throw DataError("idx: bad label file header");
    return be32(bytes.data() + 4);
  }
  if (kind == "cifar10") {
    std::size_t n = 0;
    for (const auto& p : split_paths(kv.at("files"))) {
      const auto sz = std::filesystem::file_size(p);
      if (sz % kCifarRecord != 0)
        throw DataError("cifar10: '" + p + "' size not a record multiple");
      n += sz / kCifarRecord;
    }
    return n;
  }
  throw DataError("dataset spec: unknown kind '" + kind + "'");
}

BatchStream::BatchStream(const Dataset& dataset,
                         std::span<const std::uint32_t> partial,
                         std::size_t batch_size, std::uint64_t epoch_seed,
                         bool augment, bool normalize)
    : dataset_(dataset),
      order_(partial.begin(), partial.end()),
      batch_size_(batch_size),
      rng_(epoch_seed),
      augment_(augment && dataset.height() > 1 && dataset.width() > 1),
      normalize_(normalize) {
  if (batch_size_ == 0) throw ConfigError("batch_size must be positive");
  rng_.shuffle(order_);
}

std::size_t BatchStream::batch_count() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t take = std::min(batch_size_, order_.size() - cursor_);
  const std::size_t c = dataset_.channels(), h = dataset_.height(),
                    w = dataset_.width();
  const std::size_t sample_elems = c * h * w;
  Batch batch;
  batch.images = Tensor::zeros({take, c, h, w}, Precision::F32);
  batch.labels.resize(take);
  batch.indices.resize(take);
  auto dst = batch.images.data<float>();
  auto src = dataset_.images.data<float>();
  for (std::size_t i = 0; i < take; ++i) {
    const std::uint32_t sample = order_[cursor_ + i];
    batch.indices[i] = sample;
    batch.labels[i] = dataset_.labels[sample];
    const float* s = src.data() + sample * sample_elems;
    float* d = dst.data() + i * sample_elems;
    if (!augment_) {
      std::memcpy(d, s, sample_elems * sizeof(float));
    } else {
      // pad-4 random crop + horizontal flip
      const bool flip = rng_.uniform_index(2) == 1;
      const long long dy = static_cast<long long>(rng_.uniform_index(9)) - 4;
      const long long dx = static_cast<long long>(rng_.uniform_index(9)) - 4;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const long long sy = static_cast<long long>(y) + dy;
            long long sx = static_cast<long long>(flip ? w - 1 - x : x) + dx;
            float v = 0.0f;
            if (sy >= 0 && sy < static_cast<long long>(h) && sx >= 0 &&
                sx < static_cast<long long>(w)) {
              v = s[(ch * h + sy) * w + sx];
            }
            d[(ch * h + y) * w + x] = v;
          }
        }
      }
    }
    if (normalize_ && !dataset_.channel_mean.empty()) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float mean = dataset_.channel_mean[ch];
        const float inv = 1.0f / dataset_.channel_std[ch];
        float* base = d + ch * h * w;
        for (std::size_t k = 0; k < h * w; ++k)
          base[k] = (base[k] - mean) * inv;
      }
    }
  }
  cursor_ += take;
  return batch;
}

}  // namespace spfde
