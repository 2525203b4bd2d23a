#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace spfde {

enum class Precision : std::uint8_t { F32 = 0, F64 = 1 };

inline std::size_t scalar_bytes(Precision p) {
  return p == Precision::F32 ? 4 : 8;
}

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

// Dense row-major n-d array of f32 or f64 scalars. The precision is a
// runtime tag so the training stack stays non-templated; compute kernels
// dispatch on it once per op.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, Precision p);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     Precision p);
  static Tensor scalar(double value, Precision p);
  static Tensor from_f32(std::vector<std::size_t> shape,
                         std::vector<float> values);
  static Tensor from_f64(std::vector<std::size_t> shape,
                         std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return size_; }
  std::size_t dim(std::size_t i) const;
  Precision precision() const { return prec_; }
  bool empty() const { return size_ == 0; }

  // Element access through double; exact for both precisions on read,
  // narrowing on f32 write.
  double at(std::size_t flat) const;
  void set(std::size_t flat, double value);

  template <class T>
  std::span<T> data();
  template <class T>
  std::span<const T> data() const;

  Tensor to(Precision p) const;
  Tensor reshaped(std::vector<std::size_t> shape) const;

  void fill(double value);
  bool all_finite() const;

  // Exact elementwise equality (same shape, same precision, same bits).
  bool bit_equal(const Tensor& other) const;

 private:
  std::vector<std::size_t> shape_;
  std::size_t size_ = 0;
  Precision prec_ = Precision::F32;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);
std::string shape_to_string(std::span<const std::size_t> shape);

}  // namespace spfde
