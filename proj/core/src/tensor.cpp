#include "spfde/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "spfde/errors.hpp"

namespace spfde {

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "f32" || s == "float32" || s == "32") return Precision::F32;
  if (s == "f64" || s == "float64" || s == "64") return Precision::F64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

std::size_t shape_product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, Precision p) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.size_ = shape_product(t.shape_);
  t.prec_ = p;
  if (p == Precision::F32) {
    t.data_ = std::vector<float>(t.size_, 0.0f);
  } else {
    t.data_ = std::vector<double>(t.size_, 0.0);
  }
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, Precision p) {
  Tensor t = zeros(std::move(shape), p);
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value, Precision p) { return full({}, value, p); }

Tensor Tensor::from_f32(std::vector<std::size_t> shape,
                        std::vector<float> values) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.size_ = shape_product(t.shape_);
  if (values.size() != t.size_) {
    throw InternalError("tensor: data length " + std::to_string(values.size()) +
                        " does not match shape " + shape_to_string(t.shape_));
  }
  t.prec_ = Precision::F32;
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::from_f64(std::vector<std::size_t> shape,
                        std::vector<double> values) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.size_ = shape_product(t.shape_);
  if (values.size() != t.size_) {
    throw InternalError("tensor: data length " + std::to_string(values.size()) +
                        " does not match shape " + shape_to_string(t.shape_));
  }
  t.prec_ = Precision::F64;
  t.data_ = std::move(values);
  return t;
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) throw InternalError("tensor: dim index out of range");
  return shape_[i];
}

double Tensor::at(std::size_t flat) const {
  if (flat >= size_) throw InternalError("tensor: flat index out of range");
  if (prec_ == Precision::F32) return std::get<std::vector<float>>(data_)[flat];
  return std::get<std::vector<double>>(data_)[flat];
}

void Tensor::set(std::size_t flat, double value) {
  if (flat >= size_) throw InternalError("tensor: flat index out of range");
  if (prec_ == Precision::F32) {
    std::get<std::vector<float>>(data_)[flat] = static_cast<float>(value);
  } else {
    std::get<std::vector<double>>(data_)[flat] = value;
  }
}

template <>
std::span<float> Tensor::data<float>() {
  if (prec_ != Precision::F32)
    throw InternalError("tensor: f32 access on f64 tensor");
  return std::get<std::vector<float>>(data_);
}

template <>
std::span<double> Tensor::data<double>() {
  if (prec_ != Precision::F64)
    throw InternalError("tensor: f64 access on f32 tensor");
  return std::get<std::vector<double>>(data_);
}

template <>
std::span<const float> Tensor::data<float>() const {
  if (prec_ != Precision::F32)
    throw InternalError("tensor: f32 access on f64 tensor");
  return std::get<std::vector<float>>(data_);
}

template <>
std::span<const double> Tensor::data<double>() const {
  if (prec_ != Precision::F64)
    throw InternalError("tensor: f64 access on f32 tensor");
  return std::get<std::vector<double>>(data_);
}

Tensor Tensor::to(Precision p) const {
  if (p == prec_) return *this;
  Tensor out = zeros(shape_, p);
  for (std::size_t i = 0; i < size_; ++i) out.set(i, at(i));
  return out;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_product(shape) != size_) {
    throw InternalError("tensor: reshape " + shape_to_string(shape_) + " -> " +
                        shape_to_string(shape) + " changes element count");
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double value) {
  if (prec_ == Precision::F32) {
    auto& v = std::get<std::vector<float>>(data_);
    std::fill(v.begin(), v.end(), static_cast<float>(value));
  } else {
    auto& v = std::get<std::vector<double>>(data_);
    std::fill(v.begin(), v.end(), value);
  }
}

bool Tensor::all_finite() const {
  if (prec_ == Precision::F32) {
    for (float x : std::get<std::vector<float>>(data_))
      if (!std::isfinite(x)) return false;
  } else {
    for (double x : std::get<std::vector<double>>(data_))
      if (!std::isfinite(x)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_ || prec_ != other.prec_) return false;
  if (size_ == 0) return true;
  if (prec_ == Precision::F32) {
    const auto& a = std::get<std::vector<float>>(data_);
    const auto& b = std::get<std::vector<float>>(other.data_);
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
  }
  const auto& a = std::get<std::vector<double>>(data_);
  const auto& b = std::get<std::vector<double>>(other.data_);
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace spfde
