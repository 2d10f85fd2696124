#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tobias/errors.hpp"

namespace tobias {

// Dense row-major tensor of order <= 4. Axes follow the
// (batch, channel, height, width) convention where four are present.
// Compute paths use TensorT<float>; gradient verification uses
// TensorT<double>.
template <class T>
class TensorT {
public:
  using value_type = T;

  TensorT() = default;

  explicit TensorT(std::vector<int64_t> dims, T fill = T(0)) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(static_cast<size_t>(count(dims_)), fill);
  }

  TensorT(std::vector<int64_t> dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (static_cast<int64_t>(data_.size()) != count(dims_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string());
    }
  }

  int order() const { return static_cast<int>(dims_.size()); }
  int64_t dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  const std::vector<int64_t>& dims() const { return dims_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dims_[1] + j)]; }
  const T& at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * dims_[1] + j)]; }

  T& at(int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>((c * dims_[1] + h) * dims_[2] + w)];
  }
  const T& at(int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>((c * dims_[1] + h) * dims_[2] + w)];
  }

  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
  }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
  }

  bool same_shape(const TensorT& other) const { return dims_ == other.dims_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    os << ")";
    return os.str();
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out(dims_);
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  static int64_t count(const std::vector<int64_t>& dims) {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

private:
  void check_dims() {
    if (dims_.size() > 4) throw DimensionError("tensor order > 4: " + shape_string());
    for (int64_t d : dims_) {
      if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_string());
    }
  }

  std::vector<int64_t> dims_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

template <class T>
bool all_finite(const TensorT<T>& t) {
  for (int64_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  }
  return true;
}

}  // namespace tobias
