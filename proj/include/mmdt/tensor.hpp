#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mmdt/errors.hpp"

namespace mmdt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major n-d array. Images use (H, W, 3); network activations use (N, C, H, W);
/// token sequences use (B, L, D).
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S(0)) : shape_(std::move(shape)) {
    data_.setConstant(shape_size(shape_), fill);
  }
  Tensor(Shape shape, std::span<const S> values) : shape_(std::move(shape)) {
    if (static_cast<Index>(values.size()) != shape_size(shape_))
      throw ShapeError("tensor data size " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape_));
    data_ = Eigen::Map<const VecX<S>>(values.data(), static_cast<Index>(values.size()));
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.size() == 0; }

  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }
  std::span<S> values() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const S> values() const noexcept {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  VecX<S>& flat() noexcept { return data_; }
  const VecX<S>& flat() const noexcept { return data_; }

  S& operator[](Index i) { return data_[i]; }
  const S& operator[](Index i) const { return data_[i]; }

  /// Element access for rank-3 tensors.
  S& at(Index a, Index b, Index c) { return data_[(a * shape_[1] + b) * shape_[2] + c]; }
  const S& at(Index a, Index b, Index c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  /// Element access for rank-4 tensors.
  S& at(Index a, Index b, Index c, Index d) {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const S& at(Index a, Index b, Index c, Index d) const {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    out.flat() = data_.template cast<T>();
    return out;
  }

  void fill(S v) { data_.setConstant(v); }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

 private:
  Shape shape_;
  VecX<S> data_;
};

template <typename S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
  return a.shape() == b.shape() &&
         std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

template <typename S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    throw ShapeError("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.size() == 0) return S(0);
  return (a.flat() - b.flat()).cwiseAbs().maxCoeff();
}

inline void require_shape(const Shape& got, const Shape& want, const char* what) {
  if (got != want)
    throw ShapeError(std::string(what) + ": expected " + shape_str(want) + ", got " +
                     shape_str(got));
}

}  // namespace mmdt
