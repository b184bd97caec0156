#pragma once
// Dense row-major N-d tensor. The value type is the dtype: Tensor<float> for
// training/inference, Tensor<double> for gradient checking, integer
// instantiations for label grids.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace nnynet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Violated caller precondition that is not a shape problem.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t shape_numel(const Shape& shape);
Shape row_major_strides(const Shape& shape);
std::string shape_str(const Shape& shape);

// Numpy-style broadcast: align on the right, extents must match or be 1.
Shape broadcast_shapes(const Shape& a, const Shape& b);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{}) {}
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor: buffer of " + std::to_string(data_.size()) + " elements does not fit shape " +
                       shape_str(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{}); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range");
    return shape_[axis];
  }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename... I>
  T& at(I... idx) {
    return data_[offset_of(idx...)];
  }
  template <typename... I>
  const T& at(I... idx) const {
    return data_[offset_of(idx...)];
  }

  T item() const {
    if (data_.size() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("tensor: cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  template <typename... I>
  std::size_t offset_of(I... idx) const {
    static_assert((std::is_integral_v<I> && ...));
    if (sizeof...(I) != shape_.size()) throw ShapeError("tensor: index rank mismatch for " + shape_str(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    ((off = off * shape_[axis] + static_cast<std::size_t>(idx), ++axis), ...);
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

// Same shape and identical object representation of every element.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T m{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    T d = a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
    m = std::max(m, d);
  }
  return m;
}

}  // namespace nnynet
