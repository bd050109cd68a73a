#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sliceforge/error.hpp"

namespace sliceforge {

/// Dimensions of a dense tensor, rank 1..4. Rank-4 tensors are laid out as
/// batch x channels x height x width.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() : dims_{1} {}
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t numel() const;
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const { return dims_; }

  bool operator==(const Shape& other) const = default;
  std::string to_string() const;

 private:
  void validate() const;
  std::vector<std::size_t> dims_;
};

/// Dense row-major tensor. `float` is the storage type used everywhere
/// except the 64-bit shadow evaluation used by gradient checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : data_(1, T{0}) {}
  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element access for rank-4 tensors (n, c, h, w).
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same data under a new shape with equal element count.
  BasicTensor reshaped(Shape shape) const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;

  bool operator==(const BasicTensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Constant-filled tensor.
Tensor tensor_create(const Shape& shape, float fill);
/// Tensor holding exactly `values`; throws on length mismatch or non-finite values.
Tensor tensor_create(const Shape& shape, std::vector<float> values);

/// Elementwise application of `fn`. The result must be finite.
template <typename T>
BasicTensor<T> tensor_map(const BasicTensor<T>& a, const std::function<T(T)>& fn);

/// Elementwise application of `fn` over two equally shaped tensors.
template <typename T>
BasicTensor<T> tensor_zip(const BasicTensor<T>& a, const BasicTensor<T>& b,
                          const std::function<T(T, T)>& fn);

/// [m,k] x [k,n] -> [m,n]. Accumulates in double, left to right over k.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Throws NumericError naming `what` if `t` holds a NaN or Inf.
template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what);

// TSR1 file format: "TSR1", u32 LE rank, rank x u32 LE dims, f32 LE payload.
void tensor_write(const std::filesystem::path& path, const Tensor& t);
Tensor tensor_read(const std::filesystem::path& path);
/// Reads only the header of a TSR1 file.
Shape tensor_read_shape(const std::filesystem::path& path);

std::vector<std::uint8_t> tensor_encode(const Tensor& t);
/// Decodes one TSR1 record starting at `bytes[offset]`; advances `offset`.
Tensor tensor_decode(std::span<const std::uint8_t> bytes, std::size_t& offset);

}  // namespace sliceforge
