#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace paid {

#if defined(PAID_SINGLE_PRECISION)
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t element_count(const Shape& shape) noexcept;
[[nodiscard]] std::string to_string(const Shape& shape);

/// Dense row-major array of Real with an explicit shape.
///
/// A Tensor is a plain value. Gradient bookkeeping lives on the Tape that a
/// tensor is registered with (see autodiff.hpp).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real{0});
  /// Throws ShapeError when the value count does not match the shape.
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real value);
  static Tensor from(std::initializer_list<Real> values);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }
  [[nodiscard]] std::size_t extent(std::size_t axis) const;

  [[nodiscard]] std::span<Real> values() noexcept { return data_; }
  [[nodiscard]] std::span<const Real> values() const noexcept { return data_; }
  [[nodiscard]] const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Value of a single-element tensor.
  [[nodiscard]] Real item() const;

  /// Same values under a new shape with identical element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) along axis 0.
  [[nodiscard]] Tensor slice_rows(std::size_t begin, std::size_t end) const;
  /// Rows selected by index along axis 0.
  [[nodiscard]] Tensor gather_rows(std::span<const std::size_t> rows) const;
  /// Number of elements in one axis-0 row.
  [[nodiscard]] std::size_t row_size() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

/// Index of the largest entry in every row of a [rows, cols] tensor; ties go
/// to the lowest index.
[[nodiscard]] std::vector<int> argmax_rows(const Tensor& matrix);

/// True when every value is finite.
[[nodiscard]] bool all_finite(const Tensor& t) noexcept;

/// FNV-1a hash over the shape and the raw value bytes.
[[nodiscard]] std::uint64_t fingerprint(const Tensor& t) noexcept;

/// max_i |a_i - b_i|; shapes must match.
[[nodiscard]] Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace paid
