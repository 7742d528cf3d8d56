#include "paid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "paid/error.hpp"

namespace paid {

std::size_t element_count(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " holds " + std::to_string(element_count(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(Real value) { return Tensor({1}, std::vector<Real>{value}); }

Tensor Tensor::from(std::initializer_list<Real> values) {
  return Tensor({values.size()}, std::vector<Real>(values));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

Real Tensor::item() const {
  if (data_.size() != 1) throw ContractError("tensor: item() on shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::size_t Tensor::row_size() const {
  if (shape_.empty()) throw ShapeError("tensor: rank-0 tensor has no rows");
  return shape_[0] == 0 ? 0 : data_.size() / shape_[0];
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") on " +
                     to_string(shape_));
  }
  const auto stride = row_size();
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  return Tensor(std::move(out_shape),
                std::vector<Real>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                  data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
  const auto stride = row_size();
  Shape out_shape = shape_;
  out_shape[0] = rows.size();
  std::vector<Real> out;
  out.reserve(rows.size() * stride);
  for (auto r : rows) {
    if (r >= shape_[0]) throw ShapeError("gather_rows: row " + std::to_string(r) + " of " + to_string(shape_));
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(r * stride);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(stride));
  }
  return Tensor(std::move(out_shape), std::move(out));
}

std::vector<int> argmax_rows(const Tensor& matrix) {
  if (matrix.rank() != 2) throw ShapeError("argmax_rows: expected rank-2, got " + to_string(matrix.shape()));
  const auto rows = matrix.extent(0);
  const auto cols = matrix.extent(1);
  std::vector<int> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (matrix[r * cols + c] > matrix[r * cols + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

bool all_finite(const Tensor& t) noexcept {
  return std::all_of(t.values().begin(), t.values().end(), [](Real v) { return std::isfinite(v); });
}

std::uint64_t fingerprint(const Tensor& t) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (auto e : t.shape()) mix(&e, sizeof e);
  mix(t.values().data(), t.numel() * sizeof(Real));
  return h;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Real m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace paid
