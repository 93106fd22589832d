#pragma once

#include <cstdint>
#include <vector>

#include "ear/errors.hpp"
#include "ear/tensor.hpp"

namespace ear {

/// Dense binary volume (values 0/1), row-major over `shape`; usually [T,H,W].
struct BinaryMask {
  Shape shape;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  explicit BinaryMask(Shape s) : shape(std::move(s)), values(static_cast<std::size_t>(shape_numel(shape)), 0) {}
  BinaryMask(Shape s, std::vector<std::uint8_t> v) : shape(std::move(s)), values(std::move(v)) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
      throw ShapeError("mask: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (auto v : values) n += v != 0;
    return n;
  }

  std::uint8_t& operator[](std::int64_t i) { return values[static_cast<std::size_t>(i)]; }
  std::uint8_t operator[](std::int64_t i) const { return values[static_cast<std::size_t>(i)]; }

  /// Element of a [T,H,W] mask.
  std::uint8_t& at(std::int64_t t, std::int64_t r, std::int64_t c) { return (*this)[(t * shape[1] + r) * shape[2] + c]; }
  std::uint8_t at(std::int64_t t, std::int64_t r, std::int64_t c) const {
    return (*this)[(t * shape[1] + r) * shape[2] + c];
  }

  /// The values as a 0/1 tensor of the same shape.
  Tensor to_tensor(DType dtype = DType::f32) const {
    std::vector<double> v(values.begin(), values.end());
    return Tensor::from_values(shape, v, dtype);
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

}  // namespace ear
