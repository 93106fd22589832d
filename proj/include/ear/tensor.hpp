#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <new>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "ear/errors.hpp"

namespace ear {

enum class DType { f32, f64 };

std::string_view dtype_name(DType dtype);
DType parse_dtype(std::string_view name);

template <class T>
inline constexpr DType dtype_of = std::is_same_v<T, float> ? DType::f32 : DType::f64;

/// Calls `fn(T{})` with T = float or double according to `dtype`.
template <class Fn>
decltype(auto) visit_dtype(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return std::forward<Fn>(fn)(float{});
  return std::forward<Fn>(fn)(double{});
}

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Allocator returning 64-byte aligned blocks.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Flat scalar storage of either precision.
class Buffer {
 public:
  Buffer() = default;
  Buffer(DType dtype, std::size_t size);
  explicit Buffer(const std::vector<float>& values) : data_(AlignedVector<float>(values.begin(), values.end())) {}
  explicit Buffer(const std::vector<double>& values) : data_(AlignedVector<double>(values.begin(), values.end())) {}

  DType dtype() const noexcept { return data_.index() == 0 ? DType::f32 : DType::f64; }
  std::size_t size() const noexcept;
  bool empty() const noexcept { return size() == 0; }

  template <class T>
  std::span<T> view() {
    return std::span<T>(std::get<AlignedVector<T>>(data_));
  }
  template <class T>
  std::span<const T> view() const {
    return std::span<const T>(std::get<AlignedVector<T>>(data_));
  }

  double get(std::size_t i) const;
  void set(std::size_t i, double value);
  void add_inplace(const Buffer& other);
  Buffer converted(DType dtype) const;
  bool all_finite() const;

  friend bool operator==(const Buffer&, const Buffer&) = default;

 private:
  std::variant<AlignedVector<float>, AlignedVector<double>> data_;
};

namespace detail {
struct Node;
struct TensorImpl {
  Shape shape;
  std::shared_ptr<Buffer> data;
  bool requires_grad = false;
  std::optional<Buffer> grad;
  std::shared_ptr<Node> grad_fn;
};
}  // namespace detail

/// Dense row-major tensor. Copies share storage; data is not modified by ops.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, const std::vector<double>& values, DType dtype = DType::f32);
  static Tensor from_buffer(Shape shape, Buffer buffer);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim() const { return static_cast<std::int64_t>(shape().size()); }
  std::int64_t size(std::int64_t axis) const;
  std::int64_t numel() const { return shape_numel(shape()); }
  DType dtype() const;

  const Buffer& buffer() const;
  template <class T>
  std::span<const T> data() const {
    return buffer().view<T>();
  }
  /// In-place access for initializers and optimizers. Not recorded by autograd.
  template <class T>
  std::span<T> mutable_data() {
    return impl_->data->view<T>();
  }
  Buffer& mutable_buffer();

  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  /// True if this tensor is a leaf that requires grad or was produced by a recorded op.
  bool tracks_grad() const;
  bool has_grad() const;
  Tensor grad() const;
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  /// Same storage object (identity, not value equality).
  bool same_storage(const Tensor& other) const { return impl_->data == other.impl_->data; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace ear
