#include "ear/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ear/autograd.hpp"

namespace ear {

std::string_view dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view name) {
  if (name == "f32" || name == "f32le") return DType::f32;
  if (name == "f64" || name == "f64le") return DType::f64;
  throw ConfigError("unknown dtype '" + std::string(name) + "'");
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Buffer ----

Buffer::Buffer(DType dtype, std::size_t size) {
  if (dtype == DType::f32)
    data_ = AlignedVector<float>(size, 0.0f);
  else
    data_ = AlignedVector<double>(size, 0.0);
}

std::size_t Buffer::size() const noexcept {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

double Buffer::get(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data_);
}

void Buffer::set(std::size_t i, double value) {
  std::visit([&](auto& v) { v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
             data_);
}

void Buffer::add_inplace(const Buffer& other) {
  if (other.dtype() != dtype() || other.size() != size())
    throw ShapeError("gradient accumulation between mismatched buffers");
  visit_dtype(dtype(), [&]<class T>(T) {
    auto dst = view<T>();
    auto src = other.view<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

Buffer Buffer::converted(DType target) const {
  if (target == dtype()) return *this;
  return std::visit(
      [target](const auto& v) {
        Buffer out(target, v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.set(i, static_cast<double>(v[i]));
        return out;
      },
      data_);
}

bool Buffer::all_finite() const {
  return std::visit(
      [](const auto& v) {
        for (auto x : v)
          if (!std::isfinite(x)) return false;
        return true;
      },
      data_);
}

// ---- Tensor ----

namespace {
void validate_shape(const Shape& shape) {
  for (auto e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor Tensor::from_buffer(Shape shape, Buffer buffer) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(buffer.size()) != shape_numel(shape))
    throw ShapeError("buffer of " + std::to_string(buffer.size()) + " scalars cannot hold shape " +
                     shape_str(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<Buffer>(std::move(buffer));
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  validate_shape(shape);
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return from_buffer(std::move(shape), Buffer(dtype, n));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  auto& buf = t.mutable_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf.set(i, value);
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, DType dtype) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("got " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  Buffer buf(dtype, values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf.set(i, values[i]);
  return from_buffer(std::move(shape), std::move(buf));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw GraphError("use of an undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::size(std::int64_t axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<std::int64_t>(s.size());
  if (axis < 0 || axis >= static_cast<std::int64_t>(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(axis)];
}

DType Tensor::dtype() const { return buffer().dtype(); }

const Buffer& Tensor::buffer() const {
  if (!impl_) throw GraphError("use of an undefined tensor");
  return *impl_->data;
}

Buffer& Tensor::mutable_buffer() { return *impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return buffer().get(0);
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank does not match " + shape_str(s));
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[axis]) throw ShapeError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return buffer().get(static_cast<std::size_t>(flat));
}

std::vector<double> Tensor::to_vector() const {
  const auto& b = buffer();
  std::vector<double> out(b.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = b.get(i);
  return out;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (impl_->grad_fn) throw GraphError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::tracks_grad() const { return impl_ && (impl_->requires_grad || impl_->grad_fn); }

bool Tensor::has_grad() const { return impl_ && impl_->grad.has_value(); }

Tensor Tensor::grad() const {
  if (!has_grad()) throw GraphError("tensor has no accumulated gradient");
  return from_buffer(impl_->shape, *impl_->grad);
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.reset();
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return from_buffer(shape(), buffer()); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return *this;
  Tensor src = *this;
  auto out = buffer().converted(target);
  return record_op("to_" + std::string(dtype_name(target)), shape(), std::move(out), {src},
                   [src_dtype = dtype()](const Buffer& g) { return std::vector<Buffer>{g.converted(src_dtype)}; });
}

}  // namespace ear
