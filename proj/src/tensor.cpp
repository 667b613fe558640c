#include "mvstr/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace mvstr {

namespace {
thread_local Precision g_default_precision = Precision::standard;
}

const char* to_string(Precision p) {
  return p == Precision::standard ? "standard" : "verify";
}

Precision precision_from_string(const std::string& s) {
  if (s == "standard") return Precision::standard;
  if (s == "verify" || s == "verification") return Precision::verification;
  throw ConfigError("unknown precision '" + s + "' (expected standard|verify)");
}

Precision default_precision() { return g_default_precision; }

PrecisionGuard::PrecisionGuard(Precision p) : prev_(g_default_precision) {
  g_default_precision = p;
}
PrecisionGuard::~PrecisionGuard() { g_default_precision = prev_; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, Precision p) { return full(shape, 0.0, p); }
Tensor Tensor::ones(const Shape& shape, Precision p) { return full(shape, 1.0, p); }

Tensor Tensor::full(const Shape& shape, double value, Precision p) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return dispatch(p, [&]<class T>() {
    return from_buffer<T>(shape, std::vector<T>(n, static_cast<T>(value)));
  });
}

Tensor Tensor::scalar(double value, Precision p) { return full({}, value, p); }

Tensor Tensor::from_vector(const Shape& shape, std::span<const double> values,
                           Precision p) {
  return dispatch(p, [&]<class T>() {
    return from_buffer<T>(shape, std::vector<T>(values.begin(), values.end()));
  });
}

Tensor Tensor::from_vector(const Shape& shape, std::span<const float> values,
                           Precision p) {
  return dispatch(p, [&]<class T>() {
    return from_buffer<T>(shape, std::vector<T>(values.begin(), values.end()));
  });
}

Tensor Tensor::from_vector(const Shape& shape, std::initializer_list<double> values,
                           Precision p) {
  return from_vector(shape, std::span<const double>(values.begin(), values.size()), p);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("shape() on undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(int i) const {
  const int r = rank();
  const int k = i < 0 ? i + r : i;
  if (k < 0 || k >= r) {
    throw DimensionError("dimension index " + std::to_string(i) + " out of range for shape " +
                         shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(k)];
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

Precision Tensor::precision() const {
  if (!impl_) throw UsageError("precision() on undefined tensor");
  return std::holds_alternative<std::vector<float>>(*impl_->storage) ? Precision::standard
                                                                    : Precision::verification;
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw UsageError("set_requires_grad on undefined tensor");
  impl_->requires_grad = on;
  if (!on) impl_->tape_ref = {};
  return *this;
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(precision(), [&]<class T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return to_vector()[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank does not match shape " + shape_str(s));
  }
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[k]) throw DimensionError("index out of range for shape " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return dispatch(precision(), [&]<class T>() {
    return static_cast<double>(data<T>()[static_cast<std::size_t>(flat)]);
  });
}

Tensor Tensor::to(Precision p) const {
  if (precision() == p) return detach();
  return dispatch(precision(), [&]<class S>() {
    auto src = data<S>();
    return dispatch(p, [&]<class T>() {
      return from_buffer<T>(shape(), std::vector<T>(src.begin(), src.end()));
    });
  });
}

Tensor Tensor::detach() const {
  if (!impl_) return {};
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->storage = impl_->storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->storage = std::make_shared<Storage>(*impl_->storage);
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::view_as(const Shape& shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot view " + shape_str(this->shape()) + " as " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->storage = impl_->storage;
  return Tensor(std::move(impl));
}

}  // namespace mvstr
