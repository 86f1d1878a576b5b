#include "nfuse/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "nfuse/error.hpp"

namespace nfuse {

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kShape: return "shape";
    case ErrorCategory::kArgument: return "argument";
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kFormat: return "format";
    case ErrorCategory::kData: return "data";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) fail(ErrorCategory::kShape, "tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) fail(ErrorCategory::kShape, "tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor() : storage_(std::make_shared<Storage>()) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : storage_(std::make_shared<Storage>()) {
  check_extents(shape);
  storage_->data.assign(shape_numel(shape), fill);
  storage_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : storage_(std::make_shared<Storage>()) {
  check_extents(shape);
  if (shape_numel(shape) != data.size()) {
    fail(ErrorCategory::kShape, "shape " + shape_to_string(shape) + " holds " +
                                    std::to_string(shape_numel(shape)) + " elements, data has " +
                                    std::to_string(data.size()));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) fail(ErrorCategory::kShape, "item() needs a one-element tensor, shape is " + shape_to_string(shape()));
  return storage_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_tracked(bool tracked) {
  storage_->tracked = tracked;
  return *this;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() const {
  if (storage_->grad.size() != storage_->data.size()) storage_->grad.assign(storage_->data.size(), T(0));
  return storage_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() const {
  storage_->grad.assign(storage_->data.size(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  if (empty()) return BasicTensor();
  return BasicTensor(storage_->shape, storage_->data);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace nfuse
