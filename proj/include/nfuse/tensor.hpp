#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nfuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major N-d array with an optional gradient buffer.
//
// Copies share storage: a tensor is a handle, which lets the tape refer to
// the same buffers the caller holds. Use clone() for an independent copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor();
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t numel() const { return storage_->data.size(); }
  bool empty() const { return storage_->data.empty(); }

  std::span<const T> data() const { return storage_->data; }
  std::span<T> mutable_data() { return storage_->data; }
  T item() const;

  bool tracked() const { return storage_->tracked; }
  BasicTensor& set_tracked(bool tracked = true);

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const T> grad() const { return storage_->grad; }
  // Gradient accumulation is allowed through const handles; allocates a zero
  // gradient on first use.
  std::span<T> mutable_grad() const;
  void zero_grad() const;
  void clear_grad() const { storage_->grad.clear(); }

  bool shares_storage_with(const BasicTensor& other) const { return storage_ == other.storage_; }

  // Deep copy of values; the copy is untracked and has no gradient.
  BasicTensor clone() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(storage_->data.begin(), storage_->data.end());
    return BasicTensor<U>(storage_->shape, std::move(out));
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool tracked = false;
  };
  std::shared_ptr<Storage> storage_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace nfuse
