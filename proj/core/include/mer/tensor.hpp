#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mer/error.hpp"
#include "mer/image.hpp"

namespace mer {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// 64-byte aligned storage.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

// Dense row-major array. Activations use NCHW.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != shape_size(shape_)) {
      throw ArgumentError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW element access.
  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) throw ArgumentError("reshape changes element count");
    shape_ = std::move(shape);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::copy(data_.begin(), data_.end(), out.data());
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  Shape shape_;
  std::vector<T, AlignedAllocator<T>> data_;
};

// Named parameter tensors, ordered by name.
template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;
using Params = ParamMap<float>;

template <typename U, typename T>
ParamMap<U> cast_params(const ParamMap<T>& params) {
  ParamMap<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>());
  return out;
}

// Image (H,W,C) <-> tensor (1,C,H,W).
template <typename T>
Tensor<T> image_to_tensor(const Image& img);
template <typename T>
Image tensor_to_image(const Tensor<T>& t, int n = 0);
template <typename T>
Tensor<T> mask_to_tensor(const Mask& mask, int channels = 1);

}  // namespace mer
