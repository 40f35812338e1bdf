#pragma once

#include <cstddef>
#include <new>
#include <numeric>
#include <string>
#include <vector>

namespace gaitlab::nn {

/// 64-byte aligned storage. Vectorized reductions split work by address
/// alignment, so unaligned buffers would make float sums vary run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using FloatVec = std::vector<float, AlignedAllocator<float>>;

/// Dense float32 array, row-major, value semantics.
struct Tensor {
  std::vector<int> shape;
  FloatVec data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, float fill = 0.f)
      : shape(std::move(dims)), data(count(shape), fill) {}

  static size_t count(const std::vector<int>& dims) {
    return std::accumulate(dims.begin(), dims.end(), size_t{1},
                           [](size_t a, int b) { return a * static_cast<size_t>(b); });
  }

  size_t size() const { return data.size(); }
  int dim(size_t i) const { return shape[i]; }
  int rank() const { return static_cast<int>(shape.size()); }
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }
  void zero() { std::fill(data.begin(), data.end(), 0.f); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

/// Trainable tensor plus optimizer state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;
  bool is_bn = false;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> dims, bool bn = false)
      : name(std::move(n)), value(dims), grad(dims), velocity(dims), is_bn(bn) {}
};

/// Non-trainable persistent state (batch-norm running statistics).
struct Buffer {
  std::string name;
  Tensor* tensor;
};

}  // namespace gaitlab::nn
