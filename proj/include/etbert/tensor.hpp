#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace etbert {

// Dense row-major tensor. Deliberately dumb: shape plus storage; all math
// lives in the kernels that use it.
template <class T>
struct Tensor {
  std::vector<size_t> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    v.assign(n, T(0));
  }

  size_t numel() const { return v.size(); }
  size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* row(size_t i) { return v.data() + i * cols(); }
  const T* row(size_t i) const { return v.data() + i * cols(); }

  T& at(size_t i, size_t j) { return v[i * cols() + j]; }
  T at(size_t i, size_t j) const { return v[i * cols() + j]; }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); i++) out.v[i] = U(v[i]);
    return out;
  }
};

}  // namespace etbert
