#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "minigen/error.hpp"

namespace minigen {

using idx = std::int64_t;

inline idx numel_of(const std::vector<idx>& shape) {
  idx n = 1;
  for (idx e : shape) n *= e;
  return n;
}

inline std::string shape_str(const std::vector<idx>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major tensor. grad is empty until ensure_grad(); when present it
// always has the same length as data.
template <typename T>
struct Tensor {
  std::vector<idx> shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(std::vector<idx> s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), fill) {}

  static Tensor from(std::vector<idx> s, std::vector<T> d) {
    if (numel_of(s) != static_cast<idx>(d.size()))
      throw PreconditionError("tensor data length " + std::to_string(d.size()) +
                              " does not match shape " + shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }

  idx numel() const { return static_cast<idx>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  idx rows() const { return ndim() == 2 ? shape[0] : (ndim() == 1 ? 1 : -1); }
  idx cols() const { return ndim() == 2 ? shape[1] : (ndim() == 1 ? shape[0] : -1); }

  T& at(idx r, idx c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  T at(idx r, idx c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(std::vector<idx> shape, T fill = T(0)) {
  return std::make_shared<Tensor<T>>(std::move(shape), fill);
}

}  // namespace minigen
