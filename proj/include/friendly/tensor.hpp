#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "friendly/common.hpp"

namespace friendly {

/// Dense row-major n-dimensional array. Real is double by default project-wide;
/// float is available behind the precision config flag.
template <class Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), Real(0));
  }
  Tensor(std::vector<std::size_t> s, std::vector<Real> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != data.size())
      throw Error("tensor: shape " + shape_str() + " does not match " +
                  std::to_string(data.size()) + " values");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, Real v) {
    Tensor t(std::move(s));
    for (Real& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  Real& operator[](std::size_t i) { return data[i]; }
  Real operator[](std::size_t i) const { return data[i]; }

  Real& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  Real at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  Real& at4(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  Real at4(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  Real item() const {
    if (numel() != 1) throw Error("tensor: item() on non-scalar of shape " + shape_str());
    return data[0];
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }
};

template <class Real>
Real sum_sq(const Tensor<Real>& t) {
  Real s = 0;
  for (Real v : t.data) s += v * v;
  return s;
}

template <class Real>
bool bit_equal(const Tensor<Real>& a, const Tensor<Real>& b) {
  return a.shape == b.shape && a.data == b.data;
}

}  // namespace friendly
