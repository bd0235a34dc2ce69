#ifndef HSICAL_TENSOR_HPP_
#define HSICAL_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hsical/common.hpp"

namespace hsical::tk {

/// Dense row-major N-dimensional array. Plain value type; gradients live in
/// the Graph that records operations on tensors.
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {}

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    Tensor t;
    t.data.assign(count(s), T(0));
    t.shape = std::move(s);
    return t;
  }

  static Tensor full(std::vector<std::size_t> s, T v) {
    Tensor t;
    t.data.assign(count(s), v);
    t.shape = std::move(s);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }
  bool empty() const { return data.empty(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.reserve(data.size());
    for (const T& v : data) out.data.push_back(static_cast<U>(v));
    return out;
  }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

/// Normal draws clipped to two standard deviations by resampling.
template <class T>
void fill_trunc_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& v : t.data) {
    double z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0 * stddev);
    v = static_cast<T>(z);
  }
}

template <class T>
void fill_uniform(Tensor<T>& t, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (T& v : t.data) v = static_cast<T>(dist(rng));
}

}  // namespace hsical::tk

#endif  // HSICAL_TENSOR_HPP_
