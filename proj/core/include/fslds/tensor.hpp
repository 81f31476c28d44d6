#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace fslds::ad {

// Dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1 (vector) and
// 2 (matrix) are what the model uses; higher ranks are rejected by the tape.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> shape_, std::vector<double> data_)
      : shape(std::move(shape_)), data(std::move(data_)) {
    if (numel_of(shape) != static_cast<int>(data.size()))
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) +
                                  " does not match data length " +
                                  std::to_string(data.size()));
  }

  static int numel_of(const std::vector<int>& s) {
    int n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(numel_of(t.shape), 0.0);
    return t;
  }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t = zeros(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vec(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(int r, int c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }

  int numel() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  // Rank-normalized extents: scalar -> 1x1, {n} -> nx1, {r,c} -> rxc.
  int rows() const { return rank() >= 1 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : 1; }

  double& operator()(int i) { return data[static_cast<size_t>(i)]; }
  double operator()(int i) const { return data[static_cast<size_t>(i)]; }
  double& operator()(int i, int j) {
    return data[static_cast<size_t>(i) * cols() + j];
  }
  double operator()(int i, int j) const {
    return data[static_cast<size_t>(i) * cols() + j];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static std::string shape_str(const std::vector<int>& s) {
    std::string out = "{";
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + "}";
  }
  std::string shape_str() const { return shape_str(shape); }
};

}  // namespace fslds::ad
