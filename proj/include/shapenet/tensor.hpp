// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace shapenet {

/// Dense NCHW tensor of binary64 values.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, double fill = 0.0)
      : n_(n), c_(c), h_(h), w_(w),
        data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t item_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }
  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> item(int n) { return {data_.data() + n * item_size(), item_size()}; }
  std::span<const double> item(int n) const {
    return {data_.data() + n * item_size(), item_size()};
  }

  double& operator()(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w];
  }
  double operator()(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reshapes in place, reallocating only when the element count changes.
  void resize(int n, int c, int h, int w) {
    n_ = n;
    c_ = c;
    h_ = h;
    w_ = w;
    data_.resize(static_cast<std::size_t>(n) * c * h * w);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

}  // namespace shapenet
