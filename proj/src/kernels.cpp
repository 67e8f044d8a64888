// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/kernels.hpp"

#include "shapenet/error.hpp"

#include <Eigen/Core>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace shapenet::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMatrix>;
using ConstMapRow = Eigen::Map<const RowMatrix>;

void check_conv_shapes(const ConvGeometry& g, const Tensor& input,
                       std::span<const double> weight, std::span<const double> bias) {
  if (input.c() != g.in_channels) {
    throw Error(ErrorCode::shape, "convolution expects " + std::to_string(g.in_channels) +
                                      " input channels, got " + std::to_string(input.c()));
  }
  if (weight.size() != g.weight_count() || bias.size() != static_cast<std::size_t>(g.out_channels)) {
    throw Error(ErrorCode::shape, "convolution parameter size mismatch");
  }
  if (g.out_h(input.h()) < 1 || g.out_w(input.w()) < 1) {
    throw Error(ErrorCode::shape, "convolution input too small");
  }
}

// col is (in_c * kh * kw) x (out_h * out_w).
void im2col(const ConvGeometry& g, const double* in, int in_h, int in_w, int out_h, int out_w,
            double* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < g.in_channels; ++c) {
    const double* src = in + static_cast<std::size_t>(c) * in_h * in_w;
    for (int ki = 0; ki < g.kernel_h; ++ki) {
      for (int kj = 0; kj < g.kernel_w; ++kj) {
        double* dst = col + static_cast<std::size_t>((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * g.stride - g.pad_h + ki;
          double* row = dst + oh * out_w;
          if (ih < 0 || ih >= in_h) {
            std::fill(row, row + out_w, 0.0);
            continue;
          }
          const double* src_row = src + static_cast<std::size_t>(ih) * in_w;
          if (g.stride == 1 && g.pad_w == 0) {
            std::copy(src_row + kj, src_row + kj + out_w, row);
            continue;
          }
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * g.stride - g.pad_w + kj;
            row[ow] = (iw >= 0 && iw < in_w) ? src_row[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, int in_h, int in_w, int out_h, int out_w,
            double* in) {
  const int plane = out_h * out_w;
  std::fill(in, in + static_cast<std::size_t>(g.in_channels) * in_h * in_w, 0.0);
  for (int c = 0; c < g.in_channels; ++c) {
    double* dst = in + static_cast<std::size_t>(c) * in_h * in_w;
    for (int ki = 0; ki < g.kernel_h; ++ki) {
      for (int kj = 0; kj < g.kernel_w; ++kj) {
        const double* src = col + static_cast<std::size_t>((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * g.stride - g.pad_h + ki;
          if (ih < 0 || ih >= in_h) continue;
          double* dst_row = dst + static_cast<std::size_t>(ih) * in_w;
          const double* row = src + oh * out_w;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * g.stride - g.pad_w + kj;
            if (iw >= 0 && iw < in_w) dst_row[iw] += row[ow];
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const Tensor& input, std::span<const double> weight,
                    std::span<const double> bias, Tensor& output) {
  check_conv_shapes(g, input, weight, bias);
  const int out_h = g.out_h(input.h());
  const int out_w = g.out_w(input.w());
  output.resize(input.n(), g.out_channels, out_h, out_w);
  const int k = g.in_channels * g.kernel_h * g.kernel_w;
  const int plane = out_h * out_w;
  const ConstMapRow w(weight.data(), g.out_channels, k);
  const Eigen::Map<const Eigen::VectorXd> b(bias.data(), g.out_channels);

#pragma omp parallel
  {
    std::vector<double> col(static_cast<std::size_t>(k) * plane);
#pragma omp for schedule(static)
    for (int n = 0; n < input.n(); ++n) {
      im2col(g, input.item(n).data(), input.h(), input.w(), out_h, out_w, col.data());
      MapRow out(output.item(n).data(), g.out_channels, plane);
      out.noalias() = w * ConstMapRow(col.data(), k, plane);
      out.colwise() += b;
    }
  }
}

void conv2d_backward(const ConvGeometry& g, const Tensor& input, std::span<const double> weight,
                     const Tensor& grad_output, Tensor* grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias) {
  check_conv_shapes(g, input, weight, grad_bias);
  const int out_h = g.out_h(input.h());
  const int out_w = g.out_w(input.w());
  if (grad_output.n() != input.n() || grad_output.c() != g.out_channels ||
      grad_output.h() != out_h || grad_output.w() != out_w) {
    throw Error(ErrorCode::shape, "convolution output gradient has the wrong shape");
  }
  if (grad_input) grad_input->resize(input.n(), input.c(), input.h(), input.w());
  const int k = g.in_channels * g.kernel_h * g.kernel_w;
  const int plane = out_h * out_w;
  const ConstMapRow w(weight.data(), g.out_channels, k);

  const int threads = omp_get_max_threads();
  std::vector<RowMatrix> partial_w(static_cast<std::size_t>(threads));
  std::vector<Eigen::VectorXd> partial_b(static_cast<std::size_t>(threads));

#pragma omp parallel
  {
    const int t = omp_get_thread_num();
    RowMatrix& gw = partial_w[static_cast<std::size_t>(t)];
    Eigen::VectorXd& gb = partial_b[static_cast<std::size_t>(t)];
    gw = RowMatrix::Zero(g.out_channels, k);
    gb = Eigen::VectorXd::Zero(g.out_channels);
    std::vector<double> col(static_cast<std::size_t>(k) * plane);
    RowMatrix grad_col(k, plane);
#pragma omp for schedule(static)
    for (int n = 0; n < input.n(); ++n) {
      im2col(g, input.item(n).data(), input.h(), input.w(), out_h, out_w, col.data());
      const ConstMapRow gy(grad_output.item(n).data(), g.out_channels, plane);
      gw.noalias() += gy * ConstMapRow(col.data(), k, plane).transpose();
      // Fixed-order sum: Eigen's vectorized reduction over a Map peels by address, which would
      // make the result depend on heap alignment.
      for (int o = 0; o < g.out_channels; ++o) {
        const double* row = grad_output.item(n).data() + static_cast<std::size_t>(o) * plane;
        double acc = 0.0;
        for (int i = 0; i < plane; ++i) acc += row[i];
        gb[o] += acc;
      }
      if (grad_input) {
        grad_col.noalias() = w.transpose() * gy;
        col2im(g, grad_col.data(), input.h(), input.w(), out_h, out_w,
               grad_input->item(n).data());
      }
    }
  }

  MapRow gw_out(grad_weight.data(), g.out_channels, k);
  Eigen::Map<Eigen::VectorXd> gb_out(grad_bias.data(), g.out_channels);
  gw_out.setZero();
  gb_out.setZero();
  for (int t = 0; t < threads; ++t) {
    if (partial_w[static_cast<std::size_t>(t)].size() == 0) continue;
    gw_out += partial_w[static_cast<std::size_t>(t)];
    gb_out += partial_b[static_cast<std::size_t>(t)];
  }
}

void relu_forward(const Tensor& input, Tensor& output) {
  output.resize(input.n(), input.c(), input.h(), input.w());
  const double* in = input.data();
  double* out = output.data();
  const auto size = static_cast<std::ptrdiff_t>(input.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < size; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const Tensor& output, const Tensor& grad_output, Tensor& grad_input) {
  grad_input.resize(output.n(), output.c(), output.h(), output.w());
  const double* y = output.data();
  const double* gy = grad_output.data();
  double* gx = grad_input.data();
  const auto size = static_cast<std::ptrdiff_t>(output.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < size; ++i) gx[i] = y[i] > 0.0 ? gy[i] : 0.0;
}

void instance_norm_forward(const Tensor& input, Tensor& output) {
  output.resize(input.n(), input.c(), input.h(), input.w());
  const int planes = input.n() * input.c();
  const int hw = input.h() * input.w();
#pragma omp parallel for schedule(static)
  for (int q = 0; q < planes; ++q) {
    const double* x = input.data() + static_cast<std::size_t>(q) * hw;
    double* y = output.data() + static_cast<std::size_t>(q) * hw;
    double mean = 0.0;
    for (int i = 0; i < hw; ++i) mean += x[i];
    mean /= hw;
    double var = 0.0;
    for (int i = 0; i < hw; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= hw;
    const double inv_std = 1.0 / std::sqrt(var + kInstanceNormEpsilon);
    for (int i = 0; i < hw; ++i) y[i] = (x[i] - mean) * inv_std;
  }
}

void instance_norm_backward(const Tensor& input, const Tensor& output,
                            const Tensor& grad_output, Tensor& grad_input) {
  // dx = inv_std * (dy - mean(dy) - y * mean(dy * y)).
  grad_input.resize(output.n(), output.c(), output.h(), output.w());
  const int planes = output.n() * output.c();
  const int hw = output.h() * output.w();
#pragma omp parallel for schedule(static)
  for (int q = 0; q < planes; ++q) {
    const double* x = input.data() + static_cast<std::size_t>(q) * hw;
    const double* y = output.data() + static_cast<std::size_t>(q) * hw;
    const double* gy = grad_output.data() + static_cast<std::size_t>(q) * hw;
    double* gx = grad_input.data() + static_cast<std::size_t>(q) * hw;
    double mean = 0.0;
    for (int i = 0; i < hw; ++i) mean += x[i];
    mean /= hw;
    double var = 0.0;
    for (int i = 0; i < hw; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= hw;
    const double inv_std = 1.0 / std::sqrt(var + kInstanceNormEpsilon);
    double mean_gy = 0.0, mean_gyy = 0.0;
    for (int i = 0; i < hw; ++i) {
      mean_gy += gy[i];
      mean_gyy += gy[i] * y[i];
    }
    mean_gy /= hw;
    mean_gyy /= hw;
    for (int i = 0; i < hw; ++i) gx[i] = inv_std * (gy[i] - mean_gy - y[i] * mean_gyy);
  }
}

void global_avg_pool_forward(const Tensor& input, Tensor& output) {
  output.resize(input.n(), input.c(), 1, 1);
  const int planes = input.n() * input.c();
  const int hw = input.h() * input.w();
  for (int q = 0; q < planes; ++q) {
    const double* x = input.data() + static_cast<std::size_t>(q) * hw;
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += x[i];
    output.data()[q] = s / hw;
  }
}

void global_avg_pool_backward(const Tensor& grad_output, Tensor& grad_input) {
  const int planes = grad_input.n() * grad_input.c();
  const int hw = grad_input.h() * grad_input.w();
  for (int q = 0; q < planes; ++q) {
    const double g = grad_output.data()[q] / hw;
    std::fill(grad_input.data() + static_cast<std::size_t>(q) * hw,
              grad_input.data() + static_cast<std::size_t>(q + 1) * hw, g);
  }
}

namespace reference {

namespace {

double input_at(const Tensor& t, int n, int c, int h, int w) {
  if (h < 0 || h >= t.h() || w < 0 || w >= t.w()) return 0.0;
  return t(n, c, h, w);
}

std::size_t widx(const ConvGeometry& g, int o, int c, int i, int j) {
  return ((static_cast<std::size_t>(o) * g.in_channels + c) * g.kernel_h + i) * g.kernel_w + j;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const Tensor& input, std::span<const double> weight,
                    std::span<const double> bias, Tensor& output) {
  check_conv_shapes(g, input, weight, bias);
  output.resize(input.n(), g.out_channels, g.out_h(input.h()), g.out_w(input.w()));
  for (int n = 0; n < input.n(); ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oh = 0; oh < output.h(); ++oh)
        for (int ow = 0; ow < output.w(); ++ow) {
          double acc = bias[static_cast<std::size_t>(o)];
          for (int c = 0; c < g.in_channels; ++c)
            for (int i = 0; i < g.kernel_h; ++i)
              for (int j = 0; j < g.kernel_w; ++j)
                acc += weight[widx(g, o, c, i, j)] *
                       input_at(input, n, c, oh * g.stride - g.pad_h + i, ow * g.stride - g.pad_w + j);
          output(n, o, oh, ow) = acc;
        }
}

void conv2d_backward(const ConvGeometry& g, const Tensor& input, std::span<const double> weight,
                     const Tensor& grad_output, Tensor* grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias) {
  check_conv_shapes(g, input, weight, grad_bias);
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
  if (grad_input) {
    grad_input->resize(input.n(), input.c(), input.h(), input.w());
    grad_input->fill(0.0);
  }
  for (int n = 0; n < input.n(); ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oh = 0; oh < grad_output.h(); ++oh)
        for (int ow = 0; ow < grad_output.w(); ++ow) {
          const double gy = grad_output(n, o, oh, ow);
          grad_bias[static_cast<std::size_t>(o)] += gy;
          for (int c = 0; c < g.in_channels; ++c)
            for (int i = 0; i < g.kernel_h; ++i)
              for (int j = 0; j < g.kernel_w; ++j) {
                const int ih = oh * g.stride - g.pad_h + i;
                const int iw = ow * g.stride - g.pad_w + j;
                if (ih < 0 || ih >= input.h() || iw < 0 || iw >= input.w()) continue;
                grad_weight[widx(g, o, c, i, j)] += gy * input(n, c, ih, iw);
                if (grad_input) (*grad_input)(n, c, ih, iw) += gy * weight[widx(g, o, c, i, j)];
              }
        }
}

void instance_norm_forward(const Tensor& input, Tensor& output) {
  output.resize(input.n(), input.c(), input.h(), input.w());
  const double count = static_cast<double>(input.h()) * input.w();
  for (int n = 0; n < input.n(); ++n)
    for (int c = 0; c < input.c(); ++c) {
      double mean = 0.0;
      for (int h = 0; h < input.h(); ++h)
        for (int w = 0; w < input.w(); ++w) mean += input(n, c, h, w);
      mean /= count;
      double var = 0.0;
      for (int h = 0; h < input.h(); ++h)
        for (int w = 0; w < input.w(); ++w) var += std::pow(input(n, c, h, w) - mean, 2);
      var /= count;
      for (int h = 0; h < input.h(); ++h)
        for (int w = 0; w < input.w(); ++w)
          output(n, c, h, w) = (input(n, c, h, w) - mean) / std::sqrt(var + kInstanceNormEpsilon);
    }
}

void instance_norm_backward(const Tensor& input, const Tensor& grad_output, Tensor& grad_input) {
  // Full Jacobian-vector product: dy_j/dx_i = (delta_ij - 1/m - xhat_i xhat_j / m) / sigma.
  grad_input.resize(input.n(), input.c(), input.h(), input.w());
  const int hw = input.h() * input.w();
  const double m = hw;
  for (int n = 0; n < input.n(); ++n)
    for (int c = 0; c < input.c(); ++c) {
      const double* x = &input.data()[(static_cast<std::size_t>(n) * input.c() + c) * hw];
      const double* gy = &grad_output.data()[(static_cast<std::size_t>(n) * input.c() + c) * hw];
      double* gx = &grad_input.data()[(static_cast<std::size_t>(n) * input.c() + c) * hw];
      double mean = 0.0;
      for (int i = 0; i < hw; ++i) mean += x[i];
      mean /= m;
      double var = 0.0;
      for (int i = 0; i < hw; ++i) var += (x[i] - mean) * (x[i] - mean);
      var /= m;
      const double sigma = std::sqrt(var + kInstanceNormEpsilon);
      for (int i = 0; i < hw; ++i) {
        const double xi = (x[i] - mean) / sigma;
        double acc = 0.0;
        for (int j = 0; j < hw; ++j) {
          const double xj = (x[j] - mean) / sigma;
          acc += gy[j] * ((i == j ? 1.0 : 0.0) - 1.0 / m - xi * xj / m) / sigma;
        }
        gx[i] = acc;
      }
    }
}

}  // namespace reference

}  // namespace shapenet::kernels
