// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/tensor.hpp"

#include <span>

namespace shapenet::kernels {

/// 2D convolution geometry. Weights are laid out [out_c][in_c][kh][kw].
struct ConvGeometry {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;

  int out_h(int in_h) const { return (in_h + 2 * pad_h - kernel_h) / stride + 1; }
  int out_w(int in_w) const { return (in_w + 2 * pad_w - kernel_w) / stride + 1; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel_h * kernel_w;
  }
};

inline constexpr double kInstanceNormEpsilon = 1e-5;

// Batch-parallel (OpenMP) kernels. Convolutions run as im2col + GEMM per item.

void conv2d_forward(const ConvGeometry& g, const Tensor& input, std::span<const double> weight,
                    std::span<const double> bias, Tensor& output);

/// Writes grad_weight/grad_bias (overwriting) and, when grad_input is
/// non-null, the input gradient.
void conv2d_backward(const ConvGeometry& g, const Tensor& input, std::span<const double> weight,
                     const Tensor& grad_output, Tensor* grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias);

void relu_forward(const Tensor& input, Tensor& output);
void relu_backward(const Tensor& output, const Tensor& grad_output, Tensor& grad_input);

/// Per-sample, per-channel normalization over the spatial extent (no affine).
void instance_norm_forward(const Tensor& input, Tensor& output);
void instance_norm_backward(const Tensor& input, const Tensor& output,
                            const Tensor& grad_output, Tensor& grad_input);

void global_avg_pool_forward(const Tensor& input, Tensor& output);
void global_avg_pool_backward(const Tensor& grad_output, Tensor& grad_input);

/// Direct-loop serial implementations used as oracles in tests and as the
/// baseline in the kernel benchmark.
namespace reference {

void conv2d_forward(const ConvGeometry& g, const Tensor& input, std::span<const double> weight,
                    std::span<const double> bias, Tensor& output);
void conv2d_backward(const ConvGeometry& g, const Tensor& input, std::span<const double> weight,
                     const Tensor& grad_output, Tensor* grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias);
void instance_norm_forward(const Tensor& input, Tensor& output);
void instance_norm_backward(const Tensor& input, const Tensor& grad_output, Tensor& grad_input);

}  // namespace reference

}  // namespace shapenet::kernels
