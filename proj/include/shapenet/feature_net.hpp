// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/kernels.hpp"
#include "shapenet/pca_layer.hpp"
#include "shapenet/tensor.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace shapenet {

enum class StageKind {
  conv_block,  // `frequency` x (3x3 conv, stride 1, no padding, ReLU)
  downsample,  // 3x3 conv, stride 2, padding 1, ReLU, instance normalization
};

struct Stage {
  StageKind kind;
  int channels;
  int frequency;

  friend bool operator==(const Stage&, const Stage&) = default;
};

/// The nine-stage plan: channels (64, 64, 128, 128, 256, 256, 512, 256, 128),
/// repetitions (2, 1, 2, 1, 4, 1, 4, 1, 3). Needs an input of at least 205 px.
std::vector<Stage> full_plan();

/// Single-repetition nine-stage plan with narrow channels, usable down to
/// 63 px inputs. Intended for CPU-only training runs.
std::vector<Stage> compact_plan(int base_channels = 8);

struct NetConfig {
  int in_channels = 3;
  int num_shape_params = 15;
  bool separable_convs = false;
  int input_size = 224;
  std::vector<Stage> plan = full_plan();

  int output_size() const { return num_shape_params + kNumTransformParams; }
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Spatial extent at the input and after each stage. Throws an architecture
/// error naming the first stage that would produce a non-positive extent.
std::vector<int> spatial_trace(const NetConfig& config);

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

namespace detail {
class Layer;
}

/// Intermediate values kept by a training-mode forward pass.
struct Activations {
  std::vector<Tensor> values;
};

/// Fully convolutional regression network: image batch -> p + 4 parameters.
///
/// Inference (`forward`) is const and safe for concurrent callers. All
/// trainable scalars live in one flat buffer addressed through `tensors()`.
class Network {
 public:
  Network(NetConfig config, std::uint64_t init_seed);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const NetConfig& config() const { return config_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t num_parameters() const { return params_.size(); }

  /// images: N x C x S x S, values in [0, 1]. Returns N x (p + 4).
  BatchMatrix forward(const Tensor& images) const;
  BatchMatrix forward(const Tensor& images, Activations& activations) const;

  /// Overwrites `grad_params` with dLoss/dparameters.
  void backward(const Activations& activations, const BatchMatrix& grad_output,
                std::span<double> grad_params) const;

 private:
  void check_input(const Tensor& images) const;

  NetConfig config_;
  std::vector<std::unique_ptr<detail::Layer>> layers_;
  std::vector<TensorInfo> tensors_;
  std::vector<double> params_;
};

Network build_network(const NetConfig& config, std::uint64_t init_seed = 0);

std::size_t count_parameters(const Network& network);

/// One ParamVector per image.
std::vector<ParamVector> net_forward(const Network& network, const Tensor& images);

}  // namespace shapenet
