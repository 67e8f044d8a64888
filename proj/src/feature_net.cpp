// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/feature_net.hpp"

#include "shapenet/error.hpp"

#include <cmath>
#include <random>

namespace shapenet {

namespace detail {

class Layer {
 public:
  virtual ~Layer() = default;
  virtual void forward(const Tensor& in, Tensor& out, const double* params) const = 0;
  virtual void backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                        Tensor* grad_in, const double* params, double* grad_params) const = 0;
  virtual std::size_t param_count() const { return 0; }

  std::size_t offset = 0;
};

namespace {

class ConvLayer final : public Layer {
 public:
  explicit ConvLayer(kernels::ConvGeometry g) : geometry(g) {}

  void forward(const Tensor& in, Tensor& out, const double* params) const override {
    kernels::conv2d_forward(geometry, in, weights(params), bias(params), out);
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor* grad_in,
                const double* params, double* grad_params) const override {
    kernels::conv2d_backward(geometry, in, weights(params), grad_out, grad_in,
                             {grad_params + offset, geometry.weight_count()},
                             {grad_params + offset + geometry.weight_count(),
                              static_cast<std::size_t>(geometry.out_channels)});
  }

  std::size_t param_count() const override {
    return geometry.weight_count() + static_cast<std::size_t>(geometry.out_channels);
  }

  kernels::ConvGeometry geometry;

 private:
  std::span<const double> weights(const double* params) const {
    return {params + offset, geometry.weight_count()};
  }
  std::span<const double> bias(const double* params) const {
    return {params + offset + geometry.weight_count(),
            static_cast<std::size_t>(geometry.out_channels)};
  }
};

class ReluLayer final : public Layer {
 public:
  void forward(const Tensor& in, Tensor& out, const double*) const override {
    kernels::relu_forward(in, out);
  }
  void backward(const Tensor&, const Tensor& out, const Tensor& grad_out, Tensor* grad_in,
                const double*, double*) const override {
    if (grad_in) kernels::relu_backward(out, grad_out, *grad_in);
  }
};

class InstanceNormLayer final : public Layer {
 public:
  void forward(const Tensor& in, Tensor& out, const double*) const override {
    kernels::instance_norm_forward(in, out);
  }
  void backward(const Tensor& in, const Tensor& out, const Tensor& grad_out, Tensor* grad_in,
                const double*, double*) const override {
    if (grad_in) kernels::instance_norm_backward(in, out, grad_out, *grad_in);
  }
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  void forward(const Tensor& in, Tensor& out, const double*) const override {
    kernels::global_avg_pool_forward(in, out);
  }
  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor* grad_in,
                const double*, double*) const override {
    if (!grad_in) return;
    grad_in->resize(in.n(), in.c(), in.h(), in.w());
    kernels::global_avg_pool_backward(grad_out, *grad_in);
  }
};

}  // namespace
}  // namespace detail

std::vector<Stage> full_plan() {
  using K = StageKind;
  return {{K::conv_block, 64, 2},  {K::downsample, 64, 1},  {K::conv_block, 128, 2},
          {K::downsample, 128, 1}, {K::conv_block, 256, 4}, {K::downsample, 256, 1},
          {K::conv_block, 512, 4}, {K::downsample, 256, 1}, {K::conv_block, 128, 3}};
}

std::vector<Stage> compact_plan(int base_channels) {
  using K = StageKind;
  const int c = base_channels;
  return {{K::conv_block, c, 1},     {K::downsample, c, 1},     {K::conv_block, 2 * c, 1},
          {K::downsample, 2 * c, 1}, {K::conv_block, 4 * c, 1}, {K::downsample, 4 * c, 1},
          {K::conv_block, 4 * c, 1}, {K::downsample, 4 * c, 1}, {K::conv_block, 4 * c, 1}};
}

std::vector<int> spatial_trace(const NetConfig& config) {
  std::vector<int> trace{config.input_size};
  int size = config.input_size;
  for (std::size_t s = 0; s < config.plan.size(); ++s) {
    const Stage& stage = config.plan[s];
    if (stage.kind == StageKind::conv_block) {
      size -= 2 * stage.frequency;
    } else {
      size = (size + 2 - 3) / 2 + 1;
    }
    if (size < 1) {
      throw Error(ErrorCode::architecture,
                  "stage " + std::to_string(s + 1) + " (" +
                      (stage.kind == StageKind::conv_block ? "C2DB" : "DN") +
                      ") produces spatial extent " + std::to_string(size) + " for input " +
                      std::to_string(config.input_size));
    }
    trace.push_back(size);
  }
  return trace;
}

Network::Network(NetConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  if (config_.in_channels < 1 || config_.num_shape_params < 0 || config_.plan.empty()) {
    throw Error(ErrorCode::architecture, "invalid network configuration");
  }
  for (const Stage& stage : config_.plan) {
    if (stage.channels < 1 || stage.frequency < 1) {
      throw Error(ErrorCode::architecture, "stage channels and frequency must be positive");
    }
  }
  spatial_trace(config_);

  std::vector<std::pair<std::string, detail::ConvLayer*>> convs;
  auto add_conv = [&](const std::string& name, kernels::ConvGeometry g) {
    auto layer = std::make_unique<detail::ConvLayer>(g);
    convs.emplace_back(name, layer.get());
    layers_.push_back(std::move(layer));
  };

  int channels = config_.in_channels;
  for (std::size_t s = 0; s < config_.plan.size(); ++s) {
    const Stage& stage = config_.plan[s];
    const std::string prefix = "stage" + std::to_string(s + 1);
    if (stage.kind == StageKind::conv_block) {
      for (int r = 0; r < stage.frequency; ++r) {
        const std::string name = prefix + ".conv" + std::to_string(r);
        if (config_.separable_convs) {
          const int mid = std::min(channels, stage.channels);
          add_conv(name + "a", {channels, mid, 3, 1, 1, 0, 0});
          add_conv(name + "b", {mid, stage.channels, 1, 3, 1, 0, 0});
        } else {
          add_conv(name, {channels, stage.channels, 3, 3, 1, 0, 0});
        }
        layers_.push_back(std::make_unique<detail::ReluLayer>());
        channels = stage.channels;
      }
    } else {
      add_conv(prefix + ".down", {channels, stage.channels, 3, 3, 2, 1, 1});
      layers_.push_back(std::make_unique<detail::ReluLayer>());
      layers_.push_back(std::make_unique<detail::InstanceNormLayer>());
      channels = stage.channels;
    }
  }
  add_conv("head", {channels, config_.output_size(), 1, 1, 1, 0, 0});
  layers_.push_back(std::make_unique<detail::GlobalAvgPoolLayer>());

  std::size_t offset = 0;
  for (auto& [name, conv] : convs) {
    conv->offset = offset;
    const auto& g = conv->geometry;
    tensors_.push_back({name + ".weight",
                        {g.out_channels, g.in_channels, g.kernel_h, g.kernel_w},
                        offset,
                        g.weight_count()});
    tensors_.push_back({name + ".bias",
                        {g.out_channels},
                        offset + g.weight_count(),
                        static_cast<std::size_t>(g.out_channels)});
    offset += conv->param_count();
  }
  params_.assign(offset, 0.0);

  // He-normal initialization; the head starts near zero so the untrained
  // network outputs its biases: zero shape weights, scale 1, rotation 0,
  // translation at the crop centre.
  std::mt19937_64 rng(init_seed);
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& g = convs[i].second->geometry;
    const double fan_in = static_cast<double>(g.in_channels) * g.kernel_h * g.kernel_w;
    const bool head = i + 1 == convs.size();
    const double stddev = head ? 1e-3 / std::sqrt(fan_in) : std::sqrt(2.0 / fan_in);
    std::normal_distribution<double> normal(0.0, stddev);
    double* w = params_.data() + convs[i].second->offset;
    for (std::size_t k = 0; k < g.weight_count(); ++k) w[k] = normal(rng);
  }
  double* head_bias = params_.data() + tensors_.back().offset;
  const int p = config_.num_shape_params;
  head_bias[p] = 1.0;
  head_bias[p + 2] = 0.5 * config_.input_size;
  head_bias[p + 3] = 0.5 * config_.input_size;
}

Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

void Network::check_input(const Tensor& images) const {
  if (images.c() != config_.in_channels || images.h() != config_.input_size ||
      images.w() != config_.input_size) {
    throw Error(ErrorCode::shape,
                "network expects " + std::to_string(config_.in_channels) + "x" +
                    std::to_string(config_.input_size) + "x" + std::to_string(config_.input_size) +
                    " inputs, got " + std::to_string(images.c()) + "x" +
                    std::to_string(images.h()) + "x" + std::to_string(images.w()));
  }
}

BatchMatrix Network::forward(const Tensor& images) const {
  check_input(images);
  Tensor a = images;
  Tensor b;
  for (const auto& layer : layers_) {
    layer->forward(a, b, params_.data());
    std::swap(a, b);
  }
  BatchMatrix out(a.n(), a.c());
  std::copy(a.data(), a.data() + a.size(), out.data());
  return out;
}

BatchMatrix Network::forward(const Tensor& images, Activations& activations) const {
  check_input(images);
  activations.values.resize(layers_.size() + 1);
  activations.values[0] = images;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->forward(activations.values[i], activations.values[i + 1], params_.data());
  }
  const Tensor& a = activations.values.back();
  BatchMatrix out(a.n(), a.c());
  std::copy(a.data(), a.data() + a.size(), out.data());
  return out;
}

void Network::backward(const Activations& activations, const BatchMatrix& grad_output,
                       std::span<double> grad_params) const {
  if (activations.values.size() != layers_.size() + 1) {
    throw Error(ErrorCode::shape, "activations do not belong to this network");
  }
  if (grad_params.size() != params_.size()) {
    throw Error(ErrorCode::dimension, "parameter gradient buffer has the wrong size");
  }
  const Tensor& out = activations.values.back();
  if (grad_output.rows() != out.n() || grad_output.cols() != out.c()) {
    throw Error(ErrorCode::dimension, "output gradient has the wrong shape");
  }
  Tensor grad(out.n(), out.c(), 1, 1);
  std::copy(grad_output.data(), grad_output.data() + grad_output.size(), grad.data());
  Tensor grad_in;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    layers_[i]->backward(activations.values[i], activations.values[i + 1], grad,
                         i == 0 ? nullptr : &grad_in, params_.data(), grad_params.data());
    std::swap(grad, grad_in);
  }
}

Network build_network(const NetConfig& config, std::uint64_t init_seed) {
  return Network(config, init_seed);
}

std::size_t count_parameters(const Network& network) { return network.num_parameters(); }

std::vector<ParamVector> net_forward(const Network& network, const Tensor& images) {
  const BatchMatrix out = network.forward(images);
  std::vector<ParamVector> params;
  params.reserve(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index b = 0; b < out.rows(); ++b) {
    params.push_back(ParamVector::unpack(out.row(b).transpose()));
  }
  return params;
}

}  // namespace shapenet
