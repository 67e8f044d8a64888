// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels versus the OpenMP/GEMM kernels. Set
// OMP_NUM_THREADS to control the parallel side.

#include "shapenet/kernels.hpp"
#include "shapenet/pca_layer.hpp"

#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include <random>
#include <vector>

namespace {

using namespace shapenet;
using kernels::ConvGeometry;

Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  Tensor t(n, c, h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = d(rng);
  return t;
}

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Args: batch, channels, spatial size.
ConvGeometry geometry(const benchmark::State& state) {
  ConvGeometry g;
  g.in_channels = g.out_channels = static_cast<int>(state.range(1));
  return g;
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  const ConvGeometry g = geometry(state);
  const int n = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(2));
  const Tensor in = random_tensor(n, g.in_channels, s, s, 1);
  const auto w = random_values(g.weight_count(), 2);
  const auto b = random_values(static_cast<std::size_t>(g.out_channels), 3);
  Tensor out;
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::conv2d_forward(g, in, w, b, out);
    } else {
      kernels::conv2d_forward(g, in, w, b, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state) {
  const ConvGeometry g = geometry(state);
  const int n = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(2));
  const Tensor in = random_tensor(n, g.in_channels, s, s, 1);
  const auto w = random_values(g.weight_count(), 2);
  const Tensor gout = random_tensor(n, g.out_channels, g.out_h(s), g.out_w(s), 4);
  std::vector<double> gw(w.size()), gb(static_cast<std::size_t>(g.out_channels));
  Tensor gin;
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::conv2d_backward(g, in, w, gout, &gin, gw, gb);
    } else {
      kernels::conv2d_backward(g, in, w, gout, &gin, gw, gb);
    }
    benchmark::DoNotOptimize(gin.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Reference>
void BM_InstanceNorm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), c = static_cast<int>(state.range(1)),
            s = static_cast<int>(state.range(2));
  const Tensor in = random_tensor(n, c, s, s, 5);
  const Tensor gout = random_tensor(n, c, s, s, 6);
  Tensor out, gin;
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::instance_norm_forward(in, out);
      kernels::reference::instance_norm_backward(in, gout, gin);
    } else {
      kernels::instance_norm_forward(in, out);
      kernels::instance_norm_backward(in, out, gout, gin);
    }
    benchmark::DoNotOptimize(gin.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

std::shared_ptr<const ShapeModel> bench_model(int landmarks, int p_max) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d(0.0, 1.0);
  auto m = std::make_shared<ShapeModel>();
  m->num_landmarks = landmarks;
  m->mean_shape = Eigen::VectorXd::NullaryExpr(2 * landmarks, [&] { return 20.0 * d(rng); });
  m->eigenvectors = Eigen::MatrixXd::NullaryExpr(p_max, 2 * landmarks, [&] { return d(rng); });
  m->eigenvalues = Eigen::VectorXd::Ones(p_max);
  m->scaling = EigenvectorScaling::sqrt_eigenvalue;
  return m;
}

// Args: batch, p.
template <bool Reference>
void BM_PcaLayer(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0)), p = static_cast<int>(state.range(1));
  const auto model = bench_model(68, 75);
  const PcaLayer layer(model, p);
  BatchMatrix params = BatchMatrix::Random(batch, p + 4);
  params.col(p).array() += 2.0;
  const BatchMatrix g = BatchMatrix::Random(batch, 136);
  for (auto _ : state) {
    if constexpr (Reference) {
      benchmark::DoNotOptimize(reference::pca_forward(*model, p, params).data());
      benchmark::DoNotOptimize(reference::pca_backward(*model, p, params, g).data());
    } else {
      benchmark::DoNotOptimize(layer.forward(params).data());
      benchmark::DoNotOptimize(layer.backward(params, g).data());
    }
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({8, 8, 64})->Args({8, 32, 32})->Args({4, 64, 56})->Unit(benchmark::kMillisecond);
}

BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/parallel")->Apply(conv_args);
BENCHMARK(BM_InstanceNorm<true>)->Name("instance_norm/reference")->Apply(conv_args);
BENCHMARK(BM_InstanceNorm<false>)->Name("instance_norm/parallel")->Apply(conv_args);
BENCHMARK(BM_PcaLayer<true>)->Name("pca_layer/reference")->Args({64, 5})->Args({64, 75});
BENCHMARK(BM_PcaLayer<false>)->Name("pca_layer/parallel")->Args({64, 5})->Args({64, 75});

}  // namespace

BENCHMARK_MAIN();
