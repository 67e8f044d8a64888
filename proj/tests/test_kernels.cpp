// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/kernels.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace shapenet;
using namespace shapenet::kernels;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int n, int c, int h, int w) {
  Tensor t(n, c, h, w);
  std::normal_distribution<double> d(0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = d(rng);
  return t;
}

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> v(n);
  std::normal_distribution<double> d(0.0, 0.5);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

const ConvGeometry kGeometries[] = {
    {3, 4, 3, 3, 1, 0, 0},  // C2DB conv
    {4, 5, 3, 3, 2, 1, 1},  // DN conv
    {2, 3, 3, 1, 1, 0, 0},  // separable pair
    {2, 3, 1, 3, 1, 0, 0},
    {5, 7, 1, 1, 1, 0, 0},  // head
};

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("conv output arithmetic") {
    CHECK(ConvGeometry{3, 64, 3, 3, 1, 0, 0}.out_h(224) == 222);
    CHECK(ConvGeometry{64, 64, 3, 3, 2, 1, 1}.out_h(220) == 110);
    CHECK(ConvGeometry{64, 64, 3, 3, 2, 1, 1}.out_h(53) == 27);
    CHECK(ConvGeometry{1, 1, 3, 3, 1, 0, 0}.weight_count() == 9);
  }

  TEST_CASE("single 3x3 conv matches a hand computation") {
    const ConvGeometry g{1, 1, 3, 3, 1, 0, 0};
    Tensor in(1, 1, 3, 3);
    for (int i = 0; i < 9; ++i) in.data()[i] = i + 1;
    std::vector<double> w(9, 1.0), b{0.5};
    Tensor out;
    conv2d_forward(g, in, w, b, out);
    REQUIRE(out.h() == 1);
    CHECK(out(0, 0, 0, 0) == 45.5);
  }

  TEST_CASE("parallel convolution equals the direct-loop reference") {
    std::mt19937_64 rng(1);
    for (const ConvGeometry& g : kGeometries) {
      const Tensor in = random_tensor(rng, 3, g.in_channels, 9, 8);
      const auto w = random_values(rng, g.weight_count());
      const auto b = random_values(rng, static_cast<std::size_t>(g.out_channels));
      Tensor out, ref;
      conv2d_forward(g, in, w, b, out);
      kernels::reference::conv2d_forward(g, in, w, b, ref);
      CHECK(max_abs_diff(out, ref) < 1e-12);

      const Tensor gout = random_tensor(rng, out.n(), out.c(), out.h(), out.w());
      Tensor gin, gin_ref;
      std::vector<double> gw(w.size()), gb(b.size()), gw_ref(w.size()), gb_ref(b.size());
      conv2d_backward(g, in, w, gout, &gin, gw, gb);
      kernels::reference::conv2d_backward(g, in, w, gout, &gin_ref, gw_ref, gb_ref);
      CHECK(max_abs_diff(gin, gin_ref) < 1e-12);
      for (std::size_t i = 0; i < gw.size(); ++i) CHECK(std::abs(gw[i] - gw_ref[i]) < 1e-11);
      for (std::size_t i = 0; i < gb.size(); ++i) CHECK(std::abs(gb[i] - gb_ref[i]) < 1e-11);

      // Gradients are overwritten, not accumulated.
      std::vector<double> gw2(w.size(), 123.0), gb2(b.size(), 123.0);
      conv2d_backward(g, in, w, gout, nullptr, gw2, gb2);
      CHECK(gw2 == gw);
      CHECK(gb2 == gb);
    }
  }

  TEST_CASE("convolution gradients match central differences") {
    std::mt19937_64 rng(2);
    const ConvGeometry g{2, 3, 3, 3, 2, 1, 1};
    Tensor in = random_tensor(rng, 2, 2, 6, 5);
    auto w = random_values(rng, g.weight_count());
    auto b = random_values(rng, 3);
    Tensor out;
    conv2d_forward(g, in, w, b, out);
    const Tensor gout = random_tensor(rng, out.n(), out.c(), out.h(), out.w());
    Tensor gin;
    std::vector<double> gw(w.size()), gb(b.size());
    conv2d_backward(g, in, w, gout, &gin, gw, gb);
    auto loss = [&] {
      Tensor o;
      conv2d_forward(g, in, w, b, o);
      return dot(o, gout);
    };
    const double eps = 1e-6;
    for (std::size_t i = 0; i < w.size(); i += 3) {
      const double keep = w[i];
      w[i] = keep + eps;
      const double lp = loss();
      w[i] = keep - eps;
      const double lm = loss();
      w[i] = keep;
      CHECK(testing::rel_err(gw[i], (lp - lm) / (2 * eps), 1e-6) < 1e-6);
    }
    for (std::size_t i = 0; i < in.size(); i += 5) {
      const double keep = in.data()[i];
      in.data()[i] = keep + eps;
      const double lp = loss();
      in.data()[i] = keep - eps;
      const double lm = loss();
      in.data()[i] = keep;
      CHECK(testing::rel_err(gin.data()[i], (lp - lm) / (2 * eps), 1e-6) < 1e-6);
    }
  }

  TEST_CASE("instance norm: statistics, reference agreement and gradients") {
    std::mt19937_64 rng(3);
    Tensor in = random_tensor(rng, 3, 4, 5, 6);
    for (std::size_t i = 0; i < in.size(); ++i) in.data()[i] = 3.0 + 2.0 * in.data()[i];
    Tensor out, ref;
    instance_norm_forward(in, out);
    kernels::reference::instance_norm_forward(in, ref);
    CHECK(max_abs_diff(out, ref) < 1e-12);
    for (int n = 0; n < 3; ++n) {
      for (int c = 0; c < 4; ++c) {
        double mean = 0, sq = 0;
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 6; ++x) mean += out(n, c, y, x);
        mean /= 30;
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 6; ++x) sq += (out(n, c, y, x) - mean) * (out(n, c, y, x) - mean);
        CHECK(std::abs(mean) < 1e-12);
        CHECK(sq / 30 == doctest::Approx(1.0).epsilon(1e-4));
      }
    }

    const Tensor gout = random_tensor(rng, 3, 4, 5, 6);
    Tensor gin, gin_ref;
    instance_norm_backward(in, out, gout, gin);
    kernels::reference::instance_norm_backward(in, gout, gin_ref);
    CHECK(max_abs_diff(gin, gin_ref) < 1e-10);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < in.size(); i += 7) {
      const double keep = in.data()[i];
      Tensor o;
      in.data()[i] = keep + eps;
      instance_norm_forward(in, o);
      const double lp = dot(o, gout);
      in.data()[i] = keep - eps;
      instance_norm_forward(in, o);
      const double lm = dot(o, gout);
      in.data()[i] = keep;
      CHECK(testing::rel_err(gin.data()[i], (lp - lm) / (2 * eps), 1e-6) < 1e-5);
    }
  }

  TEST_CASE("relu and global average pooling") {
    Tensor in(1, 2, 2, 2);
    const double values[] = {-1, 2, 0, 3, 4, -5, 6, -7};
    std::copy(std::begin(values), std::end(values), in.data());
    Tensor out;
    relu_forward(in, out);
    CHECK(out.data()[0] == 0);
    CHECK(out.data()[1] == 2);
    CHECK(out.data()[5] == 0);
    Tensor gout(1, 2, 2, 2, 1.0), gin;
    relu_backward(out, gout, gin);
    CHECK(gin.data()[0] == 0);
    CHECK(gin.data()[1] == 1);

    Tensor pooled;
    global_avg_pool_forward(in, pooled);
    REQUIRE(pooled.h() == 1);
    CHECK(pooled(0, 0, 0, 0) == 1.0);
    CHECK(pooled(0, 1, 0, 0) == -0.5);
    Tensor gp(1, 2, 1, 1);
    gp(0, 0, 0, 0) = 4;
    gp(0, 1, 0, 0) = 8;
    Tensor gi(1, 2, 2, 2);
    global_avg_pool_backward(gp, gi);
    CHECK(gi(0, 0, 1, 1) == 1.0);
    CHECK(gi(0, 1, 0, 1) == 2.0);
  }

  TEST_CASE("repeated backward passes are bit-identical") {
    std::mt19937_64 rng(4);
    const ConvGeometry g{3, 6, 3, 3, 1, 0, 0};
    const Tensor in = random_tensor(rng, 5, 3, 10, 10);
    const auto w = random_values(rng, g.weight_count());
    const auto b = random_values(rng, 6);
    Tensor out;
    conv2d_forward(g, in, w, b, out);
    const Tensor gout = random_tensor(rng, out.n(), out.c(), out.h(), out.w());
    std::vector<double> gw1(w.size()), gb1(6), gw2(w.size()), gb2(6);
    conv2d_backward(g, in, w, gout, nullptr, gw1, gb1);
    conv2d_backward(g, in, w, gout, nullptr, gw2, gb2);
    CHECK(gw1 == gw2);
    CHECK(gb1 == gb2);
  }
}
