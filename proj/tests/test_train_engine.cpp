// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/error.hpp"
#include "shapenet/eval_metrics.hpp"
#include "shapenet/synth_data.hpp"
#include "shapenet/train_engine.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace shapenet;

namespace {

constexpr int kCrop = 64;

SynthDataset tiny_synth(int n, std::uint64_t seed = 3) {
  SynthSpec spec;
  spec.num_samples = n;
  spec.num_landmarks = 8;
  spec.num_modes = 2;
  spec.mode_amplitudes = {5.0, 3.0};
  spec.base_radius = 18.0;
  spec.canvas_size = 64;
  spec.seed = seed;
  return generate_dataset(spec);
}

Dataset tiny_dataset(int n, std::uint64_t seed = 3) {
  return to_dataset(tiny_synth(n, seed), CropOptions{0.2, kCrop, true});
}

NetConfig tiny_net(int p) {
  NetConfig c;
  c.in_channels = 1;
  c.num_shape_params = p;
  c.input_size = kCrop;
  c.plan = compact_plan(2);
  return c;
}

std::shared_ptr<const ShapeModel> model_for(const Dataset& d, int p_max = 6) {
  ShapeModelOptions o;
  o.anchors = synth_anchor_groups(static_cast<int>(d.num_landmarks()));
  o.p_max = p_max;
  return std::make_shared<const ShapeModel>(build_shape_model(d, o));
}

TrainConfig quick_config(int p, int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.num_shape_params = p;
  t.batch_size = 4;
  t.adam.learning_rate = 3e-3;
  t.augment.enabled = false;
  return t;
}

}  // namespace

TEST_SUITE("train_engine") {
  TEST_CASE("point loss closed forms") {
    BatchMatrix target = BatchMatrix::Random(3, 10);
    BatchMatrix pred = target.array() + 2.0;
    BatchMatrix grad;
    CHECK(point_loss(pred, target, LossKind::l1, &grad) == doctest::Approx(2.0));
    CHECK(grad(1, 4) == doctest::Approx(1.0 / 30.0));
    CHECK(point_loss(pred, target, LossKind::mse, &grad) == doctest::Approx(4.0));
    CHECK(grad(2, 9) == doctest::Approx(4.0 / 30.0));
    pred = target.array() - 2.0;
    point_loss(pred, target, LossKind::l1, &grad);
    CHECK(grad(0, 0) == doctest::Approx(-1.0 / 30.0));
    CHECK_THROWS_AS(point_loss(BatchMatrix(2, 4), BatchMatrix(2, 6), LossKind::l1), Error);
  }

  TEST_CASE("point loss matches a naive loop") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<LandmarkSet> a, b;
      double l1 = 0.0, l2 = 0.0;
      for (int i = 0; i < 5; ++i) {
        const Eigen::VectorXd x = testing::random_vector(rng, 12, 5.0);
        const Eigen::VectorXd y = testing::random_vector(rng, 12, 5.0);
        a.push_back(LandmarkSet::from_flat(x, Frame::crop));
        b.push_back(LandmarkSet::from_flat(y, Frame::crop));
        for (int k = 0; k < 12; ++k) {
          l1 += std::abs(x[k] - y[k]);
          l2 += (x[k] - y[k]) * (x[k] - y[k]);
        }
      }
      CHECK(point_loss(a, b, LossKind::l1) == doctest::Approx(l1 / 60.0).epsilon(1e-12));
      CHECK(point_loss(a, b, LossKind::mse) == doctest::Approx(l2 / 60.0).epsilon(1e-12));
    }
  }

  TEST_CASE("adam matches the textbook update") {
    AdamConfig cfg;
    cfg.learning_rate = 0.05;
    Adam adam(3, cfg);
    std::vector<double> p{1.0, -2.0, 0.5}, ref = p;
    std::vector<double> m(3, 0.0), v(3, 0.0);
    std::mt19937_64 rng(5);
    for (int t = 1; t <= 5; ++t) {
      std::vector<double> g(3);
      for (auto& x : g) x = testing::uniform(rng, -1.0, 1.0);
      adam.step(p, g);
      for (int i = 0; i < 3; ++i) {
        m[i] = 0.9 * m[i] + 0.1 * g[i];
        v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
        const double mh = m[i] / (1.0 - std::pow(0.9, t));
        const double vh = v[i] / (1.0 - std::pow(0.999, t));
        ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
      }
      for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
    CHECK(adam.steps() == 5);
    // First step moves every coordinate by ~lr.
    Adam fresh(1, cfg);
    std::vector<double> q{0.0};
    const std::vector<double> g{123.0};
    fresh.step(q, g);
    CHECK(q[0] == doctest::Approx(-0.05));
    std::vector<double> wrong(2);
    CHECK_THROWS_AS(fresh.step(wrong, g), Error);
  }

  TEST_CASE("config validation and json round trip") {
    TrainConfig t;
    t.epochs = 7;
    t.loss = LossKind::mse;
    t.adam.learning_rate = 2.5e-4;
    t.batch_size = 3;
    t.augment.max_rotation_deg = 12.0;
    const TrainConfig back = train_config_from_json(to_json(t));
    CHECK(back.epochs == 7);
    CHECK(back.loss == LossKind::mse);
    CHECK(back.adam == t.adam);
    CHECK(back.batch_size == 3);
    CHECK(back.augment.max_rotation_deg == 12.0);
    const NetConfig n = tiny_net(5);
    CHECK(net_config_from_json(to_json(n)) == n);
    CHECK(net_config_from_json(nlohmann::json{{"plan", "full"}}).plan == full_plan());
    CHECK_THROWS_AS(net_config_from_json(nlohmann::json{{"plan", "huge"}}), Error);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"loss", "huber"}}), Error);
    TrainConfig bad;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = {};
    bad.validation_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
  }

  TEST_CASE("checkpoint container round trip and errors") {
    Checkpoint c;
    c.net = tiny_net(3);
    Network net(c.net, 9);
    c.parameters.assign(net.parameters().begin(), net.parameters().end());
    c.parameters[0] = 0.1;  // not representable in short decimal form
    c.model_fingerprint = "0123456789abcdef";
    c.epoch = 4;
    c.validation_error = 1.0 / 3.0;
    c.train.num_shape_params = 3;
    const std::string bytes = serialize_checkpoint(c);
    const Checkpoint back = parse_checkpoint(bytes);
    CHECK(back.parameters == c.parameters);
    CHECK(back.net == c.net);
    CHECK(back.model_fingerprint == c.model_fingerprint);
    CHECK(back.epoch == 4);
    CHECK(back.validation_error == c.validation_error);
    CHECK(serialize_checkpoint(back) == bytes);

    std::string future = bytes;
    const auto pos = future.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    future.replace(pos, 11, "\"version\":2");
    try {
      parse_checkpoint(future);
      FAIL("expected version error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::version);
    }
    CHECK_THROWS_AS(parse_checkpoint("garbage"), Error);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 8)), Error);
    Checkpoint wrong = c;
    wrong.parameters.pop_back();
    CHECK_THROWS_AS(serialize_checkpoint(wrong), Error);

    const auto dir = testing::temp_dir("ckpt");
    save_checkpoint(c, (dir / "c.bin").string());
    CHECK(load_checkpoint((dir / "c.bin").string()).parameters == c.parameters);
  }

  TEST_CASE("canonical frame and shape model construction") {
    const Dataset d = tiny_dataset(12);
    const LandmarkSet canon = to_canonical(d.samples[0]);
    CHECK(canon.frame() == Frame::canonical);
    CHECK(canon[0].x == doctest::Approx(d.samples[0].landmarks[0].x - kCrop / 2.0));
    const auto model = model_for(d, 4);
    CHECK(model->num_landmarks == 8);
    CHECK(model->p_max() == 4);
    CHECK(model->alignment.method == AlignmentMethod::anchors);
    // Mean near the crop centre in the canonical frame.
    const LandmarkSet mean = LandmarkSet::from_flat(model->mean_shape, Frame::canonical);
    CHECK(std::abs(mean.centroid().x) < 8.0);
    CHECK(std::abs(mean.centroid().y) < 8.0);
    ShapeModelOptions procrustes;
    procrustes.alignment = AlignmentMethod::procrustes;
    procrustes.p_max = 4;
    CHECK(build_shape_model(d, procrustes).alignment.method == AlignmentMethod::procrustes);
    try {
      build_shape_model(Dataset{}, ShapeModelOptions{});
      FAIL("expected empty dataset error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::empty_dataset);
    }
  }

  TEST_CASE("end-to-end gradient matches finite differences") {
    const Dataset d = tiny_dataset(4);
    const auto model = model_for(d, 3);
    const PcaLayer layer(model, 3);
    Network net(tiny_net(3), 21);
    // Zero-initialized biases put dead (all-zero) regions exactly on the ReLU kink, where the
    // central difference averages both one-sided slopes. Move them off it.
    std::mt19937_64 init(5);
    for (const TensorInfo& t : net.tensors()) {
      if (!t.name.ends_with(".bias") || t.name.starts_with("head")) continue;
      for (std::size_t i = 0; i < t.count; ++i) net.parameters()[t.offset + i] = testing::uniform(init, 0.02, 0.05);
    }
    std::vector<std::size_t> idx{0, 1, 2};
    const Tensor images = stack_images(d.samples, idx);
    const BatchMatrix gt = landmark_matrix(d.samples, idx);
    auto loss_at = [&](const Network& n) {
      return point_loss(layer.forward(n.forward(images)), gt, LossKind::mse);
    };
    Activations acts;
    const BatchMatrix params = net.forward(images, acts);
    BatchMatrix grad_pred;
    point_loss(layer.forward(params), gt, LossKind::mse, &grad_pred);
    std::vector<double> grads(net.num_parameters());
    net.backward(acts, layer.backward(params, grad_pred), grads);

    std::mt19937_64 rng(8);
    int checked = 0;
    for (const TensorInfo& t : net.tensors()) {
      for (int k = 0; k < 2; ++k) {
        const std::size_t i = t.offset + std::uniform_int_distribution<std::size_t>(0, t.count - 1)(rng);
        const double orig = net.parameters()[i];
        const double h = 1e-5 * std::max(1.0, std::abs(orig));
        net.parameters()[i] = orig + h;
        const double up = loss_at(net);
        net.parameters()[i] = orig - h;
        const double down = loss_at(net);
        net.parameters()[i] = orig;
        const double fd = (up - down) / (2.0 * h);
        CHECK_MESSAGE(testing::rel_err(fd, grads[i], 1e-6) < 1e-3, t.name, " fd ", fd, " analytic ", grads[i]);
        ++checked;
      }
    }
    CHECK(checked >= 10);
  }

  TEST_CASE("training reduces the loss") {
    const Dataset d = tiny_dataset(24);
    const auto model = model_for(d, 4);
    std::vector<double> ratios;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      TrainConfig t = quick_config(4, 10);
      t.seed = seed;
      const TrainResult r = train(d, t, tiny_net(4), model);
      REQUIRE(r.log.size() == 20);
      CHECK(r.log[0].split == "train");
      CHECK(std::isnan(r.log[0].normalized_error));
      CHECK(r.log[1].split == "validation");
      ratios.push_back(r.log[18].loss / r.log[0].loss);
      // The best checkpoint has the lowest validation error seen.
      double best = 1e300;
      for (const auto& rec : r.log)
        if (rec.split == "validation") best = std::min(best, rec.normalized_error);
      CHECK(r.best.validation_error == best);
      CHECK(r.last.epoch == 10);
    }
    std::sort(ratios.begin(), ratios.end());
    CHECK(ratios[1] < 1.0);
  }

  TEST_CASE("training is deterministic and leaves the shape model untouched") {
    const Dataset d = tiny_dataset(6);
    const auto model = model_for(d, 3);
    const std::string fp = model_fingerprint(*model);
    const Eigen::MatrixXd eig = model->eigenvectors;
    TrainConfig t = quick_config(3, 2);
    t.augment.enabled = true;
    t.seed = 11;
    const TrainResult a = train(d, t, tiny_net(3), model);
    const TrainResult b = train(d, t, tiny_net(3), model);
    CHECK(a.last.parameters == b.last.parameters);
    CHECK(model_fingerprint(*model) == fp);
    CHECK((model->eigenvectors.array() == eig.array()).all());
    CHECK(a.best.model_fingerprint == fp);
  }

  TEST_CASE("smoke: four samples, one epoch, predictions and mismatches") {
    const Dataset d = tiny_dataset(4);
    const auto model = model_for(d, 3);
    const TrainResult r = train(d, quick_config(3, 1), tiny_net(3), model);
    const LandmarkDetector det(r.last, model);
    const Tensor images = stack_images(d.samples);
    const auto preds = det.predict(images);
    REQUIRE(preds.size() == 4);
    CHECK(preds[0].landmarks.size() == 8);
    CHECK(preds[0].landmarks.frame() == Frame::crop);
    CHECK(preds[0].params.weights.size() == 3);

    // Batch composition does not change a prediction.
    for (std::size_t i = 0; i < 4; ++i) {
      const std::vector<std::size_t> one{i};
      const auto single = det.predict(stack_images(d.samples, one));
      for (std::size_t k = 0; k < 8; ++k) {
        CHECK(std::abs(single[0].landmarks[k].x - preds[i].landmarks[k].x) < 1e-10);
        CHECK(std::abs(single[0].landmarks[k].y - preds[i].landmarks[k].y) < 1e-10);
      }
    }

    ShapeModel other = *model;
    other.mean_shape[0] += 1.0;
    try {
      LandmarkDetector bad(r.last, std::make_shared<const ShapeModel>(other));
      FAIL("expected model mismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::model_mismatch);
    }

    const Dataset wrong_l = to_dataset([] {
      SynthSpec s;
      s.num_samples = 2;
      s.num_landmarks = 10;
      s.num_modes = 0;
      s.mode_amplitudes = {};
      s.base_radius = 18.0;
      s.canvas_size = 64;
      return generate_dataset(s);
    }(), CropOptions{0.2, kCrop, true});
    try {
      train(wrong_l, quick_config(3, 1), tiny_net(3), model);
      FAIL("expected model mismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::model_mismatch);
    }
    try {
      train(Dataset{}, quick_config(3, 1), tiny_net(3), model);
      FAIL("expected empty dataset");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::empty_dataset);
    }
    CHECK_THROWS_AS(train(d, quick_config(2, 1), tiny_net(3), model), Error);
  }

  TEST_CASE("divergence is reported") {
    const Dataset d = tiny_dataset(4);
    const auto model = model_for(d, 3);
    TrainConfig t = quick_config(3, 3);
    t.adam.learning_rate = 1e300;
    try {
      train(d, t, tiny_net(3), model);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::divergence);
    }
  }

  TEST_CASE("epoch log records are json lines") {
    const auto j = nlohmann::json::parse(format_log_record({3, "validation", 0.5, 0.25}));
    CHECK(j["epoch"] == 3);
    CHECK(j["split"] == "validation");
    CHECK(j["normalized_error"].get<double>() == 0.25);
    CHECK(nlohmann::json::parse(format_log_record({1, "train", 0.5, std::nan("")}))["normalized_error"].is_null());
  }
}
