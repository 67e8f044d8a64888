// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/data_pipeline.hpp"
#include "shapenet/error.hpp"
#include "shapenet/synth_data.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/SVD>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace shapenet;

namespace {

SynthSpec fixed_pose(int n, std::uint64_t seed) {
  SynthSpec s;
  s.num_samples = n;
  s.seed = seed;
  s.scale_min = s.scale_max = 1.0;
  s.max_rotation_deg = 0.0;
  s.max_translation = 0.0;
  return s;
}

/// Cosines of the principal angles between two row spaces.
Eigen::VectorXd principal_cosines(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd qa = Eigen::HouseholderQR<Eigen::MatrixXd>(a.transpose()).householderQ() *
                             Eigen::MatrixXd::Identity(a.cols(), a.rows());
  const Eigen::MatrixXd qb = Eigen::HouseholderQR<Eigen::MatrixXd>(b.transpose()).householderQ() *
                             Eigen::MatrixXd::Identity(b.cols(), b.rows());
  return Eigen::JacobiSVD<Eigen::MatrixXd>(qa.transpose() * qb).singularValues();
}

}  // namespace

TEST_SUITE("synth_data") {
  TEST_CASE("spec validation") {
    SynthSpec s;
    CHECK_NOTHROW(s.validate());
    s.num_landmarks = 4;
    s.num_modes = 5;
    s.mode_amplitudes = linear_amplitudes(5, 5, 1);
    CHECK_THROWS_AS(s.validate(), Error);  // at most 2L - 4 modes
    s.num_modes = 4;
    s.mode_amplitudes = linear_amplitudes(4, 5, 1);
    CHECK_NOTHROW(s.validate());
    s.mode_amplitudes.pop_back();
    CHECK_THROWS_AS(s.validate(), Error);
    CHECK(linear_amplitudes(4, 12, 6) == std::vector<double>{12, 10, 8, 6});
    CHECK(linear_amplitudes(1, 3, 1) == std::vector<double>{3});
  }

  TEST_CASE("modes are orthonormal and exclude similarity motions") {
    SynthSpec s;
    s.num_landmarks = 12;
    s.num_modes = 20;
    s.mode_amplitudes = linear_amplitudes(20, 10, 1);
    const Eigen::MatrixXd m = generate_modes(s);
    CHECK((m * m.transpose() - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-10);
    const Eigen::VectorXd base = regular_polygon(12, s.base_radius);
    Eigen::VectorXd tx(24), ty(24), rot(24);
    for (int i = 0; i < 12; ++i) {
      tx.segment<2>(2 * i) << 1, 0;
      ty.segment<2>(2 * i) << 0, 1;
      rot.segment<2>(2 * i) << -base[2 * i + 1], base[2 * i];
    }
    for (const Eigen::VectorXd& v : {tx, ty, rot, base}) CHECK((m * v).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(generate_modes(s) == m);
  }

  TEST_CASE("zero amplitudes give the base polygon") {
    SynthSpec s = fixed_pose(5, 1);
    s.mode_amplitudes = {0, 0, 0, 0};
    const SynthDataset d = generate_dataset(s, false);
    const LandmarkSet base = LandmarkSet::from_flat(regular_polygon(16, s.base_radius), Frame::original)
                                 .translated(64, 64);
    for (const auto& smp : d.samples) {
      for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::abs(smp.landmarks[i].x - base[i].x) < 1e-12);
        CHECK(std::abs(smp.landmarks[i].y - base[i].y) < 1e-12);
      }
    }
    CHECK(baseline_mean_shape_error(d.landmarks(), base) < 1e-14);
  }

  TEST_CASE("single mode gives mirror-symmetric displacement pairs") {
    SynthSpec s = fixed_pose(40, 2);
    s.num_modes = 1;
    s.mode_amplitudes = {8.0};
    const SynthDataset d = generate_dataset(s, false);
    const Eigen::VectorXd center = regular_polygon(16, s.base_radius) + Eigen::VectorXd::Constant(32, 64.0);
    // Every displacement is a multiple of the single mode; +w and -w mirror each other.
    for (const auto& smp : d.samples) {
      const Eigen::VectorXd disp = smp.landmarks.flat() - center;
      const double w = smp.coefficients[0];
      CHECK((disp - w * d.modes.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-9);
      const Eigen::VectorXd mirrored = center - w * d.modes.row(0).transpose();
      CHECK(((center - disp) - mirrored).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("generation is deterministic and self-consistent") {
    SynthSpec s;
    s.num_samples = 12;
    s.seed = 77;
    const SynthDataset a = generate_dataset(s);
    const SynthDataset b = generate_dataset(s);
    const ShapeModel truth = a.true_model();
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      CHECK(a.samples[i].image == b.samples[i].image);
      CHECK(a.samples[i].landmarks == b.samples[i].landmarks);
      const LandmarkSet rebuilt =
          apply_transform(a.samples[i].transform, reconstruct(truth, a.samples[i].weights), Frame::original);
      for (std::size_t k = 0; k < 16; ++k) {
        CHECK(std::abs(rebuilt[k].x - a.samples[i].landmarks[k].x) < 1e-9);
        CHECK(std::abs(rebuilt[k].y - a.samples[i].landmarks[k].y) < 1e-9);
      }
      const BoundingBox box = a.samples[i].landmarks.bounding_box();
      CHECK(box.min_x >= 0.0);
      CHECK(box.max_y <= 128.0);
      for (double v : a.samples[i].image.data) CHECK((v >= 0.0 && v <= 1.0));
    }
    s.seed = 78;
    CHECK(generate_dataset(s).samples[0].landmarks != a.samples[0].landmarks);
    s.channels = 3;
    CHECK(generate_dataset(s).samples[0].image.channels == 3);
  }

  TEST_CASE("recovered subspace matches the generator") {
    SynthSpec s = fixed_pose(2000, 5);
    const SynthDataset d = generate_dataset(s, false);
    std::vector<LandmarkSet> shapes;
    for (const auto& l : d.landmarks()) shapes.push_back(l.with_frame(Frame::canonical));
    const ShapeModel m = compute_pca(shapes, 4);
    const Eigen::VectorXd cosines = principal_cosines(m.eigenvectors, d.modes);
    CHECK(cosines.minCoeff() > std::cos(std::numbers::pi / 180.0));
  }

  TEST_CASE("baseline error is monotone in amplitude") {
    double previous = -1.0;
    for (double amp : {0.0, 2.0, 5.0, 10.0, 15.0}) {
      SynthSpec s = fixed_pose(300, 6);
      s.mode_amplitudes = std::vector<double>(4, amp);
      const SynthDataset d = generate_dataset(s, false);
      const LandmarkSet base = LandmarkSet::from_flat(d.base_shape, Frame::original);
      const double e = baseline_mean_shape_error(d.landmarks(), base);
      if (amp == 0.0) CHECK(e < 1e-14);
      CHECK(e > previous);
      previous = e;
    }
  }

  TEST_CASE("anchor groups are disjoint opposite arcs") {
    const AnchorGroups g = synth_anchor_groups(16);
    CHECK(g.first == std::vector<int>{6, 7, 8, 9});
    CHECK(g.second == std::vector<int>{14, 15, 0, 1});
    const AnchorGroups small = synth_anchor_groups(3);
    CHECK(small.first.size() == 1);
    CHECK(small.first != small.second);
  }

  TEST_CASE("written dataset loads back") {
    SynthSpec s;
    s.num_samples = 10;
    s.seed = 9;
    const SynthDataset d = generate_dataset(s);
    const auto dir = testing::temp_dir("synth");
    write_synth_dataset(d, dir.string(), 0.2);
    for (const char* f : {"landmarks.csv", "generator.csv", "modes.csv", "manifest.txt"})
      CHECK(std::filesystem::exists(dir / f));
    const auto entries = read_manifest((dir / "manifest.txt").string());
    REQUIRE(entries.size() == 10);
    CHECK(entries[7].split == Split::train);
    CHECK(entries[8].split == Split::test);
    const Dataset test = load_dataset(entries, Split::test, CropOptions{0.2, 64, true}, 1);
    REQUIRE(test.size() == 2);
    CHECK(test.samples[0].crop.source_id == d.samples[8].id);
    const Sample direct = crop_and_resize(d.samples[8].image, d.samples[8].landmarks, CropOptions{0.2, 64, true});
    CHECK(test.samples[0].landmarks == direct.landmarks);
    // PNG quantization only.
    for (std::size_t i = 0; i < direct.image.data.size(); ++i)
      CHECK(std::abs(test.samples[0].image.data[i] - direct.image.data[i]) <= 1.0 / 255.0);
  }
}
