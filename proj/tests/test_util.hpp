// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/pca_layer.hpp"
#include "shapenet/shape_model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

namespace shapenet::testing {

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int n, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Random model with orthonormal modes, descending eigenvalues and
/// sqrt-eigenvalue scaling.
inline ShapeModel random_model(std::mt19937_64& rng, int num_landmarks, int p_max) {
  const int dim = 2 * num_landmarks;
  Eigen::MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i) a.col(i) = random_vector(rng, dim);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
  ShapeModel m;
  m.num_landmarks = num_landmarks;
  m.mean_shape = random_vector(rng, dim, 20.0);
  m.eigenvalues.resize(p_max);
  m.eigenvectors.resize(p_max, dim);
  double lambda = uniform(rng, 50.0, 100.0);
  for (int k = 0; k < p_max; ++k) {
    m.eigenvalues[k] = lambda;
    m.eigenvectors.row(k) = std::sqrt(lambda) * q.col(k).transpose();
    lambda *= uniform(rng, 0.5, 0.95);
  }
  m.scaling = EigenvectorScaling::sqrt_eigenvalue;
  return m;
}

inline GlobalTransform random_transform(std::mt19937_64& rng) {
  return {uniform(rng, 0.5, 2.0), uniform(rng, -3.0, 3.0), uniform(rng, -50.0, 50.0),
          uniform(rng, -50.0, 50.0)};
}

/// |a - b| / max(|a|, |b|), with absolute comparison below `floor`.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("shapenet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace shapenet::testing
