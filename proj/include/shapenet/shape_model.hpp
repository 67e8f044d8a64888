// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/landmarks.hpp"

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace shapenet {

/// Two disjoint landmark index groups whose centroids are rotated onto a
/// horizontal line (e.g. the two eye contours of a face annotation).
struct AnchorGroups {
  std::vector<int> first;
  std::vector<int> second;

  friend bool operator==(const AnchorGroups&, const AnchorGroups&) = default;
};

/// iBUG 68-point scheme: indices 36-41 and 42-47 outline the two eyes.
AnchorGroups ibug68_eye_anchors();

enum class AlignmentMethod { none, anchors, procrustes };

struct AlignmentMeta {
  AlignmentMethod method = AlignmentMethod::none;
  AnchorGroups anchors;

  friend bool operator==(const AlignmentMeta&, const AlignmentMeta&) = default;
};

enum class EigenvectorScaling { unit, sqrt_eigenvalue };

/// PCA point-distribution model.
///
/// `eigenvectors` holds one mode per row (p_max x 2L, interleaved x/y). With
/// sqrt_eigenvalue scaling a weight of 1 moves the shape by one standard
/// deviation along that mode. Treated as immutable once built.
struct ShapeModel {
  int num_landmarks = 0;
  Eigen::VectorXd mean_shape;
  Eigen::MatrixXd eigenvectors;
  Eigen::VectorXd eigenvalues;
  EigenvectorScaling scaling = EigenvectorScaling::unit;
  AlignmentMeta alignment;
  std::string corpus_meta;
  // Not serialized.
  std::vector<std::string> warnings;

  int p_max() const { return static_cast<int>(eigenvalues.size()); }
};

/// Rotates every set about its own centroid so that the centroids of the two
/// anchor groups share a y-coordinate, with the second group to the right.
std::vector<LandmarkSet> align_corpus(std::span<const LandmarkSet> corpus,
                                      const AnchorGroups& anchors);

/// Rotation-only generalized Procrustes alignment (each set rotated about its
/// own centroid towards the evolving mean orientation).
std::vector<LandmarkSet> align_corpus_procrustes(std::span<const LandmarkSet> corpus,
                                                 int iterations = 10);

/// Eigenvalues below this fraction of the largest one are zeroed.
inline constexpr double kDegenerateEigenvalueRatio = 1e-12;

ShapeModel compute_pca(std::span<const LandmarkSet> aligned_corpus, int p_max,
                       EigenvectorScaling scaling = EigenvectorScaling::sqrt_eigenvalue);

ShapeModel apply_eigenvalue_scaling(ShapeModel model);

/// mean + sum_i w_i * v_i over the first w.size() modes.
LandmarkSet reconstruct(const ShapeModel& model, const Eigen::Ref<const Eigen::VectorXd>& weights);

/// Inverse of reconstruct for the first `num_params` modes (all when < 0).
/// Degenerate modes project to 0.
Eigen::VectorXd project(const ShapeModel& model, const LandmarkSet& shape, int num_params = -1);

std::string serialize_model(const ShapeModel& model);
ShapeModel parse_model(const std::string& text);
void save_model(const ShapeModel& model, const std::string& path);
ShapeModel load_model(const std::string& path);

/// Content hash of the serialized model; identical to hashing the saved file.
std::string model_fingerprint(const ShapeModel& model);

}  // namespace shapenet
