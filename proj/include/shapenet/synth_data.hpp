// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/data_pipeline.hpp"
#include "shapenet/pca_layer.hpp"
#include "shapenet/shape_model.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace shapenet {

/// Parameters of the synthetic landmark corpus.
///
/// Shapes are a regular L-gon displaced along `num_modes` fixed orthonormal
/// modes (orthogonal to translation, rotation and scaling of the base
/// polygon) with coefficients ~ N(0, amplitude_i^2), then placed on the
/// canvas by a random similarity transform.
struct SynthSpec {
  int num_samples = 200;
  int num_landmarks = 16;
  int num_modes = 4;
  std::vector<double> mode_amplitudes{12.0, 10.0, 8.0, 6.0};  // pixels
  double noise_sigma = 0.0;                                   // landmark noise, pixels
  double pixel_noise = 0.02;
  double base_radius = 36.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double max_rotation_deg = 20.0;
  double max_translation = 6.0;  // pixels from the canvas centre
  int canvas_size = 128;
  int channels = 1;
  double canvas_margin = 0.2;  // landmark box + this margin must stay on the canvas
  std::uint64_t seed = 0;

  void validate() const;
};

/// Amplitudes decreasing linearly from `first` to `last`.
std::vector<double> linear_amplitudes(int num_modes, double first, double last);

struct SynthSample {
  std::string id;
  Image image;
  LandmarkSet landmarks;         // original (canvas) frame
  Eigen::VectorXd coefficients;  // pixels along the unit modes
  Eigen::VectorXd weights;       // coefficients / amplitudes
  GlobalTransform transform;
};

struct SynthDataset {
  SynthSpec spec;
  Eigen::VectorXd base_shape;  // regular L-gon centred at the origin
  Eigen::MatrixXd modes;       // k x 2L, orthonormal rows
  std::vector<SynthSample> samples;

  /// Generator's own model: mean = base shape, eigenvectors = amplitude x mode.
  ShapeModel true_model() const;
  std::vector<LandmarkSet> landmarks() const;
};

Eigen::VectorXd regular_polygon(int num_landmarks, double radius);

/// Orthonormal mode basis fixed by `spec.seed`.
Eigen::MatrixXd generate_modes(const SynthSpec& spec);

/// Deterministic under `spec.seed`; `render = false` skips image synthesis.
SynthDataset generate_dataset(const SynthSpec& spec, bool render = true);

/// Crops every rendered sample into a network-ready dataset.
Dataset to_dataset(const SynthDataset& synth, const CropOptions& crop);

/// Anchor groups for the synthetic polygon: the first and third quarter arcs.
AnchorGroups synth_anchor_groups(int num_landmarks);

/// Error of predicting `mean_shape` placed at each ground-truth centroid
/// (translation-only least squares).
double baseline_mean_shape_error(std::span<const LandmarkSet> ground_truth, const LandmarkSet& mean_shape);
/// Same, using the dataset's own mean shape.
double baseline_mean_shape_error(const Dataset& dataset);

/// Writes images/, landmarks.csv, generator.csv, modes.csv and manifest.txt.
/// The last `test_fraction` of samples are tagged `test`.
void write_synth_dataset(const SynthDataset& synth, const std::string& dir, double test_fraction);

}  // namespace shapenet
