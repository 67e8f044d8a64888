// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/landmarks.hpp"
#include "shapenet/shape_model.hpp"

#include <Eigen/Core>

#include <memory>
#include <span>
#include <vector>

namespace shapenet {

/// Similarity transform parameters regressed alongside the shape weights.
struct GlobalTransform {
  double scale = 1.0;
  double rotation = 0.0;  // radians
  double tx = 0.0;
  double ty = 0.0;
};

using TransformMatrix = Eigen::Matrix<double, 2, 3>;

/// [[s cos, -s sin, tx], [s sin, s cos, ty]], applied as p' = M [x, y, 1]^T.
TransformMatrix build_transform_matrix(const GlobalTransform& t);

LandmarkSet apply_transform(const GlobalTransform& t, const LandmarkSet& shape, Frame frame);

/// Shape weights (standard-deviation units) plus the global transform.
/// Packed layout, shared with the network output: [w_0 .. w_{p-1}, s, theta, tx, ty].
struct ParamVector {
  Eigen::VectorXd weights;
  GlobalTransform transform;

  Eigen::VectorXd packed() const;
  static ParamVector unpack(const Eigen::Ref<const Eigen::VectorXd>& packed);
};

/// Gradient of a scalar loss with respect to one ParamVector.
struct ParamGradient {
  Eigen::VectorXd weights;
  double scale = 0.0;
  double rotation = 0.0;
  double tx = 0.0;
  double ty = 0.0;
};

inline constexpr int kNumTransformParams = 4;

/// One row per batch item.
using BatchMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Differentiable shape-model layer: parameters in, crop-frame landmarks out.
///
/// The mean shape (fixed weight 1) and the scaled eigenvectors are constants
/// of the layer; backward never produces gradients for them.
class PcaLayer {
 public:
  PcaLayer(std::shared_ptr<const ShapeModel> model, int num_params);

  int num_params() const { return num_params_; }
  int num_landmarks() const { return model_->num_landmarks; }
  int input_size() const { return num_params_ + kNumTransformParams; }
  int output_size() const { return 2 * model_->num_landmarks; }
  const ShapeModel& model() const { return *model_; }
  std::shared_ptr<const ShapeModel> shared_model() const { return model_; }

  /// params: B x (p + 4) -> landmarks: B x 2L (interleaved x/y).
  BatchMatrix forward(const BatchMatrix& params) const;

  /// Returns dLoss/dparams (B x (p + 4)) given dLoss/dlandmarks (B x 2L).
  BatchMatrix backward(const BatchMatrix& params, const BatchMatrix& grad_landmarks) const;

  std::vector<LandmarkSet> forward(std::span<const ParamVector> params) const;
  std::vector<ParamGradient> backward(std::span<const ParamVector> params,
                                      std::span<const LandmarkSet> grad_landmarks) const;

 private:
  void check_params(const BatchMatrix& params) const;

  std::shared_ptr<const ShapeModel> model_;
  int num_params_;
};

BatchMatrix pack(std::span<const ParamVector> params);

/// Straightforward serial versions of the layer kernels, kept as test oracles.
namespace reference {

BatchMatrix pca_forward(const ShapeModel& model, int num_params, const BatchMatrix& params);
BatchMatrix pca_backward(const ShapeModel& model, int num_params, const BatchMatrix& params,
                         const BatchMatrix& grad_landmarks);

}  // namespace reference

}  // namespace shapenet
