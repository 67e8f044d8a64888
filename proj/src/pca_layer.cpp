// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/pca_layer.hpp"

#include "shapenet/error.hpp"

#include <cmath>
#include <vector>

namespace shapenet {

TransformMatrix build_transform_matrix(const GlobalTransform& t) {
  const double c = t.scale * std::cos(t.rotation);
  const double s = t.scale * std::sin(t.rotation);
  TransformMatrix m;
  m << c, -s, t.tx,
       s, c, t.ty;
  return m;
}

LandmarkSet apply_transform(const GlobalTransform& t, const LandmarkSet& shape, Frame frame) {
  const TransformMatrix m = build_transform_matrix(t);
  std::vector<Point> pts(shape.size());
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const Eigen::Vector2d q = m * Eigen::Vector3d(shape[i].x, shape[i].y, 1.0);
    pts[i] = {q.x(), q.y()};
  }
  return {std::move(pts), frame};
}

Eigen::VectorXd ParamVector::packed() const {
  const Eigen::Index p = weights.size();
  Eigen::VectorXd v(p + kNumTransformParams);
  v.head(p) = weights;
  v[p] = transform.scale;
  v[p + 1] = transform.rotation;
  v[p + 2] = transform.tx;
  v[p + 3] = transform.ty;
  return v;
}

ParamVector ParamVector::unpack(const Eigen::Ref<const Eigen::VectorXd>& packed) {
  if (packed.size() < kNumTransformParams) {
    throw Error(ErrorCode::dimension, "packed parameter vector shorter than 4");
  }
  const Eigen::Index p = packed.size() - kNumTransformParams;
  return {packed.head(p), {packed[p], packed[p + 1], packed[p + 2], packed[p + 3]}};
}

BatchMatrix pack(std::span<const ParamVector> params) {
  if (params.empty()) return BatchMatrix(0, 0);
  const Eigen::Index cols = params.front().weights.size() + kNumTransformParams;
  BatchMatrix m(static_cast<Eigen::Index>(params.size()), cols);
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].weights.size() + kNumTransformParams != cols) {
      throw Error(ErrorCode::dimension, "inconsistent weight counts within a batch");
    }
    m.row(static_cast<Eigen::Index>(b)) = params[b].packed().transpose();
  }
  return m;
}

PcaLayer::PcaLayer(std::shared_ptr<const ShapeModel> model, int num_params)
    : model_(std::move(model)), num_params_(num_params) {
  if (!model_) throw Error(ErrorCode::dimension, "PCA layer needs a shape model");
  if (num_params_ < 0 || num_params_ > model_->p_max()) {
    throw Error(ErrorCode::dimension, "layer configured with " + std::to_string(num_params_) +
                                          " parameters, model p_max is " +
                                          std::to_string(model_->p_max()));
  }
}

void PcaLayer::check_params(const BatchMatrix& params) const {
  if (params.cols() != input_size()) {
    throw Error(ErrorCode::dimension, "expected " + std::to_string(input_size()) +
                                          " parameters per item, got " +
                                          std::to_string(params.cols()));
  }
}

BatchMatrix PcaLayer::forward(const BatchMatrix& params) const {
  check_params(params);
  const Eigen::Index batch = params.rows();
  const int p = num_params_;
  const Eigen::Index dim = output_size();
  const Eigen::MatrixXd& basis = model_->eigenvectors;
  const Eigen::VectorXd& mean = model_->mean_shape;
  BatchMatrix out(batch, dim);

#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < batch; ++b) {
    Eigen::VectorXd local = mean;
    for (int i = 0; i < p; ++i) local += params(b, i) * basis.row(i).transpose();
    const double s = params(b, p);
    const double c = s * std::cos(params(b, p + 1));
    const double sn = s * std::sin(params(b, p + 1));
    const double tx = params(b, p + 2);
    const double ty = params(b, p + 3);
    for (Eigen::Index l = 0; l < dim; l += 2) {
      out(b, l) = c * local[l] - sn * local[l + 1] + tx;
      out(b, l + 1) = sn * local[l] + c * local[l + 1] + ty;
    }
  }
  return out;
}

BatchMatrix PcaLayer::backward(const BatchMatrix& params, const BatchMatrix& grad_landmarks) const {
  check_params(params);
  const Eigen::Index batch = params.rows();
  const int p = num_params_;
  const Eigen::Index dim = output_size();
  if (grad_landmarks.rows() != batch || grad_landmarks.cols() != dim) {
    throw Error(ErrorCode::dimension, "landmark gradient shape does not match the layer output");
  }
  const Eigen::MatrixXd& basis = model_->eigenvectors;
  const Eigen::VectorXd& mean = model_->mean_shape;
  BatchMatrix grad(batch, input_size());

#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < batch; ++b) {
    Eigen::VectorXd local = mean;
    for (int i = 0; i < p; ++i) local += params(b, i) * basis.row(i).transpose();
    const double scale = params(b, p);
    const double cs = std::cos(params(b, p + 1));
    const double sn = std::sin(params(b, p + 1));

    Eigen::VectorXd grad_local(dim);
    double d_scale = 0.0, d_theta = 0.0, d_tx = 0.0, d_ty = 0.0;
    for (Eigen::Index l = 0; l < dim; l += 2) {
      const double gx = grad_landmarks(b, l);
      const double gy = grad_landmarks(b, l + 1);
      const double x = local[l];
      const double y = local[l + 1];
      d_tx += gx;
      d_ty += gy;
      // d/ds: R(theta) * local.
      d_scale += gx * (cs * x - sn * y) + gy * (sn * x + cs * y);
      // d/dtheta: s * R'(theta) * local.
      d_theta += scale * (gx * (-sn * x - cs * y) + gy * (cs * x - sn * y));
      // d/dlocal: s * R(theta)^T * g.
      grad_local[l] = scale * (cs * gx + sn * gy);
      grad_local[l + 1] = scale * (-sn * gx + cs * gy);
    }
    for (int i = 0; i < p; ++i) grad(b, i) = basis.row(i).dot(grad_local);
    grad(b, p) = d_scale;
    grad(b, p + 1) = d_theta;
    grad(b, p + 2) = d_tx;
    grad(b, p + 3) = d_ty;
  }
  return grad;
}

std::vector<LandmarkSet> PcaLayer::forward(std::span<const ParamVector> params) const {
  const BatchMatrix out = forward(pack(params));
  std::vector<LandmarkSet> sets;
  sets.reserve(params.size());
  for (Eigen::Index b = 0; b < out.rows(); ++b) {
    sets.push_back(LandmarkSet::from_flat(out.row(b).transpose(), Frame::crop));
  }
  return sets;
}

std::vector<ParamGradient> PcaLayer::backward(std::span<const ParamVector> params,
                                              std::span<const LandmarkSet> grad_landmarks) const {
  if (grad_landmarks.size() != params.size()) {
    throw Error(ErrorCode::dimension, "gradient batch size does not match parameter batch size");
  }
  BatchMatrix g(static_cast<Eigen::Index>(params.size()), output_size());
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (static_cast<int>(grad_landmarks[b].size()) != num_landmarks()) {
      throw Error(ErrorCode::dimension, "landmark gradient has the wrong point count");
    }
    g.row(static_cast<Eigen::Index>(b)) = grad_landmarks[b].flat().transpose();
  }
  const BatchMatrix packed = backward(pack(params), g);
  std::vector<ParamGradient> out(params.size());
  const int p = num_params_;
  for (std::size_t b = 0; b < params.size(); ++b) {
    const auto r = static_cast<Eigen::Index>(b);
    out[b].weights = packed.row(r).head(p).transpose();
    out[b].scale = packed(r, p);
    out[b].rotation = packed(r, p + 1);
    out[b].tx = packed(r, p + 2);
    out[b].ty = packed(r, p + 3);
  }
  return out;
}

namespace reference {

BatchMatrix pca_forward(const ShapeModel& model, int num_params, const BatchMatrix& params) {
  const Eigen::Index dim = 2 * model.num_landmarks;
  BatchMatrix out(params.rows(), dim);
  for (Eigen::Index b = 0; b < params.rows(); ++b) {
    const ParamVector pv = ParamVector::unpack(params.row(b).transpose());
    const LandmarkSet local = reconstruct(model, pv.weights.head(num_params));
    const TransformMatrix m = build_transform_matrix(pv.transform);
    for (std::size_t l = 0; l < local.size(); ++l) {
      const Eigen::Vector2d q = m * Eigen::Vector3d(local[l].x, local[l].y, 1.0);
      out(b, 2 * static_cast<Eigen::Index>(l)) = q.x();
      out(b, 2 * static_cast<Eigen::Index>(l) + 1) = q.y();
    }
  }
  return out;
}

BatchMatrix pca_backward(const ShapeModel& model, int num_params, const BatchMatrix& params,
                         const BatchMatrix& grad_landmarks) {
  const int p = num_params;
  BatchMatrix grad = BatchMatrix::Zero(params.rows(), p + kNumTransformParams);
  for (Eigen::Index b = 0; b < params.rows(); ++b) {
    const ParamVector pv = ParamVector::unpack(params.row(b).transpose());
    const LandmarkSet local = reconstruct(model, pv.weights.head(p));
    const double s = pv.transform.scale;
    const double th = pv.transform.rotation;
    Eigen::Matrix2d rot;
    rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    Eigen::Matrix2d drot;
    drot << -std::sin(th), -std::cos(th), std::cos(th), -std::sin(th);
    for (std::size_t l = 0; l < local.size(); ++l) {
      const auto li = static_cast<Eigen::Index>(l);
      const Eigen::Vector2d g(grad_landmarks(b, 2 * li), grad_landmarks(b, 2 * li + 1));
      const Eigen::Vector2d x(local[l].x, local[l].y);
      for (int i = 0; i < p; ++i) {
        const Eigen::Vector2d v(model.eigenvectors(i, 2 * li), model.eigenvectors(i, 2 * li + 1));
        grad(b, i) += g.dot(s * rot * v);
      }
      grad(b, p) += g.dot(rot * x);
      grad(b, p + 1) += g.dot(s * drot * x);
      grad(b, p + 2) += g.x();
      grad(b, p + 3) += g.y();
    }
  }
  return grad;
}

}  // namespace reference

}  // namespace shapenet
