// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/landmarks.hpp"

#include "shapenet/error.hpp"

#include <algorithm>
#include <cmath>

namespace shapenet {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::corpus_consistency: return "corpus-consistency error";
    case ErrorCode::degenerate_anchor: return "degenerate-anchor error";
    case ErrorCode::insufficient_data: return "insufficient-data error";
    case ErrorCode::dimension: return "dimension error";
    case ErrorCode::parse: return "parse error";
    case ErrorCode::version: return "version error";
    case ErrorCode::architecture: return "architecture error";
    case ErrorCode::shape: return "shape error";
    case ErrorCode::degenerate_extent: return "degenerate-extent error";
    case ErrorCode::sample_rejected: return "sample rejected";
    case ErrorCode::model_mismatch: return "model-mismatch error";
    case ErrorCode::divergence: return "divergence error";
    case ErrorCode::empty_dataset: return "empty-dataset error";
    case ErrorCode::io: return "io error";
  }
  return "error";
}

const char* code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::corpus_consistency: return "corpus_consistency";
    case ErrorCode::degenerate_anchor: return "degenerate_anchor";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::parse: return "parse";
    case ErrorCode::version: return "version";
    case ErrorCode::architecture: return "architecture";
    case ErrorCode::shape: return "shape";
    case ErrorCode::degenerate_extent: return "degenerate_extent";
    case ErrorCode::sample_rejected: return "sample_rejected";
    case ErrorCode::model_mismatch: return "model_mismatch";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::empty_dataset: return "empty_dataset";
    case ErrorCode::io: return "io";
  }
  return "error";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::divergence:
    case ErrorCode::architecture:
      return 3;
    default:
      return 2;
  }
}

const char* to_string(Frame frame) {
  switch (frame) {
    case Frame::original: return "original";
    case Frame::crop: return "crop";
    case Frame::canonical: return "canonical";
  }
  return "unknown";
}

LandmarkSet::LandmarkSet(std::vector<Point> points, Frame frame)
    : points_(std::move(points)), frame_(frame) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!std::isfinite(points_[i].x) || !std::isfinite(points_[i].y)) {
      throw Error(ErrorCode::parse,
                  "landmark " + std::to_string(i) + " has a non-finite coordinate");
    }
  }
}

LandmarkSet LandmarkSet::from_flat(const Eigen::Ref<const Eigen::VectorXd>& flat,
                                   Frame frame) {
  if (flat.size() % 2 != 0) {
    throw Error(ErrorCode::dimension, "flat landmark vector has odd length");
  }
  std::vector<Point> pts(static_cast<std::size_t>(flat.size() / 2));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = {flat[2 * i], flat[2 * i + 1]};
  }
  return {std::move(pts), frame};
}

Eigen::VectorXd LandmarkSet::flat() const {
  Eigen::VectorXd v(2 * points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    v[2 * i] = points_[i].x;
    v[2 * i + 1] = points_[i].y;
  }
  return v;
}

Point LandmarkSet::centroid() const {
  Point c;
  for (const auto& p : points_) {
    c.x += p.x;
    c.y += p.y;
  }
  const auto n = static_cast<double>(points_.size());
  return {c.x / n, c.y / n};
}

BoundingBox LandmarkSet::bounding_box() const {
  BoundingBox box{points_.at(0).x, points_.at(0).y, points_[0].x, points_[0].y};
  for (const auto& p : points_) {
    box.min_x = std::min(box.min_x, p.x);
    box.min_y = std::min(box.min_y, p.y);
    box.max_x = std::max(box.max_x, p.x);
    box.max_y = std::max(box.max_y, p.y);
  }
  return box;
}

LandmarkSet LandmarkSet::translated(double dx, double dy) const {
  std::vector<Point> pts = points_;
  for (auto& p : pts) {
    p.x += dx;
    p.y += dy;
  }
  return {std::move(pts), frame_};
}

void check_corpus(std::span<const LandmarkSet> corpus, std::size_t min_points) {
  if (corpus.empty()) return;
  const std::size_t n = corpus.front().size();
  if (n < min_points) {
    throw Error(ErrorCode::corpus_consistency,
                "landmark sets need at least " + std::to_string(min_points) +
                    " points, got " + std::to_string(n));
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].size() != n) {
      throw Error(ErrorCode::corpus_consistency,
                  "set " + std::to_string(i) + " has " +
                      std::to_string(corpus[i].size()) + " points, expected " +
                      std::to_string(n));
    }
  }
}

}  // namespace shapenet
