// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace shapenet {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Coordinate frame a landmark set lives in.
enum class Frame { original, crop, canonical };

const char* to_string(Frame frame);

struct BoundingBox {
  double min_x, min_y, max_x, max_y;

  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
};

/// An ordered set of 2D landmarks tagged with the frame they are expressed in.
///
/// Coordinates are checked for finiteness on construction. Corpus-level
/// constraints (at least three points, constant count) are enforced by the
/// operations that consume whole corpora.
class LandmarkSet {
 public:
  LandmarkSet() = default;
  LandmarkSet(std::vector<Point> points, Frame frame);

  /// Builds a set from an interleaved (x0, y0, x1, y1, ...) vector.
  static LandmarkSet from_flat(const Eigen::Ref<const Eigen::VectorXd>& flat,
                               Frame frame);

  std::size_t size() const { return points_.size(); }
  const std::vector<Point>& points() const { return points_; }
  const Point& operator[](std::size_t i) const { return points_[i]; }
  Frame frame() const { return frame_; }

  Eigen::VectorXd flat() const;
  Point centroid() const;
  BoundingBox bounding_box() const;

  LandmarkSet translated(double dx, double dy) const;
  LandmarkSet with_frame(Frame frame) const { return {points_, frame}; }

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;

 private:
  std::vector<Point> points_;
  Frame frame_ = Frame::original;
};

/// Throws corpus_consistency unless every set has the same point count and
/// that count is at least `min_points`.
void check_corpus(std::span<const LandmarkSet> corpus, std::size_t min_points = 3);

}  // namespace shapenet
