// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "shapenet/image.hpp"
#include "shapenet/landmarks.hpp"
#include "shapenet/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace shapenet {

// Annotation formats ---------------------------------------------------------

/// iBUG .pts: `version: 1`, `n_points: N`, `{`, N lines of `x y`, `}`.
LandmarkSet parse_pts(std::string_view text);
std::string format_pts(const LandmarkSet& landmarks);

/// Kaggle cat annotation: point count followed by x y pairs.
LandmarkSet parse_cat(std::string_view text);

/// Generic landmark CSV: a header row `id,x0,y0,x1,y1,...` and one row per set.
struct CsvSchema {
  std::string id_column = "id";
};

struct LandmarkRecord {
  std::string source_id;
  LandmarkSet landmarks;
};

std::vector<LandmarkRecord> parse_csv_landmarks(std::string_view text, const CsvSchema& schema = {});
std::string format_csv_landmarks(std::span<const LandmarkRecord> records,
                                 const CsvSchema& schema = {});

// Cropping -------------------------------------------------------------------

/// Axis-aligned mapping between an original-image box and the network crop.
struct CropRecord {
  std::string source_id;
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 1.0;
  double height = 1.0;
  int out_width = 224;
  int out_height = 224;

  double scale_x() const { return out_width / width; }
  double scale_y() const { return out_height / height; }
  Point to_crop(Point p) const { return {(p.x - x0) * scale_x(), (p.y - y0) * scale_y()}; }
  Point to_original(Point p) const { return {x0 + p.x / scale_x(), y0 + p.y / scale_y()}; }
};

LandmarkSet landmarks_to_crop(const CropRecord& crop, const LandmarkSet& original);
LandmarkSet landmarks_to_original(const CropRecord& crop, const LandmarkSet& landmarks);

/// Network input: crop image, crop-frame landmarks, and the mapping back.
struct Sample {
  Image image;
  LandmarkSet landmarks;
  CropRecord crop;
};

struct CropOptions {
  double margin = 0.2;
  int out_size = 224;
  bool allow_clipping = true;
};

/// Crops the landmark bounding box grown by `margin` x extent on every side
/// (clipped to the image) and resizes it to out_size x out_size.
Sample crop_and_resize(const Image& image, const LandmarkSet& landmarks,
                       const CropOptions& options = {}, std::string source_id = {});

// Augmentation ---------------------------------------------------------------

struct AugmentConfig {
  bool enabled = true;
  double max_rotation_deg = 30.0;
  double scale_jitter = 0.10;        // relative
  double translation_jitter = 0.05;  // fraction of crop size
  double outside_tolerance = 0.10;   // fraction of crop size landmarks may leave the crop
  int max_attempts = 8;
};

/// A similarity about the crop centre: p' = c + scale * R(rotation) (p - c) + (dx, dy).
struct SimilarityJitter {
  double rotation = 0.0;
  double scale = 1.0;
  double dx = 0.0;
  double dy = 0.0;
};

/// Warps image and landmarks; throws sample_rejected when a landmark ends up
/// further than `outside_tolerance` x crop size outside the crop.
Sample apply_similarity(const Sample& sample, const SimilarityJitter& jitter,
                        double outside_tolerance);

/// Draws a jitter from `config` with a generator seeded by `seed`.
SimilarityJitter draw_jitter(const AugmentConfig& config, std::uint64_t seed);

/// One augmentation attempt; may throw sample_rejected (caller resamples).
Sample augment(const Sample& sample, const AugmentConfig& config, std::uint64_t seed);

/// Retries with derived seeds, falling back to the unaugmented sample.
Sample augment_with_retries(const Sample& sample, const AugmentConfig& config, std::uint64_t seed);

/// Per-sample random stream id, independent of worker count.
std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index);

// Datasets -------------------------------------------------------------------

enum class Split { train, test };

struct ManifestEntry {
  std::string image_path;
  std::string annotation;  // .pts / .cat path, or `file.csv#id`
  Split split = Split::train;
};

/// Whitespace-separated `image annotation split` lines; `#` starts a comment.
/// Relative paths resolve against `base_dir`.
std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::string& base_dir);
std::vector<ManifestEntry> read_manifest(const std::string& path);
std::string format_manifest(std::span<const ManifestEntry> entries);

LandmarkSet load_annotation(const std::string& reference);

Image convert_channels(const Image& image, int channels);

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t num_landmarks() const {
    return samples.empty() ? 0 : samples.front().landmarks.size();
  }
  std::vector<LandmarkSet> landmarks() const;
};

/// Loads and crops every entry of `split`, in manifest order.
Dataset load_dataset(std::span<const ManifestEntry> entries, Split split,
                     const CropOptions& crop, int channels);

/// Stacks sample images (selected by index) into an N x C x S x S tensor.
Tensor stack_images(std::span<const Sample> samples, std::span<const std::size_t> indices);
Tensor stack_images(std::span<const Sample> samples);

}  // namespace shapenet
