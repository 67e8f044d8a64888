// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/data_pipeline.hpp"

#include "shapenet/error.hpp"
#include "shapenet/hexfloat.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <numbers>
#include <random>
#include <map>
#include <sstream>

namespace shapenet {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

bool to_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool to_int(std::string_view s, long& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::parse, source + " line " + std::to_string(line) + ": " + what);
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

LandmarkSet parse_pts(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t i = 0;
  auto next = [&]() -> std::pair<std::size_t, std::string_view> {
    while (i < lines.size()) {
      const auto t = trim(lines[i++]);
      if (!t.empty()) return {i, t};
    }
    return {lines.size() + 1, {}};
  };

  auto [vline, version] = next();
  if (!version.starts_with("version:")) parse_fail("pts", vline, "expected 'version:' header");
  auto [nline, npoints] = next();
  if (!npoints.starts_with("n_points:")) parse_fail("pts", nline, "expected 'n_points:' header");
  long count = 0;
  if (!to_int(trim(npoints.substr(9)), count) || count < 0) {
    parse_fail("pts", nline, "invalid point count");
  }
  auto [bline, brace] = next();
  if (brace != "{") parse_fail("pts", bline, "expected '{'");

  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(count));
  while (true) {
    auto [line, content] = next();
    if (content.empty()) parse_fail("pts", line, "missing closing '}'");
    if (content == "}") {
      if (static_cast<long>(pts.size()) != count) {
        parse_fail("pts", line, "declared " + std::to_string(count) + " points, found " +
                                    std::to_string(pts.size()));
      }
      break;
    }
    const auto tokens = split_ws(content);
    Point p;
    if (tokens.size() != 2 || !to_double(tokens[0], p.x) || !to_double(tokens[1], p.y)) {
      parse_fail("pts", line, "expected two numeric coordinates");
    }
    pts.push_back(p);
  }
  if (auto [line, rest] = next(); !rest.empty()) parse_fail("pts", line, "trailing content");
  return {std::move(pts), Frame::original};
}

std::string format_pts(const LandmarkSet& landmarks) {
  std::string out = "version: 1\nn_points: " + std::to_string(landmarks.size()) + "\n{\n";
  for (const auto& p : landmarks.points()) {
    out += format_number(p.x) + " " + format_number(p.y) + "\n";
  }
  out += "}\n";
  return out;
}

LandmarkSet parse_cat(std::string_view text) {
  const auto tokens = split_ws(text);
  if (tokens.empty()) throw Error(ErrorCode::parse, "cat: empty annotation");
  long count = 0;
  if (!to_int(tokens[0], count) || count < 0) {
    throw Error(ErrorCode::parse, "cat: invalid point count '" + std::string(tokens[0]) + "'");
  }
  if (tokens.size() - 1 != static_cast<std::size_t>(2 * count)) {
    throw Error(ErrorCode::parse, "cat: declared " + std::to_string(count) + " points, expected " +
                                      std::to_string(2 * count) + " coordinates, found " +
                                      std::to_string(tokens.size() - 1));
  }
  std::vector<Point> pts(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!to_double(tokens[1 + 2 * i], pts[i].x) || !to_double(tokens[2 + 2 * i], pts[i].y)) {
      throw Error(ErrorCode::parse, "cat: non-numeric coordinate for point " + std::to_string(i));
    }
  }
  return {std::move(pts), Frame::original};
}

std::vector<LandmarkRecord> parse_csv_landmarks(std::string_view text, const CsvSchema& schema) {
  const auto lines = split_lines(text);
  std::size_t header_line = 0;
  while (header_line < lines.size() && trim(lines[header_line]).empty()) ++header_line;
  if (header_line == lines.size()) throw Error(ErrorCode::parse, "csv: missing header row");

  auto split_csv = [](std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return cells;
  };

  const auto header = split_csv(trim(lines[header_line]));
  if (header.empty() || header[0] != schema.id_column) {
    parse_fail("csv", header_line + 1, "first column must be '" + schema.id_column + "'");
  }
  if ((header.size() - 1) % 2 != 0) {
    parse_fail("csv", header_line + 1, "coordinate columns must come in x/y pairs");
  }
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::size_t idx = (c - 1) / 2;
    const std::string expected = ((c - 1) % 2 == 0 ? "x" : "y") + std::to_string(idx);
    if (header[c] != expected) {
      parse_fail("csv", header_line + 1, "expected column '" + expected + "', found '" +
                                             std::string(header[c]) + "'");
    }
  }

  std::vector<LandmarkRecord> records;
  for (std::size_t l = header_line + 1; l < lines.size(); ++l) {
    const auto line = trim(lines[l]);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      parse_fail("csv", l + 1, "expected " + std::to_string(header.size()) + " columns, found " +
                                   std::to_string(cells.size()));
    }
    std::vector<Point> pts((cells.size() - 1) / 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!to_double(cells[1 + 2 * i], pts[i].x) || !to_double(cells[2 + 2 * i], pts[i].y)) {
        parse_fail("csv", l + 1, "non-numeric coordinate for point " + std::to_string(i));
      }
    }
    records.push_back({std::string(cells[0]), LandmarkSet(std::move(pts), Frame::original)});
  }
  return records;
}

std::string format_csv_landmarks(std::span<const LandmarkRecord> records, const CsvSchema& schema) {
  const std::size_t n = records.empty() ? 0 : records.front().landmarks.size();
  std::string out = schema.id_column;
  for (std::size_t i = 0; i < n; ++i) {
    out += ",x" + std::to_string(i) + ",y" + std::to_string(i);
  }
  out += "\n";
  for (const auto& r : records) {
    if (r.landmarks.size() != n) {
      throw Error(ErrorCode::corpus_consistency, "csv rows must share one landmark count");
    }
    out += r.source_id;
    for (const auto& p : r.landmarks.points()) out += "," + format_number(p.x) + "," + format_number(p.y);
    out += "\n";
  }
  return out;
}

LandmarkSet landmarks_to_crop(const CropRecord& crop, const LandmarkSet& original) {
  std::vector<Point> pts(original.size());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = crop.to_crop(original[i]);
  return {std::move(pts), Frame::crop};
}

LandmarkSet landmarks_to_original(const CropRecord& crop, const LandmarkSet& landmarks) {
  std::vector<Point> pts(landmarks.size());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = crop.to_original(landmarks[i]);
  return {std::move(pts), Frame::original};
}

Sample crop_and_resize(const Image& image, const LandmarkSet& landmarks,
                       const CropOptions& options, std::string source_id) {
  if (landmarks.size() == 0) throw Error(ErrorCode::degenerate_extent, "no landmarks to crop around");
  const BoundingBox box = landmarks.bounding_box();
  if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
    throw Error(ErrorCode::degenerate_extent, "landmark bounding box has zero width or height");
  }
  if (!options.allow_clipping &&
      (box.min_x < 0.0 || box.min_y < 0.0 || box.max_x > image.width || box.max_y > image.height)) {
    throw Error(ErrorCode::shape, "landmarks fall outside the image and clipping is disabled");
  }
  double x0 = box.min_x - options.margin * box.width();
  double y0 = box.min_y - options.margin * box.height();
  double x1 = box.max_x + options.margin * box.width();
  double y1 = box.max_y + options.margin * box.height();
  x0 = std::max(x0, 0.0);
  y0 = std::max(y0, 0.0);
  x1 = std::min(x1, static_cast<double>(image.width));
  y1 = std::min(y1, static_cast<double>(image.height));
  if (!(x1 > x0) || !(y1 > y0)) {
    throw Error(ErrorCode::degenerate_extent, "crop box is empty after clipping to the image");
  }

  CropRecord crop{std::move(source_id), x0, y0, x1 - x0, y1 - y0, options.out_size, options.out_size};
  Sample sample;
  sample.image = Image(options.out_size, options.out_size, image.channels);
  // Box-filtered bilinear resampling: average a k x k grid of taps per output pixel.
  const int kx = std::max(1, static_cast<int>(std::ceil(crop.width / options.out_size)));
  const int ky = std::max(1, static_cast<int>(std::ceil(crop.height / options.out_size)));
  const double step_x = crop.width / options.out_size;
  const double step_y = crop.height / options.out_size;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < options.out_size; ++i) {
    for (int j = 0; j < options.out_size; ++j) {
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int sy = 0; sy < ky; ++sy) {
          const double y = y0 + (i + (sy + 0.5) / ky) * step_y;
          for (int sx = 0; sx < kx; ++sx) {
            const double x = x0 + (j + (sx + 0.5) / kx) * step_x;
            acc += sample_bilinear(image, x, y, c, Border::clamp);
          }
        }
        sample.image.at(j, i, c) = std::clamp(acc / (kx * ky), 0.0, 1.0);
      }
    }
  }
  sample.landmarks = landmarks_to_crop(crop, landmarks);
  sample.crop = std::move(crop);
  return sample;
}

Sample apply_similarity(const Sample& sample, const SimilarityJitter& jitter,
                        double outside_tolerance) {
  const double cx = 0.5 * sample.image.width;
  const double cy = 0.5 * sample.image.height;
  const double cs = std::cos(jitter.rotation);
  const double sn = std::sin(jitter.rotation);
  const double s = jitter.scale;

  std::vector<Point> pts(sample.landmarks.size());
  const double tol_x = outside_tolerance * sample.image.width;
  const double tol_y = outside_tolerance * sample.image.height;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dx = sample.landmarks[i].x - cx;
    const double dy = sample.landmarks[i].y - cy;
    pts[i] = {cx + s * (cs * dx - sn * dy) + jitter.dx, cy + s * (sn * dx + cs * dy) + jitter.dy};
    if (pts[i].x < -tol_x || pts[i].y < -tol_y || pts[i].x > sample.image.width + tol_x ||
        pts[i].y > sample.image.height + tol_y) {
      throw Error(ErrorCode::sample_rejected, "augmented landmark " + std::to_string(i) +
                                                  " leaves the crop beyond tolerance");
    }
  }

  Sample out;
  out.crop = sample.crop;
  out.landmarks = LandmarkSet(std::move(pts), sample.landmarks.frame());
  out.image = Image(sample.image.width, sample.image.height, sample.image.channels);
  for (int i = 0; i < out.image.height; ++i) {
    for (int j = 0; j < out.image.width; ++j) {
      // Inverse map: p = c + R^T (q - c - d) / s.
      const double qx = j + 0.5 - cx - jitter.dx;
      const double qy = i + 0.5 - cy - jitter.dy;
      const double x = cx + (cs * qx + sn * qy) / s;
      const double y = cy + (-sn * qx + cs * qy) / s;
      for (int c = 0; c < out.image.channels; ++c) {
        out.image.at(j, i, c) = std::clamp(sample_bilinear(sample.image, x, y, c, Border::zero), 0.0, 1.0);
      }
    }
  }
  return out;
}

SimilarityJitter draw_jitter(const AugmentConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  SimilarityJitter j;
  j.rotation = unit(rng) * config.max_rotation_deg * std::numbers::pi / 180.0;
  j.scale = 1.0 + unit(rng) * config.scale_jitter;
  j.dx = unit(rng) * config.translation_jitter;
  j.dy = unit(rng) * config.translation_jitter;
  return j;
}

Sample augment(const Sample& sample, const AugmentConfig& config, std::uint64_t seed) {
  if (!config.enabled) return sample;
  SimilarityJitter j = draw_jitter(config, seed);
  j.dx *= sample.image.width;
  j.dy *= sample.image.height;
  if (j.rotation == 0.0 && j.scale == 1.0 && j.dx == 0.0 && j.dy == 0.0) return sample;
  return apply_similarity(sample, j, config.outside_tolerance);
}

Sample augment_with_retries(const Sample& sample, const AugmentConfig& config, std::uint64_t seed) {
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    try {
      return augment(sample, config, derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::sample_rejected) throw;
    }
  }
  return sample;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
  // splitmix64 over the combined value.
  std::uint64_t z = global_seed * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::string& base_dir) {
  namespace fs = std::filesystem;
  auto resolve = [&](std::string_view p) {
    const fs::path path{std::string(p)};
    if (path.is_absolute() || base_dir.empty()) return path.string();
    return (fs::path(base_dir) / path).lexically_normal().string();
  };
  std::vector<ManifestEntry> entries;
  const auto lines = split_lines(text);
  for (std::size_t l = 0; l < lines.size(); ++l) {
    auto line = lines[l];
    // A comment starts at a '#' that begins a token; `file.csv#id` selectors stay intact.
    for (std::size_t hash = line.find('#'); hash != std::string_view::npos; hash = line.find('#', hash + 1)) {
      if (hash == 0 || std::isspace(static_cast<unsigned char>(line[hash - 1]))) {
        line = line.substr(0, hash);
        break;
      }
    }
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 3) parse_fail("manifest", l + 1, "expected 'image annotation split'");
    ManifestEntry e;
    e.image_path = resolve(tokens[0]);
    // Keep a `#id` row selector attached to the resolved CSV path.
    const auto ann = tokens[1];
    const auto sel = ann.find(".csv#");
    e.annotation = sel == std::string_view::npos
                       ? resolve(ann)
                       : resolve(ann.substr(0, sel + 4)) + std::string(ann.substr(sel + 4));
    if (tokens[2] == "train") {
      e.split = Split::train;
    } else if (tokens[2] == "test") {
      e.split = Split::test;
    } else {
      parse_fail("manifest", l + 1, "split must be 'train' or 'test'");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  return parse_manifest(read_file(path), std::filesystem::path(path).parent_path().string());
}

std::string format_manifest(std::span<const ManifestEntry> entries) {
  std::string out = "# image annotation split\n";
  for (const auto& e : entries) {
    out += e.image_path + " " + e.annotation + " " + (e.split == Split::train ? "train" : "test") + "\n";
  }
  return out;
}

LandmarkSet load_annotation(const std::string& reference) {
  if (const auto sel = reference.find(".csv#"); sel != std::string::npos) {
    const std::string path = reference.substr(0, sel + 4);
    const std::string id = reference.substr(sel + 5);
    for (auto& r : parse_csv_landmarks(read_file(path))) {
      if (r.source_id == id) return r.landmarks;
    }
    throw Error(ErrorCode::parse, path + ": no row with id '" + id + "'");
  }
  const std::string ext = std::filesystem::path(reference).extension().string();
  if (ext == ".pts") return parse_pts(read_file(reference));
  if (ext == ".cat") return parse_cat(read_file(reference));
  if (ext == ".csv") {
    auto records = parse_csv_landmarks(read_file(reference));
    if (records.size() != 1) {
      throw Error(ErrorCode::parse, reference + ": CSV annotation needs a '#id' row selector");
    }
    return records.front().landmarks;
  }
  throw Error(ErrorCode::parse, "unknown annotation format: " + reference);
}

Image convert_channels(const Image& image, int channels) {
  if (image.channels == channels) return image;
  Image out(image.width, image.height, channels);
  const std::size_t pixels = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < pixels; ++i) {
    const double* src = &image.data[i * image.channels];
    double* dst = &out.data[i * channels];
    if (channels == 1) {
      dst[0] = image.channels >= 3 ? 0.299 * src[0] + 0.587 * src[1] + 0.114 * src[2] : src[0];
    } else {
      for (int c = 0; c < channels; ++c) dst[c] = src[std::min(c, image.channels - 1)];
    }
  }
  return out;
}

std::vector<LandmarkSet> Dataset::landmarks() const {
  std::vector<LandmarkSet> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.landmarks);
  return out;
}

Dataset load_dataset(std::span<const ManifestEntry> entries, Split split,
                     const CropOptions& crop, int channels) {
  std::vector<const ManifestEntry*> selected;
  for (const auto& e : entries) {
    if (e.split == split) selected.push_back(&e);
  }
  // Multi-row CSV annotations are parsed once per file.
  std::map<std::string, std::map<std::string, LandmarkSet>> csv_rows;
  for (const ManifestEntry* e : selected) {
    const auto sel = e->annotation.find(".csv#");
    if (sel == std::string::npos) continue;
    const std::string path = e->annotation.substr(0, sel + 4);
    if (csv_rows.contains(path)) continue;
    auto& rows = csv_rows[path];
    for (auto& r : parse_csv_landmarks(read_file(path))) rows.emplace(r.source_id, std::move(r.landmarks));
  }
  auto annotation = [&](const std::string& reference) {
    const auto sel = reference.find(".csv#");
    if (sel == std::string::npos) return load_annotation(reference);
    const auto& rows = csv_rows.at(reference.substr(0, sel + 4));
    const auto it = rows.find(reference.substr(sel + 5));
    if (it == rows.end()) {
      throw Error(ErrorCode::parse, reference.substr(0, sel + 4) + ": no row with id '" +
                                        reference.substr(sel + 5) + "'");
    }
    return it->second;
  };

  Dataset ds;
  ds.samples.resize(selected.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < selected.size(); ++i) {
    try {
      const ManifestEntry& e = *selected[i];
      const Image image = convert_channels(read_image(e.image_path), channels);
      ds.samples[i] = crop_and_resize(image, annotation(e.annotation), crop,
                                      std::filesystem::path(e.image_path).stem().string());
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  check_corpus(ds.landmarks(), 1);
  return ds;
}

Tensor stack_images(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) return {};
  const Image& first = samples[indices[0]].image;
  Tensor t(static_cast<int>(indices.size()), first.channels, first.height, first.width);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Image& img = samples[indices[b]].image;
    if (img.width != first.width || img.height != first.height || img.channels != first.channels) {
      throw Error(ErrorCode::shape, "images in a batch must share one size");
    }
    for (int c = 0; c < img.channels; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) t(static_cast<int>(b), c, y, x) = img.at(x, y, c);
  }
  return t;
}

Tensor stack_images(std::span<const Sample> samples) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return stack_images(samples, idx);
}

}  // namespace shapenet
