// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/synth_data.hpp"

#include "shapenet/error.hpp"
#include "shapenet/hexfloat.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

namespace shapenet {

void SynthSpec::validate() const {
  if (num_samples < 0 || num_landmarks < 3) {
    throw Error(ErrorCode::dimension, "synthetic corpus needs >= 3 landmarks and >= 0 samples");
  }
  if (num_modes < 0 || num_modes > 2 * num_landmarks - 4) {
    throw Error(ErrorCode::dimension, "num_modes must lie in [0, 2L - 4] (modes exclude similarity motions)");
  }
  if (static_cast<int>(mode_amplitudes.size()) != num_modes) {
    throw Error(ErrorCode::dimension, "need one amplitude per mode");
  }
  for (double a : mode_amplitudes) {
    if (!(a >= 0.0)) throw Error(ErrorCode::dimension, "mode amplitudes must be non-negative");
  }
  if (noise_sigma < 0.0 || pixel_noise < 0.0 || scale_min <= 0.0 || scale_max < scale_min ||
      canvas_size < 8 || (channels != 1 && channels != 3)) {
    throw Error(ErrorCode::dimension, "invalid synthetic spec");
  }
}

std::vector<double> linear_amplitudes(int num_modes, double first, double last) {
  std::vector<double> a(static_cast<std::size_t>(num_modes));
  for (int i = 0; i < num_modes; ++i) {
    a[static_cast<std::size_t>(i)] = num_modes == 1 ? first : first + (last - first) * i / (num_modes - 1);
  }
  return a;
}

Eigen::VectorXd regular_polygon(int num_landmarks, double radius) {
  Eigen::VectorXd v(2 * num_landmarks);
  for (int i = 0; i < num_landmarks; ++i) {
    const double a = 2.0 * std::numbers::pi * i / num_landmarks;
    v[2 * i] = radius * std::cos(a);
    v[2 * i + 1] = radius * std::sin(a);
  }
  return v;
}

Eigen::MatrixXd generate_modes(const SynthSpec& spec) {
  const int dim = 2 * spec.num_landmarks;
  const Eigen::VectorXd base = regular_polygon(spec.num_landmarks, spec.base_radius);
  // Similarity directions of the base shape: x/y translation, rotation, scale.
  std::vector<Eigen::VectorXd> basis;
  Eigen::VectorXd tx = Eigen::VectorXd::Zero(dim), ty = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd rot(dim);
  for (int i = 0; i < spec.num_landmarks; ++i) {
    tx[2 * i] = 1.0;
    ty[2 * i + 1] = 1.0;
    rot[2 * i] = -base[2 * i + 1];
    rot[2 * i + 1] = base[2 * i];
  }
  for (Eigen::VectorXd v : {tx, ty, rot, base}) {
    for (const auto& b : basis) v -= v.dot(b) * b;
    basis.push_back(v.normalized());
  }

  std::mt19937_64 rng(derive_seed(spec.seed, 0x6d6f646573ull));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd modes(spec.num_modes, dim);
  for (int k = 0; k < spec.num_modes; ++k) {
    Eigen::VectorXd v(dim);
    for (int d = 0; d < dim; ++d) v[d] = normal(rng);
    // Two Gram-Schmidt passes for numerical orthogonality.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) v -= v.dot(b) * b;
    }
    v.normalize();
    basis.push_back(v);
    modes.row(k) = v.transpose();
  }
  return modes;
}

namespace {

struct Canvas {
  int size;
  int channels;
  std::vector<double> pixels;  // size x size x channels

  double& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * size + x) * channels + c];
  }
};

void fill_triangle(Canvas& canvas, Eigen::Vector2d a, Eigen::Vector2d b, Eigen::Vector2d c,
                   const double* color) {
  const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
  if (std::abs(area) < 1e-12) return;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}))));
  const int x1 = std::min(canvas.size - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}))));
  const int y1 = std::min(canvas.size - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Eigen::Vector2d p(x + 0.5, y + 0.5);
      const double w0 = ((b - p).x() * (c - p).y() - (b - p).y() * (c - p).x()) / area;
      const double w1 = ((c - p).x() * (a - p).y() - (c - p).y() * (a - p).x()) / area;
      const double w2 = 1.0 - w0 - w1;
      if (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) {
        for (int ch = 0; ch < canvas.channels; ++ch) canvas.at(x, y, ch) = color[ch];
      }
    }
  }
}

void draw_segment(Canvas& canvas, Eigen::Vector2d a, Eigen::Vector2d b, double half_width,
                  double value) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - half_width)));
  const int x1 = std::min(canvas.size - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + half_width)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - half_width)));
  const int y1 = std::min(canvas.size - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + half_width)));
  const Eigen::Vector2d d = b - a;
  const double len2 = std::max(d.squaredNorm(), 1e-12);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Eigen::Vector2d p(x + 0.5, y + 0.5);
      const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
      if ((a + t * d - p).norm() <= half_width) {
        for (int ch = 0; ch < canvas.channels; ++ch) canvas.at(x, y, ch) = value;
      }
    }
  }
}

// Filled polygon on a textured background. Each fan sector (centroid,
// v_i, v_i+1) gets its own intensity so landmark order is visible, and
// the outline is drawn dark.
Image render(const SynthSpec& spec, const LandmarkSet& shape, std::mt19937_64& rng) {
  constexpr int kSuper = 2;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Canvas canvas{spec.canvas_size * kSuper, spec.channels, {}};
  canvas.pixels.assign(static_cast<std::size_t>(canvas.size) * canvas.size * canvas.channels, 0.0);

  const double fx = 0.05 + 0.1 * uniform(rng);
  const double fy = 0.05 + 0.1 * uniform(rng);
  const double px = 2.0 * std::numbers::pi * uniform(rng);
  const double py = 2.0 * std::numbers::pi * uniform(rng);
  const double level = 0.2 + 0.1 * uniform(rng);
  for (int y = 0; y < canvas.size; ++y) {
    for (int x = 0; x < canvas.size; ++x) {
      const double v = level + 0.08 * std::sin(fx * x / kSuper + px) * std::cos(fy * y / kSuper + py);
      for (int c = 0; c < canvas.channels; ++c) canvas.at(x, y, c) = v;
    }
  }

  const std::size_t n = shape.size();
  const Point centroid = shape.centroid();
  const Eigen::Vector2d ctr(centroid.x * kSuper, centroid.y * kSuper);
  auto vertex = [&](std::size_t i) {
    return Eigen::Vector2d(shape[i % n].x * kSuper, shape[i % n].y * kSuper);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double shade = 0.45 + 0.5 * static_cast<double>(i) / static_cast<double>(n - 1);
    double color[3] = {shade, shade, shade};
    if (spec.channels == 3) {
      color[0] = shade;
      color[1] = 0.5 * (shade + 0.45);
      color[2] = 1.4 - shade;
    }
    fill_triangle(canvas, ctr, vertex(i), vertex(i + 1), color);
  }
  for (std::size_t i = 0; i < n; ++i) draw_segment(canvas, vertex(i), vertex(i + 1), 0.75 * kSuper, 0.05);

  Image img(spec.canvas_size, spec.canvas_size, spec.channels);
  std::normal_distribution<double> noise(0.0, spec.pixel_noise);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx) acc += canvas.at(kSuper * x + sx, kSuper * y + sy, c);
        const double v = acc / (kSuper * kSuper) + (spec.pixel_noise > 0.0 ? noise(rng) : 0.0);
        img.at(x, y, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

bool fits_canvas(const LandmarkSet& s, const SynthSpec& spec) {
  const BoundingBox b = s.bounding_box();
  const double mx = spec.canvas_margin * b.width();
  const double my = spec.canvas_margin * b.height();
  return b.min_x - mx >= 0.0 && b.min_y - my >= 0.0 && b.max_x + mx <= spec.canvas_size &&
         b.max_y + my <= spec.canvas_size;
}

}  // namespace

ShapeModel SynthDataset::true_model() const {
  ShapeModel m;
  m.num_landmarks = spec.num_landmarks;
  m.mean_shape = base_shape;
  m.eigenvalues.resize(spec.num_modes);
  m.eigenvectors.resize(spec.num_modes, 2 * spec.num_landmarks);
  for (int k = 0; k < spec.num_modes; ++k) {
    const double a = spec.mode_amplitudes[static_cast<std::size_t>(k)];
    m.eigenvalues[k] = a * a;
    m.eigenvectors.row(k) = a * modes.row(k);
  }
  m.scaling = EigenvectorScaling::sqrt_eigenvalue;
  m.corpus_meta = "synthetic generator model";
  return m;
}

std::vector<LandmarkSet> SynthDataset::landmarks() const {
  std::vector<LandmarkSet> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.landmarks);
  return out;
}

SynthDataset generate_dataset(const SynthSpec& spec, bool render_images) {
  spec.validate();
  SynthDataset ds;
  ds.spec = spec;
  ds.base_shape = regular_polygon(spec.num_landmarks, spec.base_radius);
  ds.modes = generate_modes(spec);
  ds.samples.resize(static_cast<std::size_t>(spec.num_samples));
  const ShapeModel model = ds.true_model();
  const std::uint64_t stream = derive_seed(spec.seed, 0x73616d70ull);
  const double max_rot = spec.max_rotation_deg * std::numbers::pi / 180.0;

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < spec.num_samples; ++i) {
    try {
      std::mt19937_64 rng(derive_seed(stream, static_cast<std::uint64_t>(i)));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::uniform_real_distribution<double> unit(-1.0, 1.0);
      SynthSample& s = ds.samples[static_cast<std::size_t>(i)];
      char id[32];
      std::snprintf(id, sizeof(id), "sample_%05d", i);
      s.id = id;
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        s.weights.resize(spec.num_modes);
        s.coefficients.resize(spec.num_modes);
        for (int k = 0; k < spec.num_modes; ++k) {
          s.weights[k] = normal(rng);
          s.coefficients[k] = s.weights[k] * spec.mode_amplitudes[static_cast<std::size_t>(k)];
        }
        s.transform.scale = spec.scale_min + 0.5 * (unit(rng) + 1.0) * (spec.scale_max - spec.scale_min);
        s.transform.rotation = unit(rng) * max_rot;
        s.transform.tx = 0.5 * spec.canvas_size + unit(rng) * spec.max_translation;
        s.transform.ty = 0.5 * spec.canvas_size + unit(rng) * spec.max_translation;
        LandmarkSet shape = apply_transform(s.transform, reconstruct(model, s.weights), Frame::original);
        if (spec.noise_sigma > 0.0) {
          std::normal_distribution<double> jitter(0.0, spec.noise_sigma);
          std::vector<Point> pts = shape.points();
          for (auto& p : pts) {
            p.x += jitter(rng);
            p.y += jitter(rng);
          }
          shape = LandmarkSet(std::move(pts), Frame::original);
        }
        if (fits_canvas(shape, spec)) {
          s.landmarks = std::move(shape);
          placed = true;
        }
      }
      if (!placed) {
        throw Error(ErrorCode::sample_rejected,
                    "could not place sample " + std::to_string(i) + " on the canvas");
      }
      if (render_images) s.image = render(spec, s.landmarks, rng);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return ds;
}

Dataset to_dataset(const SynthDataset& synth, const CropOptions& crop) {
  Dataset ds;
  ds.samples.resize(synth.samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < synth.samples.size(); ++i) {
    const SynthSample& s = synth.samples[i];
    ds.samples[i] = crop_and_resize(s.image, s.landmarks, crop, s.id);
  }
  return ds;
}

AnchorGroups synth_anchor_groups(int num_landmarks) {
  // Arcs centred on vertex L/2 and vertex 0, each a quarter of the polygon.
  const int q = std::max(1, num_landmarks / 4);
  AnchorGroups g;
  for (int i = 0; i < q; ++i) {
    const int offset = i - q / 2;
    g.first.push_back((num_landmarks / 2 + offset + num_landmarks) % num_landmarks);
    g.second.push_back((offset + num_landmarks) % num_landmarks);
  }
  return g;
}

double baseline_mean_shape_error(std::span<const LandmarkSet> ground_truth, const LandmarkSet& mean_shape) {
  if (ground_truth.empty()) return 0.0;
  const Point mc = mean_shape.centroid();
  double total = 0.0;
  for (const auto& gt : ground_truth) {
    const Point gc = gt.centroid();
    const LandmarkSet placed = mean_shape.translated(gc.x - mc.x, gc.y - mc.y).with_frame(gt.frame());
    double sum = 0.0;
    for (std::size_t l = 0; l < gt.size(); ++l) {
      sum += std::hypot(placed[l].x - gt[l].x, placed[l].y - gt[l].y);
    }
    const BoundingBox box = gt.bounding_box();
    const double norm = 0.5 * (box.width() + box.height());
    if (!(norm > 0.0)) throw Error(ErrorCode::degenerate_extent, "ground truth has zero extent");
    total += sum / static_cast<double>(gt.size()) / norm;
  }
  return total / static_cast<double>(ground_truth.size());
}

double baseline_mean_shape_error(const Dataset& dataset) {
  const std::vector<LandmarkSet> gt = dataset.landmarks();
  if (gt.empty()) return 0.0;
  check_corpus(gt, 1);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * gt.front().size()));
  for (const auto& s : gt) mean += s.flat();
  mean /= static_cast<double>(gt.size());
  return baseline_mean_shape_error(gt, LandmarkSet::from_flat(mean, gt.front().frame()));
}

void write_synth_dataset(const SynthDataset& synth, const std::string& dir, double test_fraction) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  const std::size_t n = synth.samples.size();
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));

  std::vector<LandmarkRecord> records;
  std::vector<ManifestEntry> manifest;
  std::string generator = "id,scale,rotation,tx,ty";
  for (int k = 0; k < synth.spec.num_modes; ++k) generator += ",w" + std::to_string(k);
  generator += "\n";
  for (std::size_t i = 0; i < n; ++i) {
    const SynthSample& s = synth.samples[i];
    const std::string image_rel = "images/" + s.id + ".png";
    write_png(s.image, (fs::path(dir) / image_rel).string());
    records.push_back({s.id, s.landmarks});
    manifest.push_back({image_rel, "landmarks.csv#" + s.id, i + n_test >= n ? Split::test : Split::train});
    generator += s.id + "," + to_hexfloat(s.transform.scale) + "," + to_hexfloat(s.transform.rotation) +
                 "," + to_hexfloat(s.transform.tx) + "," + to_hexfloat(s.transform.ty);
    for (Eigen::Index k = 0; k < s.weights.size(); ++k) generator += "," + to_hexfloat(s.weights[k]);
    generator += "\n";
  }
  std::string modes = "mode,amplitude";
  for (int d = 0; d < 2 * synth.spec.num_landmarks; ++d) modes += ",c" + std::to_string(d);
  modes += "\n";
  for (int k = 0; k < synth.spec.num_modes; ++k) {
    modes += std::to_string(k) + "," + to_hexfloat(synth.spec.mode_amplitudes[static_cast<std::size_t>(k)]);
    for (Eigen::Index d = 0; d < synth.modes.cols(); ++d) modes += "," + to_hexfloat(synth.modes(k, d));
    modes += "\n";
  }
  write_file_atomic((fs::path(dir) / "landmarks.csv").string(), format_csv_landmarks(records));
  write_file_atomic((fs::path(dir) / "generator.csv").string(), generator);
  write_file_atomic((fs::path(dir) / "modes.csv").string(), modes);
  write_file_atomic((fs::path(dir) / "manifest.txt").string(), format_manifest(manifest));
}

}  // namespace shapenet
