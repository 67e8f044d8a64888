// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/shape_model.hpp"

#include "shapenet/error.hpp"
#include "shapenet/hexfloat.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace shapenet {

using json = nlohmann::json;

namespace {

constexpr const char* kModelFormat = "shapenet.shape_model";
constexpr int kModelVersion = 1;

Point group_centroid(const LandmarkSet& s, const std::vector<int>& idx) {
  Point c;
  for (int i : idx) {
    c.x += s[static_cast<std::size_t>(i)].x;
    c.y += s[static_cast<std::size_t>(i)].y;
  }
  return {c.x / static_cast<double>(idx.size()), c.y / static_cast<double>(idx.size())};
}

LandmarkSet rotate_about(const LandmarkSet& s, Point center, double angle, Frame frame) {
  const double c = std::cos(angle);
  const double sn = std::sin(angle);
  std::vector<Point> pts(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double dx = s[i].x - center.x;
    const double dy = s[i].y - center.y;
    pts[i] = {center.x + c * dx - sn * dy, center.y + sn * dx + c * dy};
  }
  return {std::move(pts), frame};
}

void validate_anchors(const AnchorGroups& anchors, std::size_t num_points) {
  if (anchors.first.empty() || anchors.second.empty()) {
    throw Error(ErrorCode::degenerate_anchor, "anchor groups must be non-empty");
  }
  std::set<int> seen;
  for (const auto* group : {&anchors.first, &anchors.second}) {
    for (int i : *group) {
      if (i < 0 || static_cast<std::size_t>(i) >= num_points) {
        throw Error(ErrorCode::dimension, "anchor index " + std::to_string(i) +
                                              " outside [0, " + std::to_string(num_points) + ")");
      }
    }
  }
  for (int i : anchors.first) seen.insert(i);
  for (int i : anchors.second) {
    if (seen.count(i) != 0) {
      throw Error(ErrorCode::degenerate_anchor,
                  "anchor index " + std::to_string(i) + " appears in both groups");
    }
  }
}

// Angle that rotates `shape` (centered) onto `reference` (centered) in the
// least-squares sense.
double best_rotation(const Eigen::VectorXd& shape, const Eigen::VectorXd& reference) {
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index i = 0; i + 1 < shape.size(); i += 2) {
    const double x = shape[i], y = shape[i + 1];
    const double rx = reference[i], ry = reference[i + 1];
    num += x * ry - y * rx;
    den += x * rx + y * ry;
  }
  return std::atan2(num, den);
}

Eigen::VectorXd rotate_flat(const Eigen::VectorXd& v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i + 1 < v.size(); i += 2) {
    out[i] = c * v[i] - s * v[i + 1];
    out[i + 1] = s * v[i] + c * v[i + 1];
  }
  return out;
}

Eigen::VectorXd centered_flat(const LandmarkSet& s) {
  const Point c = s.centroid();
  return s.translated(-c.x, -c.y).flat();
}

}  // namespace

AnchorGroups ibug68_eye_anchors() {
  return {{36, 37, 38, 39, 40, 41}, {42, 43, 44, 45, 46, 47}};
}

std::vector<LandmarkSet> align_corpus(std::span<const LandmarkSet> corpus,
                                      const AnchorGroups& anchors) {
  check_corpus(corpus);
  if (corpus.empty()) return {};
  validate_anchors(anchors, corpus.front().size());

  std::vector<LandmarkSet> out;
  out.reserve(corpus.size());
  for (std::size_t n = 0; n < corpus.size(); ++n) {
    const LandmarkSet& s = corpus[n];
    const Point a = group_centroid(s, anchors.first);
    const Point b = group_centroid(s, anchors.second);
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    if (dx == 0.0 && dy == 0.0) {
      throw Error(ErrorCode::degenerate_anchor,
                  "anchor centroids coincide in set " + std::to_string(n));
    }
    out.push_back(rotate_about(s, s.centroid(), -std::atan2(dy, dx), Frame::canonical));
  }
  return out;
}

std::vector<LandmarkSet> align_corpus_procrustes(std::span<const LandmarkSet> corpus,
                                                 int iterations) {
  check_corpus(corpus);
  if (corpus.empty()) return {};

  std::vector<Eigen::VectorXd> centered;
  centered.reserve(corpus.size());
  for (const auto& s : corpus) centered.push_back(centered_flat(s));

  std::vector<double> angles(corpus.size(), 0.0);
  Eigen::VectorXd reference = centered.front();
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(reference.size());
    for (std::size_t n = 0; n < centered.size(); ++n) {
      angles[n] = best_rotation(centered[n], reference);
      mean += rotate_flat(centered[n], angles[n]);
    }
    mean /= static_cast<double>(centered.size());
    // Pin the mean's orientation to the first shape so it does not drift.
    mean = rotate_flat(mean, best_rotation(mean, centered.front()));
    if ((mean - reference).norm() <= 1e-12 * std::max(1.0, reference.norm())) break;
    reference = mean;
  }

  std::vector<LandmarkSet> out;
  out.reserve(corpus.size());
  for (std::size_t n = 0; n < corpus.size(); ++n) {
    out.push_back(rotate_about(corpus[n], corpus[n].centroid(), angles[n], Frame::canonical));
  }
  return out;
}

ShapeModel compute_pca(std::span<const LandmarkSet> aligned_corpus, int p_max,
                       EigenvectorScaling scaling) {
  const auto n = static_cast<Eigen::Index>(aligned_corpus.size());
  if (n < 2) {
    throw Error(ErrorCode::insufficient_data,
                "PCA needs at least 2 shapes, got " + std::to_string(n));
  }
  check_corpus(aligned_corpus);
  for (const auto& s : aligned_corpus) {
    if (s.frame() != Frame::canonical) {
      throw Error(ErrorCode::corpus_consistency, "PCA input must be in the canonical frame");
    }
  }
  const auto num_landmarks = static_cast<int>(aligned_corpus.front().size());
  const Eigen::Index dim = 2 * num_landmarks;
  const Eigen::Index limit = std::min<Eigen::Index>(dim, n - 1);
  if (p_max < 1 || p_max > limit) {
    throw Error(ErrorCode::dimension, "p_max " + std::to_string(p_max) +
                                          " outside [1, min(2L, N-1) = " +
                                          std::to_string(limit) + "]");
  }

  Eigen::MatrixXd data(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    data.row(i) = aligned_corpus[static_cast<std::size_t>(i)].flat().transpose();
  }
  const Eigen::VectorXd mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
  const Eigen::MatrixXd covariance =
      (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  // Ascending order from the solver; reverse into descending.
  const Eigen::VectorXd evals = solver.eigenvalues().reverse();
  const Eigen::MatrixXd evecs = solver.eigenvectors().rowwise().reverse();

  ShapeModel model;
  model.num_landmarks = num_landmarks;
  model.mean_shape = mean;
  model.eigenvalues.resize(p_max);
  model.eigenvectors.resize(p_max, dim);
  const double largest = std::max(evals[0], 0.0);
  for (int i = 0; i < p_max; ++i) {
    double lambda = evals[i];
    if (std::abs(lambda) < kDegenerateEigenvalueRatio * largest || largest == 0.0) {
      lambda = 0.0;
    }
    Eigen::VectorXd v = evecs.col(i);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    model.eigenvalues[i] = lambda;
    model.eigenvectors.row(i) = v.transpose();
  }
  model.scaling = EigenvectorScaling::unit;
  model.corpus_meta = "pca over " + std::to_string(n) + " shapes";
  if (scaling == EigenvectorScaling::sqrt_eigenvalue) {
    model = apply_eigenvalue_scaling(std::move(model));
  }
  return model;
}

ShapeModel apply_eigenvalue_scaling(ShapeModel model) {
  if (model.scaling != EigenvectorScaling::unit) {
    throw Error(ErrorCode::dimension, "eigenvectors are already eigenvalue-scaled");
  }
  int clamped = 0;
  for (Eigen::Index i = 0; i < model.eigenvalues.size(); ++i) {
    if (model.eigenvalues[i] < 0.0) {
      model.eigenvalues[i] = 0.0;
      ++clamped;
    }
    model.eigenvectors.row(i) *= std::sqrt(model.eigenvalues[i]);
  }
  if (clamped > 0) {
    model.warnings.push_back("clamped " + std::to_string(clamped) +
                             " negative eigenvalue(s) to zero");
  }
  model.scaling = EigenvectorScaling::sqrt_eigenvalue;
  return model;
}

LandmarkSet reconstruct(const ShapeModel& model, const Eigen::Ref<const Eigen::VectorXd>& weights) {
  if (weights.size() > model.p_max()) {
    throw Error(ErrorCode::dimension, "got " + std::to_string(weights.size()) +
                                          " weights for a model with p_max " +
                                          std::to_string(model.p_max()));
  }
  Eigen::VectorXd shape = model.mean_shape;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    shape += weights[i] * model.eigenvectors.row(i).transpose();
  }
  return LandmarkSet::from_flat(shape, Frame::canonical);
}

Eigen::VectorXd project(const ShapeModel& model, const LandmarkSet& shape, int num_params) {
  const int p = num_params < 0 ? model.p_max() : num_params;
  if (p > model.p_max()) {
    throw Error(ErrorCode::dimension, "cannot project onto " + std::to_string(p) +
                                          " modes of a model with p_max " +
                                          std::to_string(model.p_max()));
  }
  if (static_cast<int>(shape.size()) != model.num_landmarks) {
    throw Error(ErrorCode::dimension, "shape has " + std::to_string(shape.size()) +
                                          " points, model has " +
                                          std::to_string(model.num_landmarks));
  }
  const Eigen::VectorXd delta = shape.flat() - model.mean_shape;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  for (int i = 0; i < p; ++i) {
    const double lambda = model.eigenvalues[i];
    const double dot = model.eigenvectors.row(i).dot(delta);
    if (model.scaling == EigenvectorScaling::unit) {
      w[i] = dot;
    } else if (lambda > 0.0) {
      // v_scaled = sqrt(lambda) * v_unit, so dot / lambda = delta.v_unit / sqrt(lambda).
      w[i] = dot / lambda;
    }
  }
  return w;
}

namespace {

json hex_array(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(to_hexfloat(v[i]));
  return arr;
}

const char* to_string(AlignmentMethod m) {
  switch (m) {
    case AlignmentMethod::none: return "none";
    case AlignmentMethod::anchors: return "anchors";
    case AlignmentMethod::procrustes: return "procrustes";
  }
  return "none";
}

const json& field(const json& obj, const char* name, const std::string& path) {
  if (!obj.is_object() || !obj.contains(name)) {
    throw Error(ErrorCode::parse, path + "." + name + ": missing field");
  }
  return obj.at(name);
}

Eigen::VectorXd parse_hex_array(const json& arr, Eigen::Index expected, const std::string& path) {
  if (!arr.is_array()) throw Error(ErrorCode::parse, path + ": expected an array");
  if (static_cast<Eigen::Index>(arr.size()) != expected) {
    throw Error(ErrorCode::parse, path + ": expected " + std::to_string(expected) +
                                      " values, found " + std::to_string(arr.size()));
  }
  Eigen::VectorXd v(expected);
  for (Eigen::Index i = 0; i < expected; ++i) {
    const std::string item_path = path + "[" + std::to_string(i) + "]";
    const json& item = arr[static_cast<std::size_t>(i)];
    if (!item.is_string()) throw Error(ErrorCode::parse, item_path + ": expected a hex-float string");
    v[i] = parse_hexfloat(item.get<std::string>(), item_path);
  }
  return v;
}

std::vector<int> parse_index_list(const json& arr, const std::string& path) {
  if (!arr.is_array()) throw Error(ErrorCode::parse, path + ": expected an array");
  std::vector<int> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number_integer()) {
      throw Error(ErrorCode::parse, path + "[" + std::to_string(i) + "]: expected an integer");
    }
    out.push_back(arr[i].get<int>());
  }
  return out;
}

int parse_int(const json& obj, const char* name, const std::string& path) {
  const json& v = field(obj, name, path);
  if (!v.is_number_integer()) throw Error(ErrorCode::parse, path + "." + name + ": expected an integer");
  return v.get<int>();
}

std::string parse_string(const json& obj, const char* name, const std::string& path) {
  const json& v = field(obj, name, path);
  if (!v.is_string()) throw Error(ErrorCode::parse, path + "." + name + ": expected a string");
  return v.get<std::string>();
}

}  // namespace

std::string serialize_model(const ShapeModel& model) {
  json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["num_landmarks"] = model.num_landmarks;
  j["p_max"] = model.p_max();
  j["eigenvector_scaling"] =
      model.scaling == EigenvectorScaling::unit ? "unit" : "sqrt_eigenvalue";
  j["alignment"] = {{"method", to_string(model.alignment.method)},
                    {"anchor_groups", {model.alignment.anchors.first, model.alignment.anchors.second}}};
  j["corpus_meta"] = model.corpus_meta;
  j["mean_shape"] = hex_array(model.mean_shape);
  j["eigenvalues"] = hex_array(model.eigenvalues);
  json rows = json::array();
  for (Eigen::Index i = 0; i < model.eigenvectors.rows(); ++i) {
    rows.push_back(hex_array(model.eigenvectors.row(i).transpose()));
  }
  j["eigenvectors"] = std::move(rows);
  return j.dump(1) + "\n";
}

ShapeModel parse_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, std::string("$: ") + e.what());
  }
  const std::string root = "$";
  if (parse_string(j, "format", root) != kModelFormat) {
    throw Error(ErrorCode::parse, "$.format: not a shape-model container");
  }
  const int version = parse_int(j, "version", root);
  if (version != kModelVersion) {
    throw Error(ErrorCode::version, "shape-model container version " + std::to_string(version) +
                                        ", supported version " + std::to_string(kModelVersion));
  }
  ShapeModel model;
  model.num_landmarks = parse_int(j, "num_landmarks", root);
  const int p_max = parse_int(j, "p_max", root);
  if (model.num_landmarks < 1 || p_max < 0) {
    throw Error(ErrorCode::parse, "$: invalid dimensions");
  }
  const std::string scaling = parse_string(j, "eigenvector_scaling", root);
  if (scaling == "unit") {
    model.scaling = EigenvectorScaling::unit;
  } else if (scaling == "sqrt_eigenvalue") {
    model.scaling = EigenvectorScaling::sqrt_eigenvalue;
  } else {
    throw Error(ErrorCode::parse, "$.eigenvector_scaling: unknown value '" + scaling + "'");
  }

  const json& align = field(j, "alignment", root);
  const std::string method = parse_string(align, "method", "$.alignment");
  if (method == "none") {
    model.alignment.method = AlignmentMethod::none;
  } else if (method == "anchors") {
    model.alignment.method = AlignmentMethod::anchors;
  } else if (method == "procrustes") {
    model.alignment.method = AlignmentMethod::procrustes;
  } else {
    throw Error(ErrorCode::parse, "$.alignment.method: unknown value '" + method + "'");
  }
  const json& groups = field(align, "anchor_groups", "$.alignment");
  if (!groups.is_array() || groups.size() != 2) {
    throw Error(ErrorCode::parse, "$.alignment.anchor_groups: expected two index lists");
  }
  model.alignment.anchors.first = parse_index_list(groups[0], "$.alignment.anchor_groups[0]");
  model.alignment.anchors.second = parse_index_list(groups[1], "$.alignment.anchor_groups[1]");
  model.corpus_meta = parse_string(j, "corpus_meta", root);

  const Eigen::Index dim = 2 * model.num_landmarks;
  model.mean_shape = parse_hex_array(field(j, "mean_shape", root), dim, "$.mean_shape");
  model.eigenvalues = parse_hex_array(field(j, "eigenvalues", root), p_max, "$.eigenvalues");
  const json& rows = field(j, "eigenvectors", root);
  if (!rows.is_array() || static_cast<int>(rows.size()) != p_max) {
    throw Error(ErrorCode::parse, "$.eigenvectors: expected " + std::to_string(p_max) + " rows");
  }
  model.eigenvectors.resize(p_max, dim);
  for (int i = 0; i < p_max; ++i) {
    model.eigenvectors.row(i) =
        parse_hex_array(rows[static_cast<std::size_t>(i)], dim,
                        "$.eigenvectors[" + std::to_string(i) + "]")
            .transpose();
  }
  return model;
}

void save_model(const ShapeModel& model, const std::string& path) {
  write_file_atomic(path, serialize_model(model));
}

ShapeModel load_model(const std::string& path) { return parse_model(read_file(path)); }

std::string model_fingerprint(const ShapeModel& model) {
  return fnv1a64_hex(serialize_model(model));
}

}  // namespace shapenet
