// Kernel density on the last hidden layer plus Monte Carlo dropout
// uncertainty, combined by a logistic head.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "mead/core.hpp"
#include "mead/detectors/features.hpp"
#include "mead/detectors/logistic.hpp"

namespace mead {

struct KdBuConfig {
  double bandwidth = 0.0;  // <= 0 selects Scott's rule on natural features
  int dropout_passes = 20;

  friend bool operator==(const KdBuConfig&, const KdBuConfig&) = default;
};

/// Isotropic Gaussian KDE.
struct GaussianKde {
  Matrix points;
  double bandwidth = 1.0;

  /// `skip` leaves one kernel out (a fit point scored against its own KDE).
  double log_density(ConstSpan z, std::optional<std::size_t> skip = std::nullopt) const {
    const double h2 = bandwidth * bandwidth;
    double mx = -std::numeric_limits<double>::infinity();
    Vec e;
    e.reserve(points.rows);
    for (std::size_t i = 0; i < points.rows; ++i) {
      if (skip && *skip == i) continue;
      e.push_back(-squared_distance(z, points.row(i)) / (2.0 * h2));
      mx = std::max(mx, e.back());
    }
    if (e.empty()) return -std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (double v : e) s += std::exp(v - mx);
    const double dims = static_cast<double>(points.cols);
    return mx + std::log(s) - std::log(static_cast<double>(e.size())) -
           0.5 * dims * std::log(2.0 * 3.14159265358979323846 * h2);
  }

  double density(ConstSpan z) const { return std::exp(log_density(z)); }

  friend bool operator==(const GaussianKde&, const GaussianKde&) = default;
};

/// Scott's rule: mean per-dimension standard deviation times n^(-1/(d+4)).
inline double scott_bandwidth(const Matrix& pts) {
  if (pts.rows < 2) return 1.0;
  double mean_sd = 0.0;
  for (std::size_t k = 0; k < pts.cols; ++k) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < pts.rows; ++i) m += pts(i, k);
    m /= static_cast<double>(pts.rows);
    for (std::size_t i = 0; i < pts.rows; ++i) v += (pts(i, k) - m) * (pts(i, k) - m);
    mean_sd += std::sqrt(v / static_cast<double>(pts.rows - 1));
  }
  mean_sd /= static_cast<double>(pts.cols);
  const double h = mean_sd * std::pow(static_cast<double>(pts.rows), -1.0 / (static_cast<double>(pts.cols) + 4.0));
  return h > 1e-12 ? h : 1.0;
}

/// Sum over classes of the variance of the softmax output across dropout passes.
inline double dropout_uncertainty(const ModelParams& model, ConstSpan x, int passes, std::uint64_t seed) {
  const std::size_t c = model.output_dim();
  Vec mean(c, 0.0);
  double sq = 0.0;
  for (int t = 0; t < passes; ++t) {
    const Vec p = forward(model, x, true, derive_seed(seed, static_cast<std::uint64_t>(t))).probs;
    for (std::size_t k = 0; k < c; ++k) {
      mean[k] += p[k];
      sq += p[k] * p[k];
    }
  }
  const double n = static_cast<double>(passes);
  double u = sq / n;
  for (double m : mean) u -= (m / n) * (m / n);
  return std::max(u, 0.0);
}

struct KdBuDetector {
  KdBuConfig config;
  std::vector<GaussianKde> per_class;  // empty KDE -> global fallback
  GaussianKde global;
  std::uint64_t dropout_seed = 0;
  LogisticHead head;

  /// `held_out` names a fit natural, by (class, row in that class's KDE,
  /// row in the global KDE), whose kernel is left out.
  struct HeldOut {
    std::size_t cls, class_row, global_row;
  };

  double log_density(const ModelParams& model, ConstSpan x, std::optional<HeldOut> held_out = std::nullopt) const {
    const FeatureBundle f = extract_features(model, x);
    const ConstSpan z = f.last_hidden.empty() ? ConstSpan(x) : ConstSpan(f.last_hidden);
    const std::size_t cls = argmax(f.probs);
    // A class with fewer than two fit points cannot hold one out; use the global KDE.
    const std::size_t need = held_out && held_out->cls == cls ? 2 : 1;
    if (cls < per_class.size() && per_class[cls].points.rows >= need) {
      std::optional<std::size_t> skip;
      if (held_out && held_out->cls == cls) skip = held_out->class_row;
      return per_class[cls].log_density(z, skip);
    }
    return global.log_density(z, held_out ? std::optional<std::size_t>(held_out->global_row) : std::nullopt);
  }

  Vec features(const ModelParams& model, ConstSpan x, std::optional<HeldOut> held_out = std::nullopt) const {
    return {-log_density(model, x, held_out), dropout_uncertainty(model, x, config.dropout_passes, dropout_seed)};
  }

  double score(const ModelParams& model, ConstSpan x) const { return head.predict(features(model, x)); }

  friend bool operator==(const KdBuDetector&, const KdBuDetector&) = default;
};

inline KdBuDetector fit_kd_bu(const ModelParams& model, const Matrix& naturals, const std::vector<std::size_t>& labels,
                              const Matrix& adversarials, const KdBuConfig& cfg, std::uint64_t seed,
                              const std::vector<std::size_t>& adversarial_sources = {}) {
  if (naturals.rows == 0 || adversarials.rows == 0) throw ConfigError("kd-bu needs naturals and adversarials");
  if (labels.size() != naturals.rows) throw ConfigError("kd-bu labels do not match naturals");
  if (cfg.dropout_passes < 1) throw ConfigError("kd-bu needs at least one dropout pass");
  KdBuDetector det;
  det.config = cfg;
  det.dropout_seed = derive_seed(seed, 0xd40);
  const std::size_t c = model.output_dim();
  det.per_class.assign(c, GaussianKde{});
  Matrix all;
  std::vector<KdBuDetector::HeldOut> slot(naturals.rows);
  for (std::size_t i = 0; i < naturals.rows; ++i) {
    const FeatureBundle f = extract_features(model, naturals.row(i));
    const ConstSpan z = f.last_hidden.empty() ? naturals.row(i) : ConstSpan(f.last_hidden);
    if (labels[i] >= c) throw ConfigError("kd-bu label out of range");
    slot[i] = {labels[i], det.per_class[labels[i]].points.rows, i};
    all.append_row(z);
    det.per_class[labels[i]].points.append_row(z);
  }
  const double h = cfg.bandwidth > 0.0 ? cfg.bandwidth : scott_bandwidth(all);
  det.config.bandwidth = h;
  det.global = GaussianKde{all, h};
  for (auto& k : det.per_class) k.bandwidth = h;

  Matrix feats;
  std::vector<int> y;
  // Fit points are scored leave-one-out, and an adversarial leaves out the
  // natural it was made from; otherwise the head learns the self-kernel.
  for (std::size_t i = 0; i < naturals.rows; ++i) {
    feats.append_row(det.features(model, naturals.row(i), slot[i]));
    y.push_back(0);
  }
  for (std::size_t i = 0; i < adversarials.rows; ++i) {
    std::optional<KdBuDetector::HeldOut> h;
    if (i < adversarial_sources.size() && adversarial_sources[i] < naturals.rows) h = slot[adversarial_sources[i]];
    feats.append_row(det.features(model, adversarials.row(i), h));
    y.push_back(1);
  }
  det.head = fit_logistic(feats, y);
  return det;
}

}  // namespace mead
