// Local intrinsic dimensionality features (maximum-likelihood estimator over
// k nearest reference distances), one per network layer.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mead/core.hpp"
#include "mead/detectors/features.hpp"
#include "mead/detectors/logistic.hpp"

namespace mead {

inline constexpr double kDistanceFloor = 1e-12;

/// LID from already-sorted ascending distances r_1 <= ... <= r_k.
inline double lid_from_distances(ConstSpan sorted) {
  const std::size_t k = sorted.size();
  const double rk = std::max(sorted[k - 1], kDistanceFloor);
  double mean_log = 0.0;
  for (double r : sorted) mean_log += std::log(std::max(r, kDistanceFloor) / rk);
  mean_log /= static_cast<double>(k);
  // All k distances equal: the ratio carries no scale information; cap.
  mean_log = std::min(mean_log, -kDistanceFloor);
  return -1.0 / mean_log;
}

/// MLE LID of `query` against the rows of `reference`. `skip_row` removes
/// one reference row (leave-one-out for points that belong to the batch).
inline double lid_estimate(ConstSpan query, const Matrix& reference, std::size_t k,
                           std::optional<std::size_t> skip_row = std::nullopt) {
  const std::size_t usable = reference.rows - (skip_row ? 1 : 0);
  if (k < 2 || usable <= k) throw ConfigError("lid_estimate needs reference size > k >= 2");
  Vec d;
  d.reserve(reference.rows);
  for (std::size_t i = 0; i < reference.rows; ++i) {
    if (skip_row && *skip_row == i) continue;
    d.push_back(std::sqrt(squared_distance(query, reference.row(i))));
  }
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  d.resize(k);
  return lid_from_distances(d);
}

struct LidConfig {
  std::size_t k = 20;
  std::size_t reference_size = 100;
  double noise_sigma = 0.03125;  // natural + N(0, sigma^2) companions, labeled natural

  friend bool operator==(const LidConfig&, const LidConfig&) = default;
};

struct LidDetector {
  LidConfig config;
  std::vector<Matrix> reference;  // per layer, rows = reference naturals
  LogisticHead head;

  /// One LID value per layer. `reference_index` marks a query that is
  /// itself part of the reference batch.
  Vec features(const ModelParams& model, ConstSpan x, std::optional<std::size_t> reference_index = {}) const {
    const FeatureBundle f = extract_features(model, x);
    Vec out(reference.size());
    for (std::size_t l = 0; l < reference.size(); ++l) out[l] = lid_estimate(f.layers[l], reference[l], config.k, reference_index);
    return out;
  }

  double score(const ModelParams& model, ConstSpan x) const { return head.predict(features(model, x)); }

  friend bool operator==(const LidDetector&, const LidDetector&) = default;
};

inline LidDetector fit_lid_detector(const ModelParams& model, const Matrix& naturals, const Matrix& adversarials,
                                    const LidConfig& cfg, std::uint64_t seed,
                                    const std::vector<std::size_t>& adversarial_sources = {}) {
  if (naturals.rows == 0 || adversarials.rows == 0) throw ConfigError("lid detector needs naturals and adversarials");
  LidDetector det;
  det.config = cfg;
  Rng rng(derive_seed(seed, 0x11d));
  std::vector<std::size_t> order(naturals.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  const std::size_t r = std::min(cfg.reference_size, naturals.rows);
  if (r <= cfg.k + 1) throw ConfigError("lid detector: too few naturals for k");
  const std::size_t depth = model.depth();
  det.reference.assign(depth, Matrix());
  std::vector<std::optional<std::size_t>> ref_slot(naturals.rows);
  for (std::size_t j = 0; j < r; ++j) {
    const FeatureBundle f = extract_features(model, naturals.row(order[j]));
    for (std::size_t l = 0; l < depth; ++l) det.reference[l].append_row(f.layers[l]);
    ref_slot[order[j]] = j;
  }

  Matrix feats;
  std::vector<int> labels;
  for (std::size_t i = 0; i < naturals.rows; ++i) {
    feats.append_row(det.features(model, naturals.row(i), ref_slot[i]));
    labels.push_back(0);
    Vec noisy(naturals.row(i).begin(), naturals.row(i).end());
    for (double& v : noisy) v += cfg.noise_sigma * normal(rng);
    feats.append_row(det.features(model, noisy));
    labels.push_back(0);
  }
  for (std::size_t i = 0; i < adversarials.rows; ++i) {
    // Leave out the reference natural this adversarial was made from.
    std::optional<std::size_t> skip;
    if (i < adversarial_sources.size() && adversarial_sources[i] < naturals.rows) skip = ref_slot[adversarial_sources[i]];
    feats.append_row(det.features(model, adversarials.row(i), skip));
    labels.push_back(1);
  }
  det.head = fit_logistic(feats, labels);
  return det;
}

}  // namespace mead
