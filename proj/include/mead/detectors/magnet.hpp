// MagNet-style detector: autoencoder reconstruction error and the
// Jensen-Shannon divergence between softened predictions on x and AE(x).
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mead/nn.hpp"
#include "mead/objectives.hpp"

namespace mead {

/// Jensen-Shannon divergence in nats; bounded by ln 2.
inline double jensen_shannon(ConstSpan p, ConstSpan q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) s += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) s += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(s, 0.0, std::log(2.0));
}

inline Vec softmax_temperature(ConstSpan logits, double temperature) {
  Vec z(logits.begin(), logits.end());
  for (double& v : z) v /= temperature;
  return softmax(z);
}

struct MagNetScores {
  double recon_error = 0.0;
  double prob_divergence = 0.0;
};

inline MagNetScores magnet_scores(const ModelParams& autoencoder, const ModelParams& model, ConstSpan x,
                                  double temperature) {
  const Vec rec = network_output(autoencoder, x);
  MagNetScores s;
  s.recon_error = std::sqrt(squared_distance(x, rec));
  s.prob_divergence = jensen_shannon(softmax_temperature(network_output(model, x), temperature),
                                     softmax_temperature(network_output(model, rec), temperature));
  return s;
}

struct MagNetConfig {
  std::vector<std::size_t> hidden{};  // empty selects {max(2, d/2)}
  Activation hidden_activation = Activation::ReLU;
  TrainConfig train{};
  double temperature = 10.0;

  friend bool operator==(const MagNetConfig&, const MagNetConfig&) = default;
};

/// Empirical CDF over a sorted fit sample.
inline double rank_normalize(const Vec& sorted_fit, double v) {
  const auto it = std::upper_bound(sorted_fit.begin(), sorted_fit.end(), v);
  return static_cast<double>(it - sorted_fit.begin()) / static_cast<double>(sorted_fit.size());
}

struct MagNetDetector {
  MagNetConfig config;
  ModelParams autoencoder;
  Vec fit_recon;       // sorted
  Vec fit_divergence;  // sorted

  double score(const ModelParams& model, ConstSpan x) const {
    const MagNetScores s = magnet_scores(autoencoder, model, x, config.temperature);
    return std::max(rank_normalize(fit_recon, s.recon_error), rank_normalize(fit_divergence, s.prob_divergence));
  }

  friend bool operator==(const MagNetDetector&, const MagNetDetector&) = default;
};

inline MagNetDetector fit_magnet(const ModelParams& model, const Matrix& naturals, const MagNetConfig& cfg) {
  if (naturals.rows == 0) throw ConfigError("magnet needs naturals");
  MagNetDetector det;
  det.config = cfg;
  Architecture arch;
  arch.input_dim = naturals.cols;
  arch.output_dim = naturals.cols;
  arch.hidden = cfg.hidden.empty() ? std::vector<std::size_t>{std::max<std::size_t>(2, naturals.cols / 2)} : cfg.hidden;
  arch.hidden_activation = cfg.hidden_activation;
  det.autoencoder = train_autoencoder(naturals, arch, cfg.train).params;
  for (std::size_t i = 0; i < naturals.rows; ++i) {
    const auto s = magnet_scores(det.autoencoder, model, naturals.row(i), cfg.temperature);
    det.fit_recon.push_back(s.recon_error);
    det.fit_divergence.push_back(s.prob_divergence);
  }
  std::sort(det.fit_recon.begin(), det.fit_recon.end());
  std::sort(det.fit_divergence.begin(), det.fit_divergence.end());
  return det;
}

}  // namespace mead
