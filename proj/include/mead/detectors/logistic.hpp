// Standardized logistic-regression head shared by the LID and KD-BU detectors.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mead/core.hpp"

namespace mead {

struct LogisticHead {
  Vec mean;
  Vec scale;
  Vec weights;  // one per feature
  double bias = 0.0;
  double ridge = 1e-3;

  Vec standardize(ConstSpan f) const {
    Vec z(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) z[i] = (f[i] - mean[i]) / scale[i];
    return z;
  }

  double logit(ConstSpan features) const { return dot(weights, standardize(features)) + bias; }

  /// Probability of the positive (adversarial) class.
  double predict(ConstSpan features) const {
    const double t = logit(features);
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  }

  friend bool operator==(const LogisticHead&, const LogisticHead&) = default;
};

namespace detail {

inline double log1p_exp(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

// Solves A x = b in place (Gaussian elimination with partial pivoting).
inline Vec solve_dense(Matrix a, Vec b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (std::abs(a(piv, c)) < 1e-300) continue;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a(c, k), a(piv, k));
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      for (std::size_t k = c; k < n; ++k) a(r, k) -= f * a(c, k);
      b[r] -= f * b[c];
    }
  }
  Vec x(n, 0.0);
  for (std::size_t c = n; c-- > 0;) {
    double s = b[c];
    for (std::size_t k = c + 1; k < n; ++k) s -= a(c, k) * x[k];
    x[c] = std::abs(a(c, c)) < 1e-300 ? 0.0 : s / a(c, c);
  }
  return x;
}

}  // namespace detail

/// Mean ridge-penalized negative log-likelihood on standardized features,
/// parameters packed as (weights..., bias).
inline double logistic_loss(const LogisticHead& h, const Matrix& z, const std::vector<int>& labels, ConstSpan theta) {
  const std::size_t p = z.cols;
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows; ++i) {
    double t = theta[p];
    for (std::size_t k = 0; k < p; ++k) t += theta[k] * z(i, k);
    loss += detail::log1p_exp(t) - (labels[i] ? t : 0.0);
  }
  loss /= static_cast<double>(z.rows);
  for (std::size_t k = 0; k < p; ++k) loss += 0.5 * h.ridge * theta[k] * theta[k];
  return loss;
}

inline Vec logistic_loss_gradient(const LogisticHead& h, const Matrix& z, const std::vector<int>& labels,
                                  ConstSpan theta) {
  const std::size_t p = z.cols;
  Vec g(p + 1, 0.0);
  for (std::size_t i = 0; i < z.rows; ++i) {
    double t = theta[p];
    for (std::size_t k = 0; k < p; ++k) t += theta[k] * z(i, k);
    const double r = 1.0 / (1.0 + std::exp(-t)) - (labels[i] ? 1.0 : 0.0);
    for (std::size_t k = 0; k < p; ++k) g[k] += r * z(i, k);
    g[p] += r;
  }
  for (double& v : g) v /= static_cast<double>(z.rows);
  for (std::size_t k = 0; k < p; ++k) g[k] += h.ridge * theta[k];
  return g;
}

/// Newton iterations on the ridge-penalized log-likelihood. labels: 1 = adversarial.
inline LogisticHead fit_logistic(const Matrix& features, const std::vector<int>& labels, double ridge = 1e-3,
                                 int iterations = 50) {
  if (features.rows == 0 || features.rows != labels.size()) throw ConfigError("logistic head: bad training set");
  const std::size_t p = features.cols;
  LogisticHead h;
  h.ridge = ridge;
  h.mean.assign(p, 0.0);
  h.scale.assign(p, 0.0);
  for (std::size_t i = 0; i < features.rows; ++i)
    for (std::size_t k = 0; k < p; ++k) h.mean[k] += features(i, k);
  for (double& m : h.mean) m /= static_cast<double>(features.rows);
  for (std::size_t i = 0; i < features.rows; ++i)
    for (std::size_t k = 0; k < p; ++k) h.scale[k] += std::pow(features(i, k) - h.mean[k], 2);
  for (double& s : h.scale) {
    s = std::sqrt(s / static_cast<double>(features.rows));
    if (!(s > 1e-12) || !std::isfinite(s)) s = 1.0;
  }
  Matrix z(features.rows, p);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const Vec zi = h.standardize(features.row(i));
    std::copy(zi.begin(), zi.end(), z.row(i).begin());
  }

  Vec theta(p + 1, 0.0);
  double prev = logistic_loss(h, z, labels, theta);
  for (int it = 0; it < iterations; ++it) {
    const Vec g = logistic_loss_gradient(h, z, labels, theta);
    Matrix H(p + 1, p + 1);
    for (std::size_t i = 0; i < z.rows; ++i) {
      double t = theta[p];
      for (std::size_t k = 0; k < p; ++k) t += theta[k] * z(i, k);
      const double s = 1.0 / (1.0 + std::exp(-t));
      const double w = s * (1.0 - s) / static_cast<double>(z.rows);
      for (std::size_t a = 0; a <= p; ++a) {
        const double za = a < p ? z(i, a) : 1.0;
        for (std::size_t b = 0; b <= p; ++b) H(a, b) += w * za * (b < p ? z(i, b) : 1.0);
      }
    }
    for (std::size_t k = 0; k < p; ++k) H(k, k) += ridge;
    H(p, p) += 1e-9;
    const Vec step = detail::solve_dense(H, g);
    // Backtracking keeps every Newton step a descent step.
    double t = 1.0;
    Vec cand(p + 1);
    double loss = prev;
    for (int bt = 0; bt < 30; ++bt, t *= 0.5) {
      for (std::size_t k = 0; k <= p; ++k) cand[k] = theta[k] - t * step[k];
      loss = logistic_loss(h, z, labels, cand);
      if (loss <= prev) break;
    }
    if (!(loss <= prev)) break;
    theta = cand;
    if (prev - loss < 1e-12) break;
    prev = loss;
  }
  h.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(p));
  h.bias = theta[p];
  return h;
}

}  // namespace mead
