// Binary RBF-kernel SVM trained on the dual hinge objective by SMO-style
// coordinate ascent (maximal violating pair selection).
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mead/core.hpp"

namespace mead {

struct RbfSvmConfig {
  double gamma = 0.0;  // <= 0 selects 1 / (d * var(features))
  double c_reg = 1.0;
  int max_passes = 10000;
  double kkt_tolerance = 1e-3;

  friend bool operator==(const RbfSvmConfig&, const RbfSvmConfig&) = default;
};

struct RbfSvm {
  Matrix support;       // support vectors
  Vec coef;             // alpha_i * y_i for each support vector
  double bias = 0.0;
  double gamma = 1.0;
  bool converged = false;
  std::size_t iterations = 0;

  double kernel(ConstSpan a, ConstSpan b) const { return std::exp(-gamma * squared_distance(a, b)); }

  /// Signed decision value; positive toward the adversarial class.
  double decision(ConstSpan x) const {
    double f = bias;
    for (std::size_t i = 0; i < support.rows; ++i) f += coef[i] * kernel(support.row(i), x);
    return f;
  }

  friend bool operator==(const RbfSvm&, const RbfSvm&) = default;
};

inline double scale_gamma(const Matrix& x) {
  double mean = 0.0;
  for (double v : x.data) mean += v;
  mean /= static_cast<double>(x.data.size());
  double var = 0.0;
  for (double v : x.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.data.size());
  return var > 0.0 ? 1.0 / (static_cast<double>(x.cols) * var) : 1.0;
}

/// Trains on rows of `negatives` (label -1, natural) and `positives`
/// (label +1, adversarial).
inline RbfSvm fit_rbf_svm(const Matrix& negatives, const Matrix& positives, const RbfSvmConfig& cfg = {}) {
  if (negatives.rows == 0 || positives.rows == 0) throw ConfigError("rbf svm needs both classes");
  if (negatives.cols != positives.cols) throw ConfigError("rbf svm class widths differ");
  Matrix x = negatives;
  for (std::size_t i = 0; i < positives.rows; ++i) x.append_row(positives.row(i));
  const std::size_t n = x.rows;
  Vec y(n, -1.0);
  for (std::size_t i = negatives.rows; i < n; ++i) y[i] = 1.0;

  RbfSvm svm;
  svm.gamma = cfg.gamma > 0.0 ? cfg.gamma : scale_gamma(x);
  const double C = cfg.c_reg;

  Matrix K(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) K(i, j) = K(j, i) = svm.kernel(x.row(i), x.row(j));

  Vec alpha(n, 0.0);
  Vec G(n, -1.0);  // gradient of 0.5 a'Qa - e'a
  auto in_up = [&](std::size_t t) { return (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0); };
  auto in_low = [&](std::size_t t) { return (y[t] < 0 && alpha[t] < C) || (y[t] > 0 && alpha[t] > 0); };

  const std::size_t cap = static_cast<std::size_t>(cfg.max_passes) * n;
  double m_up = 0.0, m_low = 0.0;
  for (svm.iterations = 0; svm.iterations < cap; ++svm.iterations) {
    std::size_t i = n, j = n;
    m_up = -std::numeric_limits<double>::infinity();
    m_low = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * G[t];
      if (in_up(t) && v > m_up) m_up = v, i = t;
      if (in_low(t) && v < m_low) m_low = v, j = t;
    }
    if (i == n || j == n || m_up - m_low < cfg.kkt_tolerance) {
      svm.converged = true;
      break;
    }
    const double a = std::max(K(i, i) + K(j, j) - 2.0 * K(i, j), 1e-12);
    double lambda = (m_up - m_low) / a;
    lambda = std::min(lambda, y[i] > 0 ? C - alpha[i] : alpha[i]);
    lambda = std::min(lambda, y[j] > 0 ? alpha[j] : C - alpha[j]);
    alpha[i] += y[i] * lambda;
    alpha[j] -= y[j] * lambda;
    alpha[i] = std::clamp(alpha[i], 0.0, C);
    alpha[j] = std::clamp(alpha[j], 0.0, C);
    for (std::size_t t = 0; t < n; ++t) G[t] += y[t] * lambda * (K(t, i) - K(t, j));
  }

  double free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t)
    if (alpha[t] > 0.0 && alpha[t] < C) {
      free_sum += -y[t] * G[t];
      ++free_count;
    }
  svm.bias = free_count > 0 ? free_sum / static_cast<double>(free_count) : 0.5 * (m_up + m_low);
  if (!std::isfinite(svm.bias)) svm.bias = 0.0;

  svm.support = Matrix(0, x.cols);
  for (std::size_t t = 0; t < n; ++t)
    if (alpha[t] > 0.0) {
      svm.support.append_row(x.row(t));
      svm.coef.push_back(alpha[t] * y[t]);
    }
  return svm;
}

}  // namespace mead
