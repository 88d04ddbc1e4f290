// Lp norms and Euclidean projections onto Lp balls around a center point.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <string_view>

#include "mead/core.hpp"

namespace mead {

enum class Norm { L1, L2, Linf, None };

inline std::string_view to_string(Norm p) {
  switch (p) {
    case Norm::L1: return "l1";
    case Norm::L2: return "l2";
    case Norm::Linf: return "linf";
    case Norm::None: return "none";
  }
  return "?";
}

inline Norm parse_norm(std::string_view s) {
  if (s == "l1" || s == "1") return Norm::L1;
  if (s == "l2" || s == "2") return Norm::L2;
  if (s == "linf" || s == "inf") return Norm::Linf;
  if (s == "none") return Norm::None;
  throw ConfigError("unknown norm '" + std::string(s) + "' (expected l1|l2|linf|none)");
}

inline double lp_norm(ConstSpan v, Norm p) {
  double s = 0.0;
  switch (p) {
    case Norm::L1:
      for (double x : v) s += std::abs(x);
      return s;
    case Norm::L2:
      for (double x : v) s += x * x;
      return std::sqrt(s);
    case Norm::Linf:
      for (double x : v) s = std::max(s, std::abs(x));
      return s;
    case Norm::None: return 0.0;
  }
  return 0.0;
}

inline double lp_distance(ConstSpan a, ConstSpan b, Norm p) {
  Vec d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return lp_norm(d, p);
}

/// Euclidean projection of `offset` onto the L1 ball of radius eps using the
/// sorted-threshold rule.
inline Vec project_l1_offset(ConstSpan offset, double eps) {
  Vec out(offset.begin(), offset.end());
  if (lp_norm(offset, Norm::L1) <= eps) return out;
  Vec u(offset.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::abs(offset[i]);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double t = (cumulative - eps) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  for (double& v : out) {
    const double mag = std::max(std::abs(v) - theta, 0.0);
    v = std::copysign(mag, v);
  }
  return out;
}

/// Projects v onto {z : ||z - center||_p <= eps}. Points already inside are
/// returned unchanged. The result satisfies the constraint as evaluated by
/// lp_distance in floating point.
inline Vec project_lp(ConstSpan v, ConstSpan center, double eps, Norm p) {
  if (v.size() != center.size()) throw ConfigError("project_lp: dimension mismatch");
  if (p == Norm::None) return Vec(v.begin(), v.end());
  if (!(eps >= 0.0)) throw ConfigError("project_lp: eps must be non-negative");
  if (lp_distance(v, center, p) <= eps) return Vec(v.begin(), v.end());

  Vec offset(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) offset[i] = v[i] - center[i];
  switch (p) {
    case Norm::Linf:
      for (double& o : offset) o = std::clamp(o, -eps, eps);
      break;
    case Norm::L2: {
      const double n = lp_norm(offset, Norm::L2);
      for (double& o : offset) o *= eps / n;
      break;
    }
    case Norm::L1: offset = project_l1_offset(offset, eps); break;
    case Norm::None: break;
  }
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = center[i] + offset[i];
  // Rounding (in the L1 threshold or in center + offset) can overshoot by a
  // few ulp of the largest term; shrink the offset, doubling the shrink each
  // round, until the recomputed distance is inside. Ends at the center at worst.
  double shrink = 0x1p-52;
  for (int guard = 0; guard < 60 && lp_distance(out, center, p) > eps; ++guard, shrink *= 2.0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = center[i] + offset[i] * (1.0 - std::min(shrink, 1.0));
  return out;
}

/// Coordinatewise clamp to the unit box.
inline Vec clip_domain(ConstSpan x) {
  Vec out(x.begin(), x.end());
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace mead
