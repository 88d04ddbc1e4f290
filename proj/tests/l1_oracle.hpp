#pragma once

#include <cmath>
#include <limits>

#include "mead/core.hpp"

namespace testutil {

// Exact Euclidean projection onto the L1 ball by enumerating supports. On
// the optimal face z_i = v_i - theta * sign(v_i) for i in S and 0 elsewhere,
// with theta fixed by ||z||_1 = eps. Feasible candidates are compared by
// distance; fine for small d.
inline mead::Vec l1_projection_by_support(const mead::Vec& v, double eps) {
  double n1 = 0.0;
  for (double x : v) n1 += std::abs(x);
  if (n1 <= eps) return v;
  const std::size_t d = v.size();
  mead::Vec best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask < (std::size_t{1} << d); ++mask) {
    double s = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < d; ++i)
      if (mask >> i & 1) s += std::abs(v[i]), ++k;
    const double theta = (s - eps) / static_cast<double>(k);
    if (theta < 0.0) continue;
    mead::Vec z(d, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < d && ok; ++i)
      if (mask >> i & 1) {
        const double m = std::abs(v[i]) - theta;
        if (m < 0.0) ok = false;
        z[i] = std::copysign(m, v[i]);
      }
    if (!ok) continue;
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) dist += (z[i] - v[i]) * (z[i] - v[i]);
    if (dist < best_dist) best_dist = dist, best = z;
  }
  return best;
}

}  // namespace testutil
