// Attack objectives over soft predictions. Every function takes the
// adversarial probability vector q_adv and, where needed, the true label or
// the natural prediction q_nat.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <variant>

#include "mead/core.hpp"

namespace mead {

enum class ObjectiveKind { ACE, KL, FR, Gini };

inline constexpr std::array<ObjectiveKind, 4> kAllObjectives = {ObjectiveKind::ACE, ObjectiveKind::KL,
                                                                 ObjectiveKind::FR, ObjectiveKind::Gini};

inline std::string_view to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::ACE: return "ace";
    case ObjectiveKind::KL: return "kl";
    case ObjectiveKind::FR: return "fr";
    case ObjectiveKind::Gini: return "gini";
  }
  return "?";
}

inline ObjectiveKind parse_objective(std::string_view s) {
  for (ObjectiveKind k : kAllObjectives)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown objective '" + std::string(s) + "' (expected ace|kl|fr|gini)");
}

/// Lower bound applied to every probability that enters a log, a division or
/// an arccos.
inline constexpr double kProbFloor = 1e-12;
/// The arccos argument is capped here before differentiating the FR loss.
inline constexpr double kFrArgCap = 1.0 - 1e-9;

inline double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0); }

struct TrueLabel {
  std::size_t label = 0;
};
struct NaturalPrediction {
  Vec probs;
};
using ObjectiveReference = std::variant<std::monostate, TrueLabel, NaturalPrediction>;

inline double ace_loss(ConstSpan q_adv, std::size_t y) { return -std::log(clamp_prob(q_adv[y])); }

inline double kl_loss(ConstSpan q_nat, ConstSpan q_adv) {
  double s = 0.0;
  for (std::size_t i = 0; i < q_nat.size(); ++i) {
    if (q_nat[i] <= 0.0) continue;
    s += q_nat[i] * (std::log(clamp_prob(q_nat[i])) - std::log(clamp_prob(q_adv[i])));
  }
  // Rounding can leave a residue of a few ulp below zero near q_nat == q_adv.
  return std::max(s, 0.0);
}

namespace detail {

struct Bhattacharyya {
  double coefficient;  // normalized, clamped to [-1, 1]
  double raw;          // sum_i sqrt(a_i b_i)
  double mass_a;       // sum of clamped a
  double mass_b;       // sum of clamped b
};

// Normalizing by the clamped masses makes the coefficient exactly 1 when
// a == b, so FR(q, q) == 0 without a tolerance.
inline Bhattacharyya bhattacharyya(ConstSpan a, ConstSpan b) {
  Bhattacharyya r{0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ca = clamp_prob(a[i]);
    const double cb = clamp_prob(b[i]);
    r.raw += std::sqrt(ca * cb);
    r.mass_a += ca;
    r.mass_b += cb;
  }
  r.coefficient = std::clamp(r.raw / std::sqrt(r.mass_a * r.mass_b), -1.0, 1.0);
  return r;
}

}  // namespace detail

inline double fr_loss(ConstSpan q_nat, ConstSpan q_adv) {
  return 2.0 * std::acos(detail::bhattacharyya(q_nat, q_adv).coefficient);
}

inline double gini_loss(ConstSpan q_adv) {
  double s = 0.0;
  for (double q : q_adv) s += q * q;
  const double upper = 1.0 - 1.0 / std::sqrt(static_cast<double>(q_adv.size()));
  return std::clamp(1.0 - std::sqrt(s), 0.0, upper);
}

namespace detail {

inline const TrueLabel& need_label(const ObjectiveReference& ref) {
  if (const auto* t = std::get_if<TrueLabel>(&ref)) return *t;
  throw ConfigError("ACE objective requires a true-label reference");
}

inline const NaturalPrediction& need_natural(ObjectiveKind k, const ObjectiveReference& ref, std::size_t classes) {
  if (const auto* n = std::get_if<NaturalPrediction>(&ref)) {
    if (n->probs.size() != classes) throw ConfigError("natural prediction has wrong class count");
    return *n;
  }
  throw ConfigError(std::string(to_string(k)) + " objective requires a natural-prediction reference");
}

}  // namespace detail

inline double objective_value(ObjectiveKind kind, const ObjectiveReference& ref, ConstSpan q_adv) {
  switch (kind) {
    case ObjectiveKind::ACE: {
      const auto& t = detail::need_label(ref);
      if (t.label >= q_adv.size()) throw ConfigError("label out of range");
      return ace_loss(q_adv, t.label);
    }
    case ObjectiveKind::KL: return kl_loss(detail::need_natural(kind, ref, q_adv.size()).probs, q_adv);
    case ObjectiveKind::FR: return fr_loss(detail::need_natural(kind, ref, q_adv.size()).probs, q_adv);
    case ObjectiveKind::Gini: return gini_loss(q_adv);
  }
  throw ConfigError("bad objective kind");
}

/// Gradient of objective_value with respect to q_adv (treated as an
/// unconstrained vector).
inline Vec objective_grad_probs(ObjectiveKind kind, const ObjectiveReference& ref, ConstSpan q_adv) {
  const std::size_t c = q_adv.size();
  Vec g(c, 0.0);
  switch (kind) {
    case ObjectiveKind::ACE: {
      const auto& t = detail::need_label(ref);
      if (t.label >= c) throw ConfigError("label out of range");
      g[t.label] = -1.0 / clamp_prob(q_adv[t.label]);
      break;
    }
    case ObjectiveKind::KL: {
      const auto& n = detail::need_natural(kind, ref, c);
      for (std::size_t i = 0; i < c; ++i) g[i] = -n.probs[i] / clamp_prob(q_adv[i]);
      break;
    }
    case ObjectiveKind::FR: {
      const auto& n = detail::need_natural(kind, ref, c);
      const auto bc = detail::bhattacharyya(n.probs, q_adv);
      const double u = std::min(bc.raw / std::sqrt(bc.mass_a * bc.mass_b), kFrArgCap);
      const double outer = -2.0 / std::sqrt(1.0 - u * u);
      const double norm = std::sqrt(bc.mass_a * bc.mass_b);
      for (std::size_t i = 0; i < c; ++i) {
        const double ca = clamp_prob(n.probs[i]);
        const double cb = clamp_prob(q_adv[i]);
        const double active = q_adv[i] > kProbFloor ? 1.0 : 0.0;
        const double d_raw = 0.5 * std::sqrt(ca / cb) * active;
        const double du = d_raw / norm - 0.5 * bc.raw / norm / bc.mass_b * active;
        g[i] = outer * du;
      }
      break;
    }
    case ObjectiveKind::Gini: {
      double s = 0.0;
      for (double q : q_adv) s += q * q;
      const double r = std::sqrt(std::max(s, kProbFloor * kProbFloor));
      for (std::size_t i = 0; i < c; ++i) g[i] = -q_adv[i] / r;
      break;
    }
  }
  return g;
}

inline double gini_upper_bound(std::size_t classes) { return 1.0 - 1.0 / std::sqrt(static_cast<double>(classes)); }
inline constexpr double kFrUpperBound = std::numbers::pi;

}  // namespace mead
