// Attack generators: FGSM, BIM and PGD under L1/L2/Linf, DeepFool, Square
// Attack (random search) and a rotation/translation grid attack.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mead/core.hpp"
#include "mead/nn.hpp"
#include "mead/objectives.hpp"
#include "mead/projection.hpp"

namespace mead {

enum class AttackFamily { FGSM, BIM, PGD, DeepFool, Square, SpatialTransform };

inline std::string_view to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::FGSM: return "fgsm";
    case AttackFamily::BIM: return "bim";
    case AttackFamily::PGD: return "pgd";
    case AttackFamily::DeepFool: return "deepfool";
    case AttackFamily::Square: return "square";
    case AttackFamily::SpatialTransform: return "spatial";
  }
  return "?";
}

inline AttackFamily parse_family(std::string_view s) {
  for (auto f : {AttackFamily::FGSM, AttackFamily::BIM, AttackFamily::PGD, AttackFamily::DeepFool,
                 AttackFamily::Square, AttackFamily::SpatialTransform})
    if (to_string(f) == s) return f;
  throw ConfigError("unknown attack family '" + std::string(s) + "'");
}

/// Whether the family maximizes one of the four objectives.
inline bool uses_objective(AttackFamily f) {
  return f != AttackFamily::DeepFool && f != AttackFamily::SpatialTransform;
}

struct AttackSpec {
  AttackFamily family = AttackFamily::PGD;
  ObjectiveKind objective = ObjectiveKind::ACE;
  Norm norm = Norm::Linf;
  double epsilon = 0.0;
  int steps = 40;            // iterations (PGD/BIM), queries (Square), max_iter (DeepFool)
  double step_size = 0.0;    // <= 0 selects 2.5 * epsilon / steps
  bool random_init = true;   // PGD only
  std::uint64_t seed = 0;
  double overshoot = 0.02;   // DeepFool
  double max_rotation_deg = 30.0;   // SpatialTransform
  int max_translation_px = 3;       // SpatialTransform
  int grid_steps = 5;               // SpatialTransform rotation samples

  double effective_step_size() const { return step_size > 0.0 ? step_size : 2.5 * epsilon / std::max(steps, 1); }

  void validate() const {
    switch (family) {
      case AttackFamily::FGSM:
      case AttackFamily::Square:
        if (norm != Norm::Linf) throw ConfigError(std::string(to_string(family)) + " is an Linf attack");
        [[fallthrough]];
      case AttackFamily::BIM:
      case AttackFamily::PGD:
        if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be non-negative");
        if (family != AttackFamily::FGSM && steps < 0) throw ConfigError("steps must be non-negative");
        if (norm == Norm::None) throw ConfigError("norm-constrained attack needs a norm");
        break;
      case AttackFamily::DeepFool:
        if (steps < 0) throw ConfigError("deepfool max_iter must be non-negative");
        break;
      case AttackFamily::SpatialTransform:
        if (grid_steps < 1 || max_translation_px < 0 || max_rotation_deg < 0.0)
          throw ConfigError("invalid spatial-transform grid");
        break;
    }
  }

  /// Human-readable arm id, e.g. "pgd-linf-ace-0.125".
  std::string name() const {
    std::ostringstream s;
    s << to_string(family) << '-' << to_string(norm);
    if (uses_objective(family)) s << '-' << to_string(objective);
    if (family != AttackFamily::DeepFool && family != AttackFamily::SpatialTransform) s << '-' << epsilon;
    return s.str();
  }

  /// Whether outcomes must satisfy ||x_adv - x||_p <= epsilon.
  bool norm_constrained() const {
    return family != AttackFamily::DeepFool && family != AttackFamily::SpatialTransform;
  }

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

struct AttackOptions {
  bool clip_domain = true;  // keep x_adv inside [0,1]^d
  std::optional<std::pair<std::size_t, std::size_t>> image_shape;
};

struct AttackOutcome {
  Vec x_adv;
  std::size_t predicted = 0;
  bool fooled = false;
  AttackSpec spec;
};

namespace detail {

inline Vec finish_point(Vec v, const AttackOptions& opt) { return opt.clip_domain ? clip_domain(v) : v; }

inline AttackOutcome make_outcome(const ModelParams& model, Vec x_adv, std::size_t y, const AttackSpec& spec) {
  AttackOutcome o;
  o.predicted = predict_label(model, x_adv);
  o.fooled = o.predicted != y;
  o.x_adv = std::move(x_adv);
  o.spec = spec;
  return o;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Steepest-ascent direction of unit Lp size for gradient g.
inline Vec ascent_direction(const Vec& g, Norm p) {
  Vec dir(g.size(), 0.0);
  switch (p) {
    case Norm::Linf:
      for (std::size_t i = 0; i < g.size(); ++i) dir[i] = sign(g[i]);
      break;
    case Norm::L2: {
      const double n = lp_norm(g, Norm::L2);
      if (n > 0.0)
        for (std::size_t i = 0; i < g.size(); ++i) dir[i] = g[i] / n;
      break;
    }
    case Norm::L1: {
      // Whole step spread over the k largest-|g| coordinates.
      const std::size_t k = std::max<std::size_t>(1, (g.size() + 99) / 100);
      std::vector<std::size_t> idx(g.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                        [&](std::size_t a, std::size_t b) {
                          const double ga = std::abs(g[a]), gb = std::abs(g[b]);
                          return ga != gb ? ga > gb : a < b;
                        });
      for (std::size_t j = 0; j < k; ++j) dir[idx[j]] = sign(g[idx[j]]) / static_cast<double>(k);
      break;
    }
    case Norm::None: break;
  }
  return dir;
}

/// Uniform sample from the Lp ball of radius eps centered at the origin.
inline Vec sample_in_ball(std::size_t d, double eps, Norm p, Rng& rng) {
  Vec v(d, 0.0);
  switch (p) {
    case Norm::Linf:
      for (double& x : v) x = uniform(rng, -eps, eps);
      break;
    case Norm::L2: {
      double n = 0.0;
      for (double& x : v) {
        x = normal(rng);
        n += x * x;
      }
      n = std::sqrt(n);
      const double r = eps * std::pow(uniform01(rng), 1.0 / static_cast<double>(d));
      if (n > 0.0)
        for (double& x : v) x *= r / n;
      break;
    }
    case Norm::L1: {
      // First d coordinates of a uniform point on the (d+1)-simplex, random signs.
      double total = 0.0;
      for (double& x : v) {
        x = -std::log(1.0 - uniform01(rng));
        total += x;
      }
      total += -std::log(1.0 - uniform01(rng));
      for (double& x : v) x = eps * x / total * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
      break;
    }
    case Norm::None: break;
  }
  return v;
}

}  // namespace detail

/// Projected gradient ascent on the objective. BIM is the same iteration
/// without random start.
inline AttackOutcome pgd(const ModelParams& model, ConstSpan x, std::size_t y, ObjectiveKind objective, double eps,
                         Norm p, int steps, double step_size, bool random_init, std::uint64_t seed,
                         const AttackOptions& opt = {}) {
  AttackSpec spec;
  spec.family = random_init ? AttackFamily::PGD : AttackFamily::BIM;
  spec.objective = objective;
  spec.norm = p;
  spec.epsilon = eps;
  spec.steps = steps;
  spec.step_size = step_size;
  spec.random_init = random_init;
  spec.seed = seed;
  spec.validate();
  const ObjectiveReference ref = make_reference(model, objective, x, y);
  Vec cur(x.begin(), x.end());
  if (random_init && eps > 0.0) {
    Rng rng(seed);
    Vec noise = detail::sample_in_ball(x.size(), eps, p, rng);
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += noise[i];
    cur = detail::finish_point(project_lp(cur, x, eps, p), opt);
  }
  const double alpha = step_size > 0.0 ? step_size : 2.5 * eps / std::max(steps, 1);
  for (int s = 0; s < steps; ++s) {
    const Vec g = input_gradient(model, cur, objective, ref);
    const Vec dir = detail::ascent_direction(g, p);
    Vec next(cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) next[i] = cur[i] + alpha * dir[i];
    cur = detail::finish_point(project_lp(next, x, eps, p), opt);
  }
  return detail::make_outcome(model, std::move(cur), y, spec);
}

/// Single signed-gradient step of size eps (Linf).
inline AttackOutcome fgsm(const ModelParams& model, ConstSpan x, std::size_t y, ObjectiveKind objective, double eps,
                          const AttackOptions& opt = {}) {
  AttackSpec spec;
  spec.family = AttackFamily::FGSM;
  spec.objective = objective;
  spec.norm = Norm::Linf;
  spec.epsilon = eps;
  spec.steps = 1;
  spec.step_size = eps;
  spec.random_init = false;
  spec.validate();
  const ObjectiveReference ref = make_reference(model, objective, x, y);
  const Vec g = input_gradient(model, x, objective, ref);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + eps * detail::sign(g[i]);
  return detail::make_outcome(model, detail::finish_point(project_lp(out, x, eps, Norm::Linf), opt), y, spec);
}

/// Multi-class DeepFool: repeated minimal linearized steps toward the
/// closest competing boundary, scaled by (1 + overshoot). Unconstrained.
inline AttackOutcome deepfool(const ModelParams& model, ConstSpan x, std::size_t y, int max_iter = 50,
                              double overshoot = 0.02, const AttackOptions& opt = {}) {
  AttackSpec spec;
  spec.family = AttackFamily::DeepFool;
  spec.norm = Norm::L2;
  spec.steps = max_iter;
  spec.overshoot = overshoot;
  const std::size_t c = model.output_dim();
  if (c < 2) throw ConfigError("deepfool needs at least two classes");
  Vec cur(x.begin(), x.end());
  Vec r_total(x.size(), 0.0);
  for (int it = 0; it < max_iter; ++it) {
    const auto trace = forward_trace(model, cur);
    const Vec logits(trace.logits().begin(), trace.logits().end());
    if (argmax(logits) != y) break;
    auto grad_of = [&](std::size_t k) {
      Vec e(c, 0.0);
      e[k] = 1.0;
      return backpropagate(model, trace, std::move(e));
    };
    const Vec grad_y = grad_of(y);
    double best_ratio = std::numeric_limits<double>::infinity();
    Vec best_w;
    double best_f = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      if (k == y) continue;
      Vec w = grad_of(k);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= grad_y[i];
      const double f = logits[k] - logits[y];
      const double wn = lp_norm(w, Norm::L2);
      if (wn == 0.0) continue;
      const double ratio = std::abs(f) / wn;
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best_w = std::move(w);
        best_f = f;
      }
    }
    if (best_w.empty()) break;
    const double wn2 = dot(best_w, best_w);
    const double scale = (std::abs(best_f) + 1e-4) / wn2;
    for (std::size_t i = 0; i < r_total.size(); ++i) r_total[i] += scale * best_w[i];
    Vec next(x.size());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = x[i] + (1.0 + overshoot) * r_total[i];
    cur = detail::finish_point(std::move(next), opt);
  }
  return detail::make_outcome(model, std::move(cur), y, spec);
}

// ---------------------------------------------------------------------------
// Square attack
// ---------------------------------------------------------------------------

struct SquareProposal {
  int iteration = 0;
  std::vector<std::size_t> coords;  // coordinates set to sign * eps
  double sign = 1.0;
};

struct SquareLog {
  std::vector<SquareProposal> accepted;
  Vec trace;  // objective after initialization and after every accepted proposal
};

namespace detail {

inline double square_fraction(int it, int iters) {
  if (iters <= 1) return 0.3;
  const double t = static_cast<double>(it) / static_cast<double>(iters - 1);
  return 0.3 * std::pow(0.01 / 0.3, t);
}

inline std::vector<std::size_t> square_block(std::size_t d, const AttackOptions& opt, double frac, Rng& rng) {
  std::vector<std::size_t> coords;
  if (opt.image_shape && opt.image_shape->first * opt.image_shape->second == d) {
    const auto [rows, cols] = *opt.image_shape;
    const std::size_t side_ref = std::min(rows, cols);
    const std::size_t s = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(frac * static_cast<double>(side_ref))), 1, side_ref);
    const std::size_t r0 = uniform_index(rng, rows - s + 1);
    const std::size_t c0 = uniform_index(rng, cols - s + 1);
    for (std::size_t r = r0; r < r0 + s; ++r)
      for (std::size_t cc = c0; cc < c0 + s; ++cc) coords.push_back(r * cols + cc);
  } else {
    const std::size_t k =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(frac * static_cast<double>(d))), 1, d);
    const std::size_t start = uniform_index(rng, d - k + 1);
    for (std::size_t i = start; i < start + k; ++i) coords.push_back(i);
  }
  return coords;
}

}  // namespace detail

/// Gradient-free random search in the Linf ball: each proposal sets one
/// contiguous block of the perturbation to +-eps and is kept only if the
/// objective strictly increases. Stops early once the model is fooled.
inline AttackOutcome square_attack(const ModelParams& model, ConstSpan x, std::size_t y, ObjectiveKind objective,
                                   double eps, int iters, std::uint64_t seed, const AttackOptions& opt = {},
                                   SquareLog* log = nullptr) {
  AttackSpec spec;
  spec.family = AttackFamily::Square;
  spec.objective = objective;
  spec.norm = Norm::Linf;
  spec.epsilon = eps;
  spec.steps = iters;
  spec.seed = seed;
  spec.validate();
  const ObjectiveReference ref = make_reference(model, objective, x, y);
  Rng rng(seed);
  Vec delta(x.size(), 0.0);
  auto point = [&](const Vec& dlt) {
    Vec p(x.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = x[i] + dlt[i];
    return detail::finish_point(std::move(p), opt);
  };
  Vec cur = point(delta);
  double best = objective_at(model, cur, objective, ref);
  if (log) log->trace.push_back(best);
  for (int it = 0; it < iters; ++it) {
    if (predict_label(model, cur) != y) break;
    SquareProposal prop;
    prop.iteration = it;
    prop.coords = detail::square_block(x.size(), opt, detail::square_fraction(it, iters), rng);
    prop.sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    Vec cand_delta = delta;
    for (std::size_t i : prop.coords) cand_delta[i] = prop.sign * eps;
    Vec cand = point(cand_delta);
    const double val = objective_at(model, cand, objective, ref);
    if (val > best) {
      best = val;
      delta = std::move(cand_delta);
      cur = std::move(cand);
      if (log) {
        log->accepted.push_back(std::move(prop));
        log->trace.push_back(best);
      }
    }
  }
  return detail::make_outcome(model, std::move(cur), y, spec);
}

// ---------------------------------------------------------------------------
// Spatial transformation
// ---------------------------------------------------------------------------

/// Rotates an image about its center by `degrees` and shifts it by
/// (dy, dx) pixels. Bilinear sampling with zero padding.
inline Vec rotate_translate(ConstSpan image, std::size_t rows, std::size_t cols, double degrees, double dy,
                            double dx) {
  Vec out(rows * cols, 0.0);
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cy = (static_cast<double>(rows) - 1.0) / 2.0;
  const double cx = (static_cast<double>(cols) - 1.0) / 2.0;
  auto px = [&](long r, long cc) -> double {
    if (r < 0 || cc < 0 || r >= static_cast<long>(rows) || cc >= static_cast<long>(cols)) return 0.0;
    return image[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(cc)];
  };
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      // Inverse map: output pixel -> source coordinate.
      const double oy = static_cast<double>(i) - cy - dy;
      const double ox = static_cast<double>(j) - cx - dx;
      const double sy = c * oy + s * ox + cy;
      const double sx = -s * oy + c * ox + cx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double wy = sy - fy, wx = sx - fx;
      const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
      out[i * cols + j] = (1 - wy) * (1 - wx) * px(y0, x0) + (1 - wy) * wx * px(y0, x0 + 1) +
                          wy * (1 - wx) * px(y0 + 1, x0) + wy * wx * px(y0 + 1, x0 + 1);
    }
  }
  return out;
}

struct SpatialTransform {
  double degrees = 0.0;
  int dy = 0;
  int dx = 0;
};

/// Grid of transforms, identity first.
inline std::vector<SpatialTransform> spatial_grid(double max_rot_deg, int max_trans_px, int grid_steps) {
  std::vector<double> angles;
  if (grid_steps <= 1 || max_rot_deg == 0.0) {
    angles.push_back(0.0);
  } else {
    for (int k = 0; k < grid_steps; ++k)
      angles.push_back(-max_rot_deg + 2.0 * max_rot_deg * k / static_cast<double>(grid_steps - 1));
    if (std::none_of(angles.begin(), angles.end(), [](double a) { return a == 0.0; })) angles.push_back(0.0);
  }
  std::vector<SpatialTransform> grid{{0.0, 0, 0}};
  for (double a : angles)
    for (int dy = -max_trans_px; dy <= max_trans_px; ++dy)
      for (int dx = -max_trans_px; dx <= max_trans_px; ++dx)
        if (!(a == 0.0 && dy == 0 && dx == 0)) grid.push_back({a, dy, dx});
  return grid;
}

/// Exhaustive rotation/translation search: first fooling transform in grid
/// order, otherwise the transform with the largest ACE.
inline AttackOutcome spatial_transform_attack(const ModelParams& model, ConstSpan x_image, std::size_t y,
                                              double max_rot_deg, int max_trans_px, int grid_steps,
                                              const AttackOptions& opt) {
  if (!opt.image_shape) throw ConfigError("spatial transform attack needs image-shaped input");
  const auto [rows, cols] = *opt.image_shape;
  if (rows * cols != x_image.size()) throw ConfigError("image shape does not match input width");
  AttackSpec spec;
  spec.family = AttackFamily::SpatialTransform;
  spec.norm = Norm::None;
  spec.max_rotation_deg = max_rot_deg;
  spec.max_translation_px = max_trans_px;
  spec.grid_steps = grid_steps;
  spec.validate();
  Vec best_point;
  double best_loss = -std::numeric_limits<double>::infinity();
  for (const auto& t : spatial_grid(max_rot_deg, max_trans_px, grid_steps)) {
    Vec cand = detail::finish_point(rotate_translate(x_image, rows, cols, t.degrees, t.dy, t.dx), opt);
    const auto pred = forward(model, cand);
    if (argmax(pred.probs) != y) return detail::make_outcome(model, std::move(cand), y, spec);
    const double loss = ace_loss(pred.probs, y);
    if (loss > best_loss) {
      best_loss = loss;
      best_point = std::move(cand);
    }
  }
  return detail::make_outcome(model, std::move(best_point), y, spec);
}

/// Dispatches one arm on one natural sample.
inline AttackOutcome run_attack(const ModelParams& model, ConstSpan x, std::size_t y, const AttackSpec& spec,
                                const AttackOptions& opt, std::uint64_t seed) {
  spec.validate();
  AttackOutcome out;
  switch (spec.family) {
    case AttackFamily::FGSM: out = fgsm(model, x, y, spec.objective, spec.epsilon, opt); break;
    case AttackFamily::BIM:
      out = pgd(model, x, y, spec.objective, spec.epsilon, spec.norm, spec.steps, spec.effective_step_size(), false,
                seed, opt);
      break;
    case AttackFamily::PGD:
      out = pgd(model, x, y, spec.objective, spec.epsilon, spec.norm, spec.steps, spec.effective_step_size(),
                spec.random_init, seed, opt);
      break;
    case AttackFamily::DeepFool: out = deepfool(model, x, y, spec.steps, spec.overshoot, opt); break;
    case AttackFamily::Square: out = square_attack(model, x, y, spec.objective, spec.epsilon, spec.steps, seed, opt); break;
    case AttackFamily::SpatialTransform:
      out = spatial_transform_attack(model, x, y, spec.max_rotation_deg, spec.max_translation_px, spec.grid_steps,
                                     opt);
      break;
  }
  out.spec = spec;
  return out;
}

}  // namespace mead
