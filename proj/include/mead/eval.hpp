// Worst-case multi-armed detection metrics.
//
// A natural sample is a positive when at least one arm of the group fooled
// the classifier. Its adversarial score is the minimum detector score over
// its successful arms, so thresholding that minimum at gamma counts it as a
// true positive exactly when every successful arm is detected. Every natural
// also contributes a negative through its own score.
#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mead/attacks.hpp"
#include "mead/core.hpp"

namespace mead {

/// Arms that share (norm, epsilon).
struct ArmGroup {
  Norm norm = Norm::Linf;
  double epsilon = 0.0;
  std::vector<AttackSpec> arms;
};

/// Groups specs by (norm, epsilon) keeping first-appearance order.
inline std::vector<ArmGroup> group_arms(const std::vector<AttackSpec>& specs) {
  std::vector<ArmGroup> groups;
  for (const auto& s : specs) {
    // DeepFool is unconstrained but reported with every L2 group; it is
    // attached after grouping.
    if (s.family == AttackFamily::DeepFool) continue;
    const double eps = s.norm == Norm::None ? 0.0 : s.epsilon;
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const ArmGroup& g) { return g.norm == s.norm && g.epsilon == eps; });
    if (it == groups.end()) {
      groups.push_back({s.norm, eps, {}});
      it = groups.end() - 1;
    }
    it->arms.push_back(s);
  }
  for (const auto& s : specs) {
    if (s.family != AttackFamily::DeepFool) continue;
    bool attached = false;
    for (auto& g : groups)
      if (g.norm == Norm::L2) {
        g.arms.push_back(s);
        attached = true;
      }
    if (!attached) groups.push_back({Norm::L2, 0.0, {s}});
  }
  return groups;
}

struct ArmScore {
  std::size_t arm = 0;
  double score = 0.0;
};

struct SampleVerdict {
  std::size_t sample_id = 0;
  double natural_score = 0.0;
  std::vector<ArmScore> adversarial;  // successful arms only

  std::optional<double> worst_case() const {
    if (adversarial.empty()) return std::nullopt;
    double m = adversarial.front().score;
    for (const auto& a : adversarial) m = std::min(m, a.score);
    return m;
  }
};

/// Keeps exactly the outcomes that fool the classifier.
inline std::vector<AttackOutcome> sift(const std::vector<AttackOutcome>& outcomes) {
  std::vector<AttackOutcome> kept;
  for (const auto& o : outcomes)
    if (o.fooled) kept.push_back(o);
  return kept;
}

/// Overload matching the pipeline signature: re-derives `fooled` from the
/// model against the true label before filtering.
inline std::vector<AttackOutcome> sift(const ModelParams& model, std::size_t y, std::vector<AttackOutcome> outcomes) {
  for (auto& o : outcomes) {
    o.predicted = predict_label(model, o.x_adv);
    o.fooled = o.predicted != y;
  }
  return sift(outcomes);
}

struct ConfusionCounts {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Detection rule: flagged iff score >= gamma.
inline ConfusionCounts confusion_counts(const std::vector<SampleVerdict>& verdicts, double gamma) {
  ConfusionCounts c;
  for (const auto& v : verdicts) {
    if (v.natural_score >= gamma)
      ++c.fp;
    else
      ++c.tn;
    if (const auto w = v.worst_case()) {
      if (*w >= gamma)
        ++c.tp;
      else
        ++c.fn;
    }
  }
  return c;
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  std::size_t fp = 0;
  std::size_t tp = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // sorted by threshold descending == FPR ascending
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Sweeps gamma over every observed score plus +-inf.
inline RocCurve roc_points(const std::vector<SampleVerdict>& verdicts) {
  Vec neg, pos;
  for (const auto& v : verdicts) {
    neg.push_back(v.natural_score);
    if (const auto w = v.worst_case()) pos.push_back(*w);
  }
  if (neg.empty()) throw EvaluationError("roc: no natural samples");
  if (pos.empty()) throw EvaluationError("roc: no successful adversarial samples (group has no positives)");
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::sort(pos.begin(), pos.end(), std::greater<>());
  Vec thresholds = neg;
  thresholds.insert(thresholds.end(), pos.begin(), pos.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  RocCurve c;
  c.positives = pos.size();
  c.negatives = neg.size();
  const double inf = std::numeric_limits<double>::infinity();
  c.points.push_back({inf, 0.0, 0.0, 0, 0});
  std::size_t ip = 0, in = 0;
  for (double g : thresholds) {
    while (ip < pos.size() && pos[ip] >= g) ++ip;
    while (in < neg.size() && neg[in] >= g) ++in;
    c.points.push_back({g, static_cast<double>(in) / static_cast<double>(neg.size()),
                        static_cast<double>(ip) / static_cast<double>(pos.size()), in, ip});
  }
  c.points.push_back({-inf, 1.0, 1.0, neg.size(), pos.size()});
  return c;
}

/// Trapezoidal area under the curve.
inline double auroc(const RocCurve& c) {
  double area = 0.0;
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    const auto& a = c.points[i - 1];
    const auto& b = c.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return std::clamp(area, 0.0, 1.0);
}

/// FPR at the largest threshold whose TPR reaches 95%; no interpolation.
inline double fpr_at_95_tpr(const RocCurve& c) {
  for (const auto& p : c.points)
    if (p.tp * 100 >= 95 * c.positives) return p.fpr;
  return 1.0;
}

enum class Setting { Mead, Ace, Kl, Fr, Gini };

inline std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::Mead: return "mead";
    case Setting::Ace: return "ace";
    case Setting::Kl: return "kl";
    case Setting::Fr: return "fr";
    case Setting::Gini: return "gini";
  }
  return "?";
}

inline Setting parse_setting(std::string_view s) {
  for (auto v : {Setting::Mead, Setting::Ace, Setting::Kl, Setting::Fr, Setting::Gini})
    if (to_string(v) == s) return v;
  throw FormatError("unknown setting '" + std::string(s) + "'");
}

inline Setting setting_for(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::ACE: return Setting::Ace;
    case ObjectiveKind::KL: return Setting::Kl;
    case ObjectiveKind::FR: return Setting::Fr;
    case ObjectiveKind::Gini: return Setting::Gini;
  }
  return Setting::Mead;
}

/// Does arm `a` of `group` belong to `setting`?
inline bool arm_in_setting(const AttackSpec& a, Setting setting) {
  if (setting == Setting::Mead) return true;
  return uses_objective(a.family) && setting_for(a.objective) == setting;
}

/// Restricts verdicts to the arms of one setting.
inline std::vector<SampleVerdict> restrict_verdicts(const std::vector<SampleVerdict>& verdicts,
                                                    const ArmGroup& group, Setting setting) {
  std::vector<SampleVerdict> out;
  out.reserve(verdicts.size());
  for (const auto& v : verdicts) {
    SampleVerdict r{v.sample_id, v.natural_score, {}};
    for (const auto& a : v.adversarial)
      if (arm_in_setting(group.arms[a.arm], setting)) r.adversarial.push_back(a);
    out.push_back(std::move(r));
  }
  return out;
}

struct ReportRow {
  Norm norm = Norm::Linf;
  double epsilon = 0.0;
  Setting setting = Setting::Mead;
  std::string detector;
  double auroc = 0.0;
  double fpr_at_95_tpr = 0.0;
  std::size_t n_naturals = 0;
  std::size_t n_adversarials = 0;  // successful adversarial examples in the setting
};

/// Samples positive under MEAD but absent from the given setting's positives.
inline std::vector<std::size_t> sifter_differences(const std::vector<SampleVerdict>& verdicts, const ArmGroup& group,
                                                   Setting setting) {
  std::vector<std::size_t> ids;
  for (const auto& v : verdicts) {
    if (v.adversarial.empty()) continue;
    const bool in_setting = std::any_of(v.adversarial.begin(), v.adversarial.end(),
                                        [&](const ArmScore& a) { return arm_in_setting(group.arms[a.arm], setting); });
    if (!in_setting) ids.push_back(v.sample_id);
  }
  return ids;
}

struct GroupEvaluation {
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
  /// Filled when MEAD AUROC exceeds the best single-armed AUROC: the samples
  /// that are positives under MEAD but not under that best setting.
  std::vector<std::size_t> sifter_samples;
  std::optional<Setting> best_single;
};

/// Metrics for one (group, detector) from precomputed verdicts.
inline GroupEvaluation evaluate_verdicts(const std::vector<SampleVerdict>& verdicts, const ArmGroup& group,
                                         const std::string& detector) {
  GroupEvaluation ev;
  std::vector<Setting> settings{Setting::Mead};
  for (ObjectiveKind k : kAllObjectives)
    if (std::any_of(group.arms.begin(), group.arms.end(),
                    [&](const AttackSpec& a) { return uses_objective(a.family) && a.objective == k; }))
      settings.push_back(setting_for(k));
  double mead_auc = -1.0, best_single = -1.0;
  for (Setting s : settings) {
    const auto vs = s == Setting::Mead ? verdicts : restrict_verdicts(verdicts, group, s);
    ReportRow row{group.norm, group.epsilon, s, detector, 0.0, 0.0, vs.size(), 0};
    for (const auto& v : vs) row.n_adversarials += v.adversarial.size();
    try {
      const RocCurve c = roc_points(vs);
      row.auroc = auroc(c);
      row.fpr_at_95_tpr = fpr_at_95_tpr(c);
    } catch (const EvaluationError& e) {
      ev.warnings.push_back(std::string(to_string(group.norm)) + " eps=" + std::to_string(group.epsilon) + " " +
                            std::string(to_string(s)) + " " + detector + ": " + e.what());
      continue;
    }
    if (s == Setting::Mead) {
      mead_auc = row.auroc;
    } else if (row.auroc > best_single) {
      best_single = row.auroc;
      ev.best_single = s;
    }
    ev.rows.push_back(row);
  }
  if (ev.best_single && mead_auc > best_single)
    ev.sifter_samples = sifter_differences(verdicts, group, *ev.best_single);
  return ev;
}

}  // namespace mead
