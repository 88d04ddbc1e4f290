// Train -> attack -> detect -> evaluate, as separable stages whose outputs
// can be persisted and reloaded.
#pragma once

#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mead/config.hpp"
#include "mead/data.hpp"
#include "mead/detectors/detector.hpp"
#include "mead/eval.hpp"

namespace mead {

/// Runs body(i) for every i in [0, n) on up to `jobs` threads. Callers write
/// results into per-index slots, so output never depends on scheduling.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& body) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min(jobs, n);
  for (std::size_t k = 1; k < count; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

/// Content key of a labeled sample; seeds derived from it do not depend on
/// where the sample sits in the dataset.
inline std::uint64_t sample_key(ConstSpan x, std::size_t y) {
  std::uint64_t h = fnv1a(x.data(), x.size() * sizeof(double));
  const std::uint64_t yy = y;
  return fnv1a(&yy, sizeof yy, h);
}

inline std::string arm_key(const AttackSpec& s) { return detail::to_json(s).dump(); }

inline std::uint64_t attack_seed(std::uint64_t base, const AttackSpec& s, ConstSpan x, std::size_t y) {
  const std::string k = arm_key(s);
  return derive_seed(derive_seed(base, s.seed), sample_key(x, y), fnv1a(k.data(), k.size()));
}

/// Distinct arms across groups, in first-appearance order. Two different
/// specs may not share a name, since names key the score files.
inline std::vector<AttackSpec> unique_arms(const std::vector<ArmGroup>& groups) {
  std::vector<AttackSpec> arms;
  for (const auto& g : groups)
    for (const auto& a : g.arms) {
      auto it = std::find_if(arms.begin(), arms.end(), [&](const AttackSpec& b) { return b.name() == a.name(); });
      if (it == arms.end())
        arms.push_back(a);
      else if (!(*it == a))
        throw ConfigError("two different attack specs share the name '" + a.name() + "'");
    }
  return arms;
}

// ---------------------------------------------------------------------------
// Stage 1: classifier
// ---------------------------------------------------------------------------

inline Architecture resolve_architecture(const ExperimentConfig& cfg, const LabeledDataset& train) {
  Architecture a = cfg.model;
  a.input_dim = train.dim();
  a.output_dim = train.classes;
  a.validate();
  return a;
}

inline TrainedModel train_model(const ExperimentConfig& cfg, const LabeledDataset& train) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seed, 0x7a1, t.seed);
  return train_classifier(train, resolve_architecture(cfg, train), t);
}

/// The naturals that enter evaluation, with their ids in the test split.
struct EvalNaturals {
  LabeledDataset data;
  std::vector<std::size_t> ids;
};

inline EvalNaturals select_naturals(const ExperimentConfig& cfg, const ModelParams& model, const LabeledDataset& test) {
  EvalNaturals n;
  n.data.classes = test.classes;
  n.data.image_shape = test.image_shape;
  n.data.inputs = Matrix(0, test.dim());
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (cfg.restrict_to_correct && predict_label(model, test.input(i)) != test.labels[i]) continue;
    n.data.inputs.append_row(test.input(i));
    n.data.labels.push_back(test.labels[i]);
    n.ids.push_back(i);
  }
  return n;
}

inline AttackOptions attack_options(const ExperimentConfig& cfg, const LabeledDataset& data) {
  AttackOptions o;
  o.clip_domain = cfg.domain_clip;
  o.image_shape = data.image_shape;
  return o;
}

// ---------------------------------------------------------------------------
// Stage 2: attacks
// ---------------------------------------------------------------------------

/// outcomes[a][i]: arm a on natural i. x_adv is only kept for fooling
/// outcomes; the rest are discarded by the sifter anyway.
struct ArmRun {
  std::vector<AttackSpec> arms;
  std::vector<std::size_t> sample_ids;
  std::size_t dim = 0;
  std::vector<std::vector<AttackOutcome>> outcomes;

  std::size_t successes(std::size_t a) const {
    std::size_t n = 0;
    for (const auto& o : outcomes[a]) n += o.fooled;
    return n;
  }
};

inline ArmRun run_arms(const ModelParams& model, const EvalNaturals& nat, const std::vector<AttackSpec>& arms,
                       const AttackOptions& opt, std::uint64_t seed, std::size_t jobs, bool keep_failures = false) {
  ArmRun run;
  run.arms = arms;
  run.sample_ids = nat.ids;
  run.dim = nat.data.dim();
  const std::size_t m = nat.data.size();
  run.outcomes.assign(arms.size(), std::vector<AttackOutcome>(m));
  parallel_for(arms.size() * m, jobs, [&](std::size_t t) {
    const std::size_t a = t / m, i = t % m;
    const ConstSpan x = nat.data.input(i);
    const std::size_t y = nat.data.labels[i];
    AttackOutcome o = run_attack(model, x, y, arms[a], opt, attack_seed(seed, arms[a], x, y));
    if (!o.fooled && !keep_failures) o.x_adv.clear();
    run.outcomes[a][i] = std::move(o);
  });
  return run;
}

inline constexpr char kArmRunMagic[] = "MEADADV1";

inline std::string serialize_arm_run(const ArmRun& r) {
  detail::BlobWriter w;
  w.out.assign(kArmRunMagic, 8);
  w.u32(static_cast<std::uint32_t>(r.arms.size()));
  for (const auto& a : r.arms) w.str(arm_key(a));
  w.u32(static_cast<std::uint32_t>(r.sample_ids.size()));
  for (std::size_t id : r.sample_ids) w.u32(static_cast<std::uint32_t>(id));
  w.u32(static_cast<std::uint32_t>(r.dim));
  for (const auto& row : r.outcomes)
    for (const auto& o : row) {
      w.u8(o.fooled);
      w.u32(static_cast<std::uint32_t>(o.predicted));
      if (o.fooled)
        for (double v : o.x_adv) w.f64(v);
    }
  return w.out;
}

inline ArmRun deserialize_arm_run(const std::string& bytes, const std::string& what = "adversarials") {
  detail::BlobReader rd{{bytes, 0, what}};
  if (rd.bytes(8) != std::string(kArmRunMagic, 8)) throw FormatError(what + ": bad magic at byte offset 0");
  ArmRun r;
  r.arms.resize(rd.count());
  for (auto& a : r.arms) {
    const std::size_t at = rd.pos;
    try {
      a = detail::attack_from_json(nlohmann::json::parse(rd.str()), "arm");
    } catch (const std::exception& e) {
      throw FormatError(what + ": bad arm record at byte offset " + std::to_string(at) + ": " + e.what());
    }
  }
  r.sample_ids.resize(rd.count());
  for (auto& id : r.sample_ids) id = rd.u32();
  r.dim = rd.u32();
  r.outcomes.assign(r.arms.size(), std::vector<AttackOutcome>(r.sample_ids.size()));
  for (std::size_t a = 0; a < r.arms.size(); ++a)
    for (auto& o : r.outcomes[a]) {
      o.spec = r.arms[a];
      o.fooled = rd.u8() != 0;
      o.predicted = rd.u32();
      if (o.fooled) {
        o.x_adv.resize(r.dim);
        for (double& v : o.x_adv) v = rd.f64();
      }
    }
  if (!rd.done()) throw FormatError(what + ": trailing bytes at byte offset " + std::to_string(rd.pos));
  return r;
}

// ---------------------------------------------------------------------------
// Stage 3: detectors
// ---------------------------------------------------------------------------

/// Minimum number of successful training-attack outcomes before the
/// supervised positives are restricted to successes.
inline constexpr std::size_t kMinSupervisedPositives = 10;

struct FitMaterial {
  LabeledDataset naturals;
  Matrix positives;
  std::vector<std::size_t> sources;  // natural row of each positive
  std::size_t attacked = 0;
  std::size_t successful = 0;
  bool used_all = false;
};

/// Fit naturals are the first `fit_samples` training points; supervised
/// positives come from the configured training attack on them.
inline FitMaterial detector_fit_material(const ExperimentConfig& cfg, const ModelParams& model,
                                         const LabeledDataset& train, std::size_t jobs) {
  FitMaterial fm;
  const std::size_t n = std::min(cfg.fit_samples, train.size());
  fm.naturals.classes = train.classes;
  fm.naturals.image_shape = train.image_shape;
  fm.naturals.inputs = Matrix(0, train.dim());
  for (std::size_t i = 0; i < n; ++i) {
    fm.naturals.inputs.append_row(train.input(i));
    fm.naturals.labels.push_back(train.labels[i]);
  }
  const bool need = std::any_of(cfg.detectors.begin(), cfg.detectors.end(),
                                [](const DetectorConfig& d) { return is_supervised(d.kind); });
  if (!need) return fm;
  EvalNaturals en{fm.naturals, {}};
  const ArmRun run = run_arms(model, en, {cfg.detector_training_attack}, attack_options(cfg, train),
                              derive_seed(cfg.seed, 0xf17), jobs, true);
  fm.attacked = n;
  fm.successful = run.successes(0);
  fm.used_all = fm.successful < kMinSupervisedPositives;
  fm.positives = Matrix(0, train.dim());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = run.outcomes[0][i];
    if (!o.fooled && !fm.used_all) continue;
    fm.positives.append_row(o.x_adv);
    fm.sources.push_back(i);
  }
  return fm;
}

inline std::vector<Detector> fit_detectors(const ExperimentConfig& cfg, const ModelParams& model,
                                           const FitMaterial& fm, std::size_t jobs) {
  std::vector<Detector> out(cfg.detectors.size());
  DetectorFitData data{&fm.naturals, fm.positives, cfg.detector_training_attack.name(), fm.sources};
  parallel_for(cfg.detectors.size(), jobs, [&](std::size_t k) {
    out[k] = fit_detector(cfg.detectors[k], model, data, derive_seed(cfg.seed, 0xde7, k));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Stage 4: scores and report
// ---------------------------------------------------------------------------

/// Scores every natural and every fooling outcome. Record order is fixed:
/// detector, then naturals, then arms.
inline std::vector<ScoreRecord> score_all(const ModelParams& model, const std::vector<Detector>& detectors,
                                          const LabeledDataset& naturals, const ArmRun& run, std::size_t jobs) {
  struct Task {
    std::size_t det, sample, arm;  // arm == npos for the natural
  };
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<Task> tasks;
  for (std::size_t d = 0; d < detectors.size(); ++d) {
    for (std::size_t i = 0; i < run.sample_ids.size(); ++i) tasks.push_back({d, i, npos});
    for (std::size_t a = 0; a < run.arms.size(); ++a)
      for (std::size_t i = 0; i < run.sample_ids.size(); ++i)
        if (run.outcomes[a][i].fooled) tasks.push_back({d, i, a});
  }
  std::vector<ScoreRecord> recs(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t t) {
    const Task& k = tasks[t];
    const Detector& det = detectors[k.det];
    ScoreRecord r;
    r.sample = run.sample_ids[k.sample];
    r.detector = std::string(to_string(det.kind));
    if (k.arm == npos) {
      r.score = det.score(model, naturals.input(k.sample));
    } else {
      r.arm = run.arms[k.arm].name();
      r.score = det.score(model, run.outcomes[k.arm][k.sample].x_adv);
    }
    recs[t] = std::move(r);
  });
  return recs;
}

struct ArmCount {
  std::string arm;
  std::size_t naturals = 0;
  std::size_t successful = 0;
};

struct SifterNote {
  Norm norm = Norm::Linf;
  double epsilon = 0.0;
  std::string detector;
  double mead_auroc = 0.0;
  Setting best_single = Setting::Ace;
  double best_auroc = 0.0;
  std::vector<std::size_t> samples;
};

struct MeadReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
  std::vector<SifterNote> sifter;
  std::vector<ArmCount> arm_counts;
};

/// Rebuilds verdicts from score records. A sample's adversarial entries are
/// exactly the arm records present, which the scorer only writes for fooling
/// outcomes.
inline std::vector<SampleVerdict> verdicts_from_scores(const std::vector<ScoreRecord>& recs,
                                                       const std::string& detector, const ArmGroup& group) {
  std::map<std::string, std::size_t> arm_slot;
  for (std::size_t k = 0; k < group.arms.size(); ++k) arm_slot.emplace(group.arms[k].name(), k);
  std::map<std::size_t, SampleVerdict> by_sample;
  std::set<std::size_t> has_natural;
  for (const auto& r : recs) {
    if (r.detector != detector) continue;
    auto& v = by_sample[r.sample];
    v.sample_id = r.sample;
    if (r.arm.empty()) {
      v.natural_score = r.score;
      has_natural.insert(r.sample);
    } else if (auto it = arm_slot.find(r.arm); it != arm_slot.end()) {
      v.adversarial.push_back({it->second, r.score});
    }
  }
  std::vector<SampleVerdict> out;
  for (auto& [id, v] : by_sample) {
    if (!has_natural.count(id)) throw FormatError("scores: sample " + std::to_string(id) + " has no natural score");
    std::sort(v.adversarial.begin(), v.adversarial.end(),
              [](const ArmScore& a, const ArmScore& b) { return a.arm < b.arm; });
    out.push_back(std::move(v));
  }
  return out;
}

inline MeadReport build_report(const std::vector<ArmGroup>& groups, const std::vector<std::string>& detectors,
                               const std::vector<ScoreRecord>& recs) {
  MeadReport rep;
  for (const auto& g : groups)
    for (const auto& det : detectors) {
      const auto verdicts = verdicts_from_scores(recs, det, g);
      GroupEvaluation ev = evaluate_verdicts(verdicts, g, det);
      rep.rows.insert(rep.rows.end(), ev.rows.begin(), ev.rows.end());
      rep.warnings.insert(rep.warnings.end(), ev.warnings.begin(), ev.warnings.end());
      if (!ev.sifter_samples.empty()) {
        SifterNote note{g.norm, g.epsilon, det, 0.0, *ev.best_single, 0.0, ev.sifter_samples};
        for (const auto& r : ev.rows) {
          if (r.setting == Setting::Mead) note.mead_auroc = r.auroc;
          if (r.setting == *ev.best_single) note.best_auroc = r.auroc;
        }
        rep.sifter.push_back(std::move(note));
      }
    }
  return rep;
}

inline std::vector<ArmCount> arm_counts(const ArmRun& run) {
  std::vector<ArmCount> out;
  for (std::size_t a = 0; a < run.arms.size(); ++a)
    out.push_back({run.arms[a].name(), run.sample_ids.size(), run.successes(a)});
  return out;
}

inline std::string arm_counts_csv(const std::vector<ArmCount>& counts) {
  std::string out = "arm,n_naturals,n_successful\n";
  for (const auto& c : counts)
    out += c.arm + "," + std::to_string(c.naturals) + "," + std::to_string(c.successful) + "\n";
  return out;
}

inline std::string sifter_log(const MeadReport& rep) {
  std::string out;
  for (const auto& n : rep.sifter) {
    out += "# " + std::string(to_string(n.norm)) + " eps=" + format_double(n.epsilon) + " detector=" + n.detector +
           " mead_auroc=" + format_fixed(n.mead_auroc) + " exceeds " + std::string(to_string(n.best_single)) +
           "_auroc=" + format_fixed(n.best_auroc) + "\n";
    for (std::size_t id : n.samples)
      out += "sample " + std::to_string(id) + ": positive under mead, no successful " +
             std::string(to_string(n.best_single)) + " arm\n";
  }
  return out;
}

/// Fixed-width table for stdout.
inline std::string summary_table(const std::vector<ReportRow>& rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-5s %-8s %-5s %-8s %8s %8s %6s %6s\n", "norm", "eps", "set", "detector", "auroc",
                "fpr95", "nat", "adv");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-5s %-8s %-5s %-8s %8.4f %8.4f %6zu %6zu\n",
                  std::string(to_string(r.norm)).c_str(), format_double(r.epsilon).c_str(),
                  std::string(to_string(r.setting)).c_str(), r.detector.c_str(), r.auroc, r.fpr_at_95_tpr,
                  r.n_naturals, r.n_adversarials);
    out += buf;
  }
  return out;
}

inline std::vector<std::string> detector_names(const std::vector<DetectorConfig>& ds) {
  std::vector<std::string> out;
  for (const auto& d : ds) {
    std::string n(to_string(d.kind));
    if (std::find(out.begin(), out.end(), n) != out.end()) throw ConfigError("detector '" + n + "' listed twice");
    out.push_back(n);
  }
  return out;
}

/// evaluate_group on its own: every arm on every natural, sift, score, metrics.
inline GroupEvaluation evaluate_group(const ModelParams& model, const Detector& detector, const LabeledDataset& naturals,
                                      const ArmGroup& group, const AttackOptions& opt = {}, std::uint64_t seed = 0,
                                      std::size_t jobs = 1) {
  EvalNaturals en{naturals, {}};
  for (std::size_t i = 0; i < naturals.size(); ++i) en.ids.push_back(i);
  const ArmRun run = run_arms(model, en, unique_arms({group}), opt, seed, jobs);
  const auto recs = score_all(model, {detector}, naturals, run, jobs);
  return evaluate_verdicts(verdicts_from_scores(recs, std::string(to_string(detector.kind)), group), group,
                           std::string(to_string(detector.kind)));
}

// ---------------------------------------------------------------------------
// Whole run
// ---------------------------------------------------------------------------

struct ExperimentResult {
  TrainedModel model;
  double test_accuracy = 0.0;
  ArmRun run;
  FitMaterial fit;
  std::vector<Detector> detectors;
  std::vector<ScoreRecord> scores;
  MeadReport report;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t jobs, std::ostream* log = nullptr) {
  ExperimentResult res;
  const TrainTestSplit split = load_dataset(cfg.dataset);
  res.model = train_model(cfg, split.train);
  res.test_accuracy = accuracy(res.model.params, split.test);
  if (log)
    *log << "classifier: train_accuracy=" << format_fixed(res.model.train_accuracy)
         << " test_accuracy=" << format_fixed(res.test_accuracy) << "\n";
  const auto groups = group_arms(resolve_attacks(cfg.attacks));
  const auto names = detector_names(cfg.detectors);
  const EvalNaturals nat = select_naturals(cfg, res.model.params, split.test);
  res.run = run_arms(res.model.params, nat, unique_arms(groups), attack_options(cfg, split.test), cfg.seed, jobs);
  if (log) *log << "attacks: " << res.run.arms.size() << " arms x " << nat.ids.size() << " naturals\n";
  res.fit = detector_fit_material(cfg, res.model.params, split.train, jobs);
  if (log && res.fit.attacked > 0)
    *log << "detector training attack " << cfg.detector_training_attack.name() << ": " << res.fit.successful << "/"
         << res.fit.attacked << " successful" << (res.fit.used_all ? " (too few; all perturbed points used)" : "")
         << "\n";
  res.detectors = fit_detectors(cfg, res.model.params, res.fit, jobs);
  res.scores = score_all(res.model.params, res.detectors, nat.data, res.run, jobs);
  res.report = build_report(groups, names, res.scores);
  res.report.arm_counts = arm_counts(res.run);
  return res;
}

}  // namespace mead
