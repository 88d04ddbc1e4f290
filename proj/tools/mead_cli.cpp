// mead: train -> attack -> detect -> evaluate driver.
//
// Stage artifacts in the output directory:
//   config.json       effective configuration (artifacts are reused only when it matches)
//   model.bin         classifier checkpoint
//   adversarials.bin  attack outcomes (fooling points only)
//   arm_counts.csv    successes per arm
//   detectors/*.bin   fitted detectors
//   scores.csv        sample_id,detector,score
//   report.csv        per-group MEAD and single-armed metrics
//   sifter.log        samples behind any MEAD > single-armed AUROC
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mead/case_study.hpp"
#include "mead/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mead;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string preset;
  std::string out;
};

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? default_config() : parse_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.preset.empty()) {
    cfg.attacks.presets = {{c.preset, {}}};
    cfg.attacks.specs.clear();
    resolve_attacks(cfg.attacks);
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

std::string fingerprint(ExperimentConfig cfg) {
  cfg.output_dir.clear();
  return write_config_text(cfg);
}

class Workspace {
 public:
  explicit Workspace(const ExperimentConfig& cfg) : cfg_(cfg), dir_(cfg.output_dir) {
    fs::create_directories(dir_);
    const fs::path stored = dir_ / "config.json";
    const std::string now = fingerprint(cfg);
    fresh_ = !fs::exists(stored);
    if (!fresh_) {
      try {
        fresh_ = fingerprint(parse_config(stored.string())) != now;
      } catch (const std::exception&) {
        fresh_ = true;
      }
      if (fresh_) std::cerr << "config changed; earlier artifacts in " << dir_.string() << " are ignored\n";
    }
    detail::write_file(stored.string(), write_config_text(cfg));
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  bool reusable(const std::string& name) const { return !fresh_ && fs::exists(dir_ / name); }

  const TrainTestSplit& data() {
    if (!split_) split_ = load_dataset(cfg_.dataset);
    return *split_;
  }

  ModelParams model() {
    if (reusable("model.bin")) {
      std::cerr << "using " << path("model.bin") << "\n";
      return load_model(path("model.bin"));
    }
    const TrainedModel m = train_model(cfg_, data().train);
    save_model(m.params, path("model.bin"));
    std::cout << "train_accuracy=" << format_fixed(m.train_accuracy)
              << " test_accuracy=" << format_fixed(accuracy(m.params, data().test))
              << " final_loss=" << format_fixed(m.final_loss) << "\n";
    return m.params;
  }

  ArmRun attacks(const ModelParams& model, std::size_t jobs) {
    if (reusable("adversarials.bin")) {
      std::cerr << "using " << path("adversarials.bin") << "\n";
      return deserialize_arm_run(detail::read_file(path("adversarials.bin")), path("adversarials.bin"));
    }
    const auto groups = group_arms(resolve_attacks(cfg_.attacks));
    const EvalNaturals nat = select_naturals(cfg_, model, data().test);
    ArmRun run = run_arms(model, nat, unique_arms(groups), attack_options(cfg_, data().test), cfg_.seed, jobs);
    detail::write_file(path("adversarials.bin"), serialize_arm_run(run));
    detail::write_file(path("arm_counts.csv"), arm_counts_csv(arm_counts(run)));
    std::cerr << "attacks: " << run.arms.size() << " arms x " << run.sample_ids.size() << " naturals\n";
    return run;
  }

  std::vector<Detector> detectors(const ModelParams& model, std::size_t jobs) {
    fs::create_directories(dir_ / "detectors");
    std::vector<Detector> out;
    bool all = true;
    for (const auto& d : cfg_.detectors) all = all && reusable("detectors/" + std::string(to_string(d.kind)) + ".bin");
    if (all) {
      for (const auto& d : cfg_.detectors) {
        const std::string p = path("detectors/" + std::string(to_string(d.kind)) + ".bin");
        out.push_back(deserialize_detector(detail::read_file(p), p));
      }
      std::cerr << "using fitted detectors in " << path("detectors") << "\n";
      return out;
    }
    const FitMaterial fm = detector_fit_material(cfg_, model, data().train, jobs);
    if (fm.attacked > 0)
      std::cerr << "detector training attack " << cfg_.detector_training_attack.name() << ": " << fm.successful << "/"
                << fm.attacked << " successful" << (fm.used_all ? " (too few; all perturbed points used)" : "")
                << "\n";
    out = fit_detectors(cfg_, model, fm, jobs);
    for (const auto& d : out)
      detail::write_file(path("detectors/" + std::string(to_string(d.kind)) + ".bin"), serialize_detector(d));
    return out;
  }

 private:
  ExperimentConfig cfg_;
  fs::path dir_;
  bool fresh_ = true;
  std::optional<TrainTestSplit> split_;
};

void write_report(const ExperimentConfig& cfg, const Workspace& ws, const std::vector<ScoreRecord>& scores,
                  const std::vector<ArmCount>* counts) {
  const auto groups = group_arms(resolve_attacks(cfg.attacks));
  MeadReport rep = build_report(groups, detector_names(cfg.detectors), scores);
  write_report_csv(rep.rows, ws.path("report.csv"));
  detail::write_file(ws.path("sifter.log"), sifter_log(rep));
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << " (row omitted)\n";
  if (counts)
    for (const auto& c : *counts)
      if (c.successful == 0) std::cerr << "note: arm " << c.arm << " fooled no natural\n";
  std::cout << summary_table(rep.rows);
  if (!rep.sifter.empty())
    std::cout << rep.sifter.size() << " group/detector pair(s) with MEAD above the best single-armed AUROC; see "
              << ws.path("sifter.log") << "\n";
  std::cout << "report: " << ws.path("report.csv") << "\n";
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  Workspace ws(cfg);
  const TrainedModel m = train_model(cfg, ws.data().train);
  save_model(m.params, ws.path("model.bin"));
  std::cout << "train_accuracy=" << format_fixed(m.train_accuracy)
            << " test_accuracy=" << format_fixed(accuracy(m.params, ws.data().test))
            << " final_loss=" << format_fixed(m.final_loss) << "\n";
  std::cout << "checkpoint: " << ws.path("model.bin") << "\n";
  return 0;
}

int cmd_attack(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  Workspace ws(cfg);
  const ModelParams model = ws.model();
  const ArmRun run = ws.attacks(model, c.jobs);
  std::cout << arm_counts_csv(arm_counts(run));
  return 0;
}

int cmd_evaluate(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = load_config(c);
  detector_names(cfg.detectors);
  Workspace ws(cfg);
  const ModelParams model = ws.model();
  const ArmRun run = ws.attacks(model, c.jobs);
  const std::vector<Detector> dets = ws.detectors(model, c.jobs);
  LabeledDataset nat;
  nat.classes = ws.data().test.classes;
  nat.inputs = Matrix(0, ws.data().test.dim());
  for (std::size_t id : run.sample_ids) {
    if (id >= ws.data().test.size()) throw FormatError("adversarials.bin refers to a sample outside the test split");
    nat.inputs.append_row(ws.data().test.input(id));
    nat.labels.push_back(ws.data().test.labels[id]);
  }
  const auto scores = score_all(model, dets, nat, run, c.jobs);
  detail::write_file(ws.path("scores.csv"), scores_csv(scores));
  const auto counts = arm_counts(run);
  write_report(cfg, ws, scores, &counts);
  std::cerr << "evaluate finished in "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  return 0;
}

int cmd_report(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  const fs::path scores = fs::path(cfg.output_dir) / "scores.csv";
  if (!fs::exists(scores)) throw UsageError("no scores at " + scores.string() + "; run 'evaluate' first");
  Workspace ws(cfg);
  write_report(cfg, ws, read_scores_csv(scores.string()), nullptr);
  return 0;
}

int cmd_case_study(const Common& c) {
  CaseStudyConfig cs;
  if (c.seed) cs.seed = *c.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const CaseStudyReport r = run_case_study(cs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("clean test accuracy              %6.1f%%\n", 100 * r.clean_accuracy);
  std::printf("accuracy under ACE  (eps=%.1f)    %6.1f%%\n", cs.ace_epsilon, 100 * r.corrupted_ace);
  std::printf("accuracy under Gini (eps=%.1f)    %6.1f%%\n", cs.gini_epsilon, 100 * r.corrupted_gini);
  std::printf("\nRBF-SVM detection accuracy\n");
  std::printf("%-14s %10s %10s\n", "trained on", "test ACE", "test Gini");
  std::printf("%-14s %9.1f%% %9.1f%%\n", "ACE", 100 * r.ace_on_ace, 100 * r.ace_on_gini);
  std::printf("%-14s %9.1f%% %9.1f%%\n", "Gini", 100 * r.gini_on_ace, 100 * r.gini_on_gini);
  std::printf("%-14s %9.1f%% %9.1f%%\n", "ACE + Gini", 100 * r.both_on_ace, 100 * r.both_on_gini);
  std::fprintf(stderr, "case study finished in %.2f s\n", secs);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    std::string csv = "metric,value\n";
    auto put = [&](const char* k, double v) { csv += std::string(k) + "," + format_fixed(v) + "\n"; };
    put("clean_accuracy", r.clean_accuracy);
    put("corrupted_ace", r.corrupted_ace);
    put("corrupted_gini", r.corrupted_gini);
    put("ace_on_ace", r.ace_on_ace);
    put("ace_on_gini", r.ace_on_gini);
    put("gini_on_gini", r.gini_on_gini);
    put("gini_on_ace", r.gini_on_ace);
    put("both_on_gini", r.both_on_gini);
    put("both_on_ace", r.both_on_ace);
    detail::write_file((fs::path(c.out) / "case_study.csv").string(), csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-armed adversarial detection evaluation"};
  app.require_subcommand(1, 1);
  Common c;
  auto add_common = [&](CLI::App* s, bool config) {
    if (config) s->add_option("--config", c.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    s->add_option("--seed", c.seed, "override the global seed");
    s->add_option("--out", c.out, "output directory");
  };
  auto* train = app.add_subcommand("train", "train the classifier and write model.bin");
  add_common(train, true);
  auto* attack = app.add_subcommand("attack", "run every arm on every test natural");
  add_common(attack, true);
  auto* evaluate = app.add_subcommand("evaluate", "attacks, detectors, scores and the MEAD report");
  add_common(evaluate, true);
  auto* report = app.add_subcommand("report", "rebuild report.csv from scores.csv");
  add_common(report, true);
  auto* case_study = app.add_subcommand("case-study", "two-Gaussian toy experiment");
  add_common(case_study, false);
  for (auto* s : {attack, evaluate}) {
    s->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
    s->add_option("--preset", c.preset, "replace the attack grid by a named preset")
        ->check(CLI::IsMember(preset_names()));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(c);
    if (*attack) return cmd_attack(c);
    if (*evaluate) return cmd_evaluate(c);
    if (*report) return cmd_report(c);
    if (*case_study) return cmd_case_study(c);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
