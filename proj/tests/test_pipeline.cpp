#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mead/pipeline.hpp"

using namespace mead;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c = default_config();
  c.dataset.gaussian.n_per_class = 60;
  c.train.epochs = 10;
  c.attacks.presets = {{"paper-linf", {0.25}}, {"paper-l2", {0.5}}};
  c.attacks.steps = 10;
  c.fit_samples = 40;
  for (auto& d : c.detectors) {
    d.lid.k = 5;
    d.lid.reference_size = 20;
    d.magnet.train.epochs = 5;
    d.kdbu.dropout_passes = 5;
  }
  return c;
}

}  // namespace

TEST(Pipeline, ReportIgnoresSampleOrderAndThreadCount) {
  const auto cfg = tiny_config();
  const auto split = load_dataset(cfg.dataset);
  const auto model = train_model(cfg, split.train).params;
  const auto groups = group_arms(resolve_attacks(cfg.attacks));
  const auto arms = unique_arms(groups);
  const auto opt = attack_options(cfg, split.test);
  const auto fit = detector_fit_material(cfg, model, split.train, 1);
  const auto dets = fit_detectors(cfg, model, fit, 1);
  const auto names = detector_names(cfg.detectors);

  const EvalNaturals nat = select_naturals(cfg, model, split.test);
  EvalNaturals rev;
  rev.data.classes = nat.data.classes;
  rev.data.inputs = Matrix(0, nat.data.dim());
  for (std::size_t i = nat.ids.size(); i-- > 0;) {
    rev.data.inputs.append_row(nat.data.input(i));
    rev.data.labels.push_back(nat.data.labels[i]);
    rev.ids.push_back(nat.ids[i]);
  }
  const auto run_a = run_arms(model, nat, arms, opt, cfg.seed, 1);
  const auto run_b = run_arms(model, rev, arms, opt, cfg.seed, 3);
  const auto rep_a = build_report(groups, names, score_all(model, dets, nat.data, run_a, 1));
  const auto rep_b = build_report(groups, names, score_all(model, dets, rev.data, run_b, 2));
  ASSERT_EQ(rep_a.rows.size(), rep_b.rows.size());
  ASSERT_FALSE(rep_a.rows.empty());
  for (std::size_t r = 0; r < rep_a.rows.size(); ++r) {
    EXPECT_EQ(rep_a.rows[r].detector, rep_b.rows[r].detector);
    EXPECT_EQ(rep_a.rows[r].n_adversarials, rep_b.rows[r].n_adversarials);
    EXPECT_DOUBLE_EQ(rep_a.rows[r].auroc, rep_b.rows[r].auroc);
    EXPECT_DOUBLE_EQ(rep_a.rows[r].fpr_at_95_tpr, rep_b.rows[r].fpr_at_95_tpr);
  }
}

TEST(Pipeline, ArmRunRoundTrip) {
  const auto cfg = tiny_config();
  const auto split = load_dataset(cfg.dataset);
  const auto model = train_model(cfg, split.train).params;
  const auto nat = select_naturals(cfg, model, split.test);
  const auto arms = unique_arms(group_arms(resolve_attacks(cfg.attacks)));
  const auto run = run_arms(model, nat, arms, attack_options(cfg, split.test), 1, 1);
  const auto back = deserialize_arm_run(serialize_arm_run(run));
  EXPECT_EQ(back.arms.size(), run.arms.size());
  EXPECT_EQ(back.sample_ids, run.sample_ids);
  for (std::size_t a = 0; a < run.arms.size(); ++a) {
    EXPECT_EQ(back.successes(a), run.successes(a));
    for (std::size_t i = 0; i < run.sample_ids.size(); ++i) EXPECT_EQ(back.outcomes[a][i].x_adv, run.outcomes[a][i].x_adv);
  }
  EXPECT_THROW(deserialize_arm_run("MEADADV1\x01"), FormatError);
}

TEST(Pipeline, ScoresCsvRebuildsTheSameReport) {
  const auto cfg = tiny_config();
  const auto res = run_experiment(cfg, 1);
  const auto path = fs::temp_directory_path() / "mead_pipeline_scores.csv";
  detail::write_file(path.string(), scores_csv(res.scores));
  const auto groups = group_arms(resolve_attacks(cfg.attacks));
  const auto again = build_report(groups, detector_names(cfg.detectors), read_scores_csv(path.string()));
  ASSERT_EQ(again.rows.size(), res.report.rows.size());
  for (std::size_t r = 0; r < again.rows.size(); ++r) EXPECT_NEAR(again.rows[r].auroc, res.report.rows[r].auroc, 1e-12);
  EXPECT_EQ(res.report.arm_counts.size(), res.run.arms.size());
}

TEST(Pipeline, DuplicateArmNamesAndDetectorsRejected) {
  std::vector<DetectorConfig> ds(2);
  EXPECT_THROW(detector_names(ds), ConfigError);
  AttackSpec a;
  a.epsilon = 0.1;
  AttackSpec b = a;
  b.steps = 3;  // same name, different spec
  EXPECT_THROW(unique_arms({ArmGroup{Norm::Linf, 0.1, {a, b}}}), ConfigError);
}

namespace {

int run_cli(const std::string& args) {
  const int st = std::system((std::string(MEAD_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto dir = fs::temp_directory_path() / "mead_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto bad = dir / "bad.json";
  std::ofstream(bad) << R"({"dataset": {"kind": "gaussian"}, "attacks": {"presets": [{"name": "paper-l1"}]}, "epsilonn": 1})";
  EXPECT_EQ(run_cli("evaluate --config " + bad.string()), 2);
  EXPECT_EQ(run_cli("evaluate --no-such-flag"), 2);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("report --out " + (dir / "empty").string()), 2);
  EXPECT_EQ(run_cli("case-study --out " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "case_study.csv"));
}

TEST(Cli, TrainThenReuse) {
  const auto dir = fs::temp_directory_path() / "mead_cli_reuse";
  fs::remove_all(dir);
  EXPECT_EQ(run_cli("train --out " + dir.string()), 0);
  ASSERT_TRUE(fs::exists(dir / "model.bin"));
  const auto before = fs::last_write_time(dir / "model.bin");
  EXPECT_EQ(run_cli("attack --preset paper-l2 --out " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "adversarials.bin"));
  EXPECT_TRUE(fs::exists(dir / "arm_counts.csv"));
  // the preset override changes the config, so the model is retrained
  EXPECT_NE(fs::last_write_time(dir / "model.bin"), before);
}
