// Two-Gaussian toy experiment: a small classifier attacked with ACE and
// Gini PGD-Linf, and RBF-SVM detectors trained on one objective and tested
// on the other.
#pragma once

#include <string>

#include "mead/attacks.hpp"
#include "mead/data.hpp"
#include "mead/detectors/svm.hpp"
#include "mead/nn.hpp"
#include "mead/pipeline.hpp"

namespace mead {

struct CaseStudyConfig {
  GaussianSpec data{};
  std::vector<std::size_t> hidden{16};
  TrainConfig train{};
  double ace_epsilon = 1.2;
  double gini_epsilon = 5.0;
  int steps = 40;
  RbfSvmConfig svm{};
  std::uint64_t seed = 1;
};

struct CaseStudyReport {
  double clean_accuracy = 0.0;
  double corrupted_ace = 0.0;  // classifier accuracy on perturbed test points
  double corrupted_gini = 0.0;
  // detector accuracy, rows = training objective, columns = test objective
  double ace_on_ace = 0.0, ace_on_gini = 0.0;
  double gini_on_gini = 0.0, gini_on_ace = 0.0;
  double both_on_gini = 0.0, both_on_ace = 0.0;
};

namespace detail {

inline Matrix perturb_all(const ModelParams& model, const LabeledDataset& d, ObjectiveKind obj, double eps, int steps,
                          std::uint64_t seed) {
  AttackOptions opt;
  opt.clip_domain = false;
  Matrix out(0, d.dim());
  for (std::size_t i = 0; i < d.size(); ++i)
    out.append_row(pgd(model, d.input(i), d.labels[i], obj, eps, Norm::Linf, steps, 0.0, true,
                       derive_seed(seed, sample_key(d.input(i), d.labels[i])), opt)
                       .x_adv);
  return out;
}

inline double label_accuracy(const ModelParams& model, const Matrix& x, const std::vector<std::size_t>& y) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.rows; ++i) hits += predict_label(model, x.row(i)) == y[i];
  return static_cast<double>(hits) / static_cast<double>(x.rows);
}

// Balanced natural-vs-adversarial accuracy with the decision threshold at 0.
inline double detection_accuracy(const RbfSvm& svm, const Matrix& naturals, const Matrix& adversarials) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < naturals.rows; ++i) hits += svm.decision(naturals.row(i)) < 0.0;
  for (std::size_t i = 0; i < adversarials.rows; ++i) hits += svm.decision(adversarials.row(i)) >= 0.0;
  return static_cast<double>(hits) / static_cast<double>(naturals.rows + adversarials.rows);
}

inline Matrix stack(const Matrix& a, const Matrix& b) {
  Matrix m = a;
  for (std::size_t i = 0; i < b.rows; ++i) m.append_row(b.row(i));
  return m;
}

}  // namespace detail

inline CaseStudyReport run_case_study(const CaseStudyConfig& cfg = {}) {
  GaussianSpec gs = cfg.data;
  gs.seed = derive_seed(cfg.seed, 0xda7a, gs.seed);
  const TrainTestSplit split = gen_gaussian_dataset(gs);
  Architecture arch;
  arch.input_dim = split.train.dim();
  arch.output_dim = 2;
  arch.hidden = cfg.hidden;
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 0x7a1, tc.seed);
  const ModelParams model = train_classifier(split.train, arch, tc).params;

  CaseStudyReport rep;
  rep.clean_accuracy = accuracy(model, split.test);
  const std::uint64_t s = derive_seed(cfg.seed, 0xa77);
  const Matrix tr_ace = detail::perturb_all(model, split.train, ObjectiveKind::ACE, cfg.ace_epsilon, cfg.steps, s);
  const Matrix tr_gini = detail::perturb_all(model, split.train, ObjectiveKind::Gini, cfg.gini_epsilon, cfg.steps, s);
  const Matrix te_ace = detail::perturb_all(model, split.test, ObjectiveKind::ACE, cfg.ace_epsilon, cfg.steps, s);
  const Matrix te_gini = detail::perturb_all(model, split.test, ObjectiveKind::Gini, cfg.gini_epsilon, cfg.steps, s);
  rep.corrupted_ace = detail::label_accuracy(model, te_ace, split.test.labels);
  rep.corrupted_gini = detail::label_accuracy(model, te_gini, split.test.labels);

  const Matrix& nat_tr = split.train.inputs;
  const Matrix& nat_te = split.test.inputs;
  const RbfSvm on_ace = fit_rbf_svm(nat_tr, tr_ace, cfg.svm);
  const RbfSvm on_gini = fit_rbf_svm(nat_tr, tr_gini, cfg.svm);
  const RbfSvm on_both = fit_rbf_svm(nat_tr, detail::stack(tr_ace, tr_gini), cfg.svm);
  rep.ace_on_ace = detail::detection_accuracy(on_ace, nat_te, te_ace);
  rep.ace_on_gini = detail::detection_accuracy(on_ace, nat_te, te_gini);
  rep.gini_on_gini = detail::detection_accuracy(on_gini, nat_te, te_gini);
  rep.gini_on_ace = detail::detection_accuracy(on_gini, nat_te, te_ace);
  rep.both_on_gini = detail::detection_accuracy(on_both, nat_te, te_gini);
  rep.both_on_ace = detail::detection_accuracy(on_both, nat_te, te_ace);
  return rep;
}

}  // namespace mead
