#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "mead/attacks.hpp"
#include "mead/pipeline.hpp"

using namespace mead;

namespace {

// two classes, logit difference (w0 - w1).x + (b0 - b1)
ModelParams two_class_linear() {
  Matrix w(2, 3);
  w.data = {1.0, -2.0, 0.5, -0.5, 1.0, 0.0};
  return testutil::linear_model(w, Vec{0.2, -0.1});
}

}  // namespace

TEST(DeepFool, LinearModelStepsToTheHyperplane) {
  const auto m = two_class_linear();
  const Vec x{1.0, 0.0, 0.5};
  ASSERT_EQ(predict_label(m, x), 0u);
  const Vec w{1.5, -3.0, 0.5};
  const double f = dot(w, x) + 0.3;
  const double dist = std::abs(f) / std::sqrt(dot(w, w));
  const double overshoot = 0.02;
  AttackOptions opt;
  opt.clip_domain = false;
  const auto o = deepfool(m, x, 0, 50, overshoot, opt);
  EXPECT_TRUE(o.fooled);
  const double moved = lp_distance(o.x_adv, x, Norm::L2);
  EXPECT_NEAR(moved, (1 + overshoot) * dist, 1e-3);
  // the step is along the normal
  Vec r(3);
  for (int i = 0; i < 3; ++i) r[i] = o.x_adv[i] - x[i];
  EXPECT_NEAR(std::abs(dot(r, w)) / (moved * std::sqrt(dot(w, w))), 1.0, 1e-12);
}

TEST(Fgsm, LinearModelMovesAlongGradientSign) {
  const auto m = two_class_linear();
  const Vec x{0.5, 0.5, 0.5};
  AttackOptions opt;
  opt.clip_domain = false;
  // for y = 0 the ACE gradient is q1 (w1 - w0), sign (-1, +1, -1)
  const auto o = fgsm(m, x, 0, ObjectiveKind::ACE, 0.1, opt);
  EXPECT_NEAR(o.x_adv[0], 0.4, 1e-15);
  EXPECT_NEAR(o.x_adv[1], 0.6, 1e-15);
  EXPECT_NEAR(o.x_adv[2], 0.4, 1e-15);
}

TEST(Pgd, StaysInBallAndDomain) {
  const auto m = testutil::random_model(6, {10}, 3, 2);
  Rng rng(1);
  for (Norm p : {Norm::L1, Norm::L2, Norm::Linf})
    for (ObjectiveKind k : kAllObjectives) {
      Vec x(6);
      for (double& v : x) v = uniform01(rng);
      const double eps = p == Norm::L1 ? 1.0 : (p == Norm::L2 ? 0.5 : 0.2);
      const auto o = pgd(m, x, predict_label(m, x), k, eps, p, 15, 0.0, true, 77);
      EXPECT_LE(lp_distance(o.x_adv, x, p), eps);
      for (double v : o.x_adv) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
      EXPECT_EQ(o.fooled, predict_label(m, o.x_adv) != predict_label(m, x));
    }
}

TEST(Pgd, IncreasesTheObjective) {
  const auto m = testutil::random_model(4, {12}, 3, 6);
  const Vec x{0.4, 0.6, 0.5, 0.3};
  const std::size_t y = predict_label(m, x);
  AttackOptions opt;
  opt.clip_domain = false;
  for (ObjectiveKind k : kAllObjectives) {
    const auto ref = make_reference(m, k, x, y);
    const auto o = pgd(m, x, y, k, 0.3, Norm::L2, 30, 0.0, false, 0, opt);
    EXPECT_GE(objective_at(m, o.x_adv, k, ref), objective_at(m, x, k, ref)) << to_string(k);
  }
}

TEST(Square, ReplayReproducesTrace) {
  const auto m = testutil::random_model(16, {10}, 3, 12);
  Vec x(16, 0.5);
  const std::size_t y = predict_label(m, x);
  SquareLog log;
  const double eps = 0.1;
  const auto o = square_attack(m, x, y, ObjectiveKind::Gini, eps, 200, 99, {}, &log);
  ASSERT_EQ(log.trace.size(), log.accepted.size() + 1);
  const auto ref = make_reference(m, ObjectiveKind::Gini, x, y);
  Vec delta(16, 0.0);
  auto at = [&] {
    Vec p(16);
    for (int i = 0; i < 16; ++i) p[i] = std::clamp(x[i] + delta[i], 0.0, 1.0);
    return p;
  };
  EXPECT_DOUBLE_EQ(objective_at(m, at(), ObjectiveKind::Gini, ref), log.trace[0]);
  for (std::size_t a = 0; a < log.accepted.size(); ++a) {
    for (std::size_t i : log.accepted[a].coords) delta[i] = log.accepted[a].sign * eps;
    EXPECT_DOUBLE_EQ(objective_at(m, at(), ObjectiveKind::Gini, ref), log.trace[a + 1]);
    EXPECT_GT(log.trace[a + 1], log.trace[a]);
  }
  EXPECT_EQ(at(), o.x_adv);
  EXPECT_LE(lp_distance(o.x_adv, x, Norm::Linf), eps);
}

TEST(Square, SameSeedSameResult) {
  const auto m = testutil::random_model(9, {8}, 2, 3);
  const Vec x(9, 0.3);
  const auto a = square_attack(m, x, 0, ObjectiveKind::ACE, 0.2, 50, 5);
  const auto b = square_attack(m, x, 0, ObjectiveKind::ACE, 0.2, 50, 5);
  EXPECT_EQ(a.x_adv, b.x_adv);
}

TEST(Spatial, SymmetricGlyphIsRotationInvariant) {
  // 5x5 plus sign centered on the middle pixel
  Vec img(25, 0.0);
  for (int i = 0; i < 5; ++i) img[2 * 5 + i] = img[i * 5 + 2] = 1.0;
  for (double deg : {90.0, 180.0, -90.0}) {
    const Vec r = rotate_translate(img, 5, 5, deg, 0, 0);
    for (int i = 0; i < 25; ++i) EXPECT_NEAR(r[i], img[i], 1e-12) << deg;
  }
  const Vec s = rotate_translate(img, 5, 5, 0.0, 0, 1);
  for (int i = 0; i < 5; ++i)
    for (int j = 1; j < 5; ++j) EXPECT_NEAR(s[i * 5 + j], img[i * 5 + j - 1], 1e-12);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(s[i * 5], 0.0);
}

TEST(Spatial, GridIdentityFirstAndComplete) {
  const auto g = spatial_grid(30.0, 1, 3);
  ASSERT_FALSE(g.empty());
  EXPECT_EQ(g[0].degrees, 0.0);
  EXPECT_EQ(g[0].dy, 0);
  EXPECT_EQ(g.size(), 3u * 9u);
  const auto ng = spatial_grid(30.0, 0, 2);  // angles -30, 30 plus 0
  EXPECT_EQ(ng.size(), 3u);
}

TEST(Spatial, NeedsImageShape) {
  const auto m = testutil::random_model(4, {3}, 2, 1);
  EXPECT_THROW(spatial_transform_attack(m, Vec(4, 0.1), 0, 10, 1, 3, AttackOptions{}), ConfigError);
}

TEST(AttackSpec, Validation) {
  AttackSpec s;
  s.family = AttackFamily::FGSM;
  s.norm = Norm::L2;
  EXPECT_THROW(s.validate(), ConfigError);
  s.family = AttackFamily::PGD;
  s.epsilon = -1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(AttackSeed, DependsOnSampleNotPosition) {
  AttackSpec s;
  s.epsilon = 0.1;
  const Vec a{0.1, 0.2}, b{0.1, 0.3};
  EXPECT_EQ(attack_seed(1, s, a, 0), attack_seed(1, s, a, 0));
  EXPECT_NE(attack_seed(1, s, a, 0), attack_seed(1, s, b, 0));
  EXPECT_NE(attack_seed(1, s, a, 0), attack_seed(1, s, a, 1));
  EXPECT_NE(attack_seed(1, s, a, 0), attack_seed(2, s, a, 0));
  AttackSpec t = s;
  t.objective = ObjectiveKind::KL;
  EXPECT_NE(attack_seed(1, s, a, 0), attack_seed(1, t, a, 0));
}
