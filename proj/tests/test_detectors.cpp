#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "mead/data.hpp"
#include "mead/detectors/detector.hpp"

using namespace mead;

TEST(Lid, ClosedFormFromDistances) {
  // -1 / mean(log(r_i / r_k)) for (1, 2, 4) = 3 / ln 8
  EXPECT_NEAR(lid_from_distances(Vec{1, 2, 4}), 3.0 / std::log(8.0), 1e-14);
}

TEST(Lid, RecoversDimensionOfUniformCloud) {
  // Distances from the center of a uniform d-ball follow P(r) = r^d, so the
  // estimator should return about d.
  Rng rng(31);
  for (std::size_t d : {2u, 4u}) {
    Matrix ref(0, d);
    while (ref.rows < 4000) {
      Vec p(d);
      for (double& v : p) v = uniform(rng, -1, 1);
      if (lp_norm(p, Norm::L2) <= 1.0) ref.append_row(p);
    }
    const double est = lid_estimate(Vec(d, 0.0), ref, 200);
    EXPECT_NEAR(est, static_cast<double>(d), 0.2 * static_cast<double>(d)) << d;
  }
}

TEST(Lid, SkipRowLeavesOneOut) {
  Matrix ref(0, 1);
  for (double v : {0.0, 1.0, 2.0, 3.0, 4.0}) ref.append_row(Vec{v});
  // from 0 without itself: distances 1, 2
  EXPECT_NEAR(lid_estimate(Vec{0.0}, ref, 2, 0), -1.0 / (0.5 * std::log(0.5)), 1e-12);
  EXPECT_THROW(lid_estimate(Vec{0.0}, ref, 5), ConfigError);
}

TEST(Kde, ThreePointDensity) {
  GaussianKde k;
  k.points = Matrix(0, 1);
  for (double v : {0.0, 1.0, 3.0}) k.points.append_row(Vec{v});
  k.bandwidth = 0.7;
  auto npdf = [](double z, double mu, double h) {
    return std::exp(-(z - mu) * (z - mu) / (2 * h * h)) / std::sqrt(2 * std::numbers::pi * h * h);
  };
  for (double z : {-1.0, 0.5, 2.0, 10.0}) {
    const double want = (npdf(z, 0, 0.7) + npdf(z, 1, 0.7) + npdf(z, 3, 0.7)) / 3;
    EXPECT_NEAR(k.log_density(Vec{z}), std::log(want), 1e-12);
  }
  const double loo = (npdf(0.0, 1, 0.7) + npdf(0.0, 3, 0.7)) / 2;
  EXPECT_NEAR(k.log_density(Vec{0.0}, 0), std::log(loo), 1e-12);
}

TEST(MagNet, JensenShannonExtremes) {
  EXPECT_NEAR(jensen_shannon(Vec{1, 0}, Vec{0, 1}), std::log(2.0), 1e-15);
  EXPECT_EQ(jensen_shannon(Vec{0.3, 0.7}, Vec{0.3, 0.7}), 0.0);
  // p = (1, 0), q = (1/2, 1/2), midpoint (3/4, 1/4)
  const double m0 = 0.75, m1 = 0.25;
  const double want = 0.5 * std::log(1 / m0) + 0.5 * (0.5 * std::log(0.5 / m0) + 0.5 * std::log(0.5 / m1));
  EXPECT_NEAR(jensen_shannon(Vec{1, 0}, Vec{0.5, 0.5}), want, 1e-14);
}

TEST(Squeeze, BitDepthAndMedian) {
  EXPECT_EQ(bit_depth_squeeze(Vec{0.4, 0.6, 0.0, 1.0}, 1), (Vec{0, 1, 0, 1}));
  const Vec q = bit_depth_squeeze(Vec{0.4}, 2);
  EXPECT_NEAR(q[0], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(median_smooth(Vec(9, 0.25), 3, 3, 2), Vec(9, 0.25));
  // a single bright pixel disappears under a 2x2 median
  Vec img(9, 0.0);
  img[4] = 1.0;
  EXPECT_EQ(median_smooth(img, 3, 3, 2)[0], 0.0);
}

TEST(Squeeze, ScoreZeroWhenSqueezingIsIdentity) {
  const auto m = testutil::random_model(3, {4}, 2, 3);
  EXPECT_EQ(fs_score(m, Vec{0.0, 1.0, 0.0}, {1, 3}, 2), 0.0);
}

TEST(Svm, SymmetricPairHasZeroAtMidpoint) {
  Matrix neg(0, 1), pos(0, 1);
  neg.append_row(Vec{-1.0});
  pos.append_row(Vec{1.0});
  RbfSvmConfig cfg;
  cfg.gamma = 0.5;
  cfg.c_reg = 10;
  const auto s = fit_rbf_svm(neg, pos, cfg);
  EXPECT_NEAR(s.decision(Vec{0.0}), 0.0, 1e-9);
  EXPECT_LT(s.decision(Vec{-1.0}), 0.0);
  EXPECT_GT(s.decision(Vec{1.0}), 0.0);
}

TEST(Svm, SeparatesClusters) {
  Rng rng(2);
  Matrix neg(0, 2), pos(0, 2);
  for (int i = 0; i < 60; ++i) {
    neg.append_row(Vec{normal(rng) * 0.3 - 2, normal(rng) * 0.3});
    pos.append_row(Vec{normal(rng) * 0.3 + 2, normal(rng) * 0.3});
  }
  const auto s = fit_rbf_svm(neg, pos);
  EXPECT_TRUE(s.converged);
  for (std::size_t i = 0; i < neg.rows; ++i) EXPECT_LT(s.decision(neg.row(i)), 0.0);
  for (std::size_t i = 0; i < pos.rows; ++i) EXPECT_GT(s.decision(pos.row(i)), 0.0);
}

TEST(Logistic, RecoversGeneratingModel) {
  Rng rng(8);
  Matrix f(0, 1);
  std::vector<int> y;
  for (int i = 0; i < 20000; ++i) {
    const double x = normal(rng);
    f.append_row(Vec{x});
    y.push_back(uniform01(rng) < 1.0 / (1.0 + std::exp(-(1.5 * x - 0.5))) ? 1 : 0);
  }
  const auto h = fit_logistic(f, y, 0.0);
  for (double x : {-2.0, 0.0, 1.0})
    EXPECT_NEAR(h.predict(Vec{x}), 1.0 / (1.0 + std::exp(-(1.5 * x - 0.5))), 0.03);
}

namespace {

struct Fixture {
  ModelParams model;
  LabeledDataset naturals;
  Matrix adversarials;
  std::vector<std::size_t> sources;
};

Fixture fixture() {
  Fixture f;
  f.model = testutil::random_model(4, {8}, 2, 7);
  f.model.layers[0].dropout = 0.2;
  Rng rng(1);
  f.naturals.classes = 2;
  f.naturals.inputs = Matrix(0, 4);
  for (int i = 0; i < 60; ++i) {
    Vec x(4);
    for (double& v : x) v = uniform01(rng);
    f.naturals.labels.push_back(predict_label(f.model, x));
    f.naturals.inputs.append_row(x);
    Vec a = x;
    for (double& v : a) v = std::clamp(v + 0.4 * normal(rng), 0.0, 1.0);
    f.adversarials.append_row(a);
    f.sources.push_back(static_cast<std::size_t>(i));
  }
  return f;
}

}  // namespace

TEST(Detectors, BlobRoundTripKeepsScores) {
  const Fixture f = fixture();
  for (auto k : {DetectorKind::RbfSvm, DetectorKind::Lid, DetectorKind::KdBu, DetectorKind::Fs, DetectorKind::MagNet}) {
    DetectorConfig cfg;
    cfg.kind = k;
    cfg.lid.k = 5;
    cfg.lid.reference_size = 30;
    cfg.magnet.train.epochs = 3;
    cfg.kdbu.dropout_passes = 5;
    DetectorFitData data{&f.naturals, f.adversarials, "pgd", f.sources};
    const Detector d = fit_detector(cfg, f.model, data, 3);
    const Detector back = deserialize_detector(serialize_detector(d));
    if (k == DetectorKind::MagNet) {
      // only what scoring needs is stored; the autoencoder's training settings are not
      const auto& a = std::get<MagNetDetector>(d.state);
      const auto& b = std::get<MagNetDetector>(back.state);
      EXPECT_EQ(a.autoencoder, b.autoencoder);
      EXPECT_EQ(a.fit_recon, b.fit_recon);
      EXPECT_EQ(a.config.temperature, b.config.temperature);
    } else {
      EXPECT_EQ(back, d) << to_string(k);
    }
    for (std::size_t i = 0; i < 10; ++i) {
      const double s = d.score(f.model, f.adversarials.row(i));
      EXPECT_TRUE(std::isfinite(s));
      EXPECT_EQ(back.score(f.model, f.adversarials.row(i)), s);
    }
    std::string blob = serialize_detector(d);
    EXPECT_THROW(deserialize_detector(blob.substr(0, blob.size() / 2)), FormatError);
    blob[0] = 'x';
    EXPECT_THROW(deserialize_detector(blob), FormatError);
  }
}

TEST(Detectors, SupervisedNeedAdversarials) {
  const Fixture f = fixture();
  DetectorConfig cfg;
  cfg.kind = DetectorKind::RbfSvm;
  EXPECT_THROW(fit_detector(cfg, f.model, DetectorFitData{&f.naturals, {}, "", {}}, 1), ConfigError);
  cfg.kind = DetectorKind::Fs;
  EXPECT_NO_THROW(fit_detector(cfg, f.model, DetectorFitData{&f.naturals, {}, "", {}}, 1));
  EXPECT_THROW(Detector{}.score(f.model, f.naturals.input(0)), UsageError);
}
