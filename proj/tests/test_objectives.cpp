#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lossforge/objectives.hpp"

using namespace lossforge;

namespace {

// Direct piecewise form over the whole array, written independently of the library.
double huber_oracle(const std::vector<double>& a, const std::vector<double>& b, double delta) {
  long double l1 = 0, l2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    l1 += std::fabs(a[i] - b[i]);
    l2 += (a[i] - b[i]) * (a[i] - b[i]);
  }
  l1 /= a.size();
  l2 /= a.size();
  if (l1 <= delta) return static_cast<double>(l2 / 2);
  return static_cast<double>(delta * l1 - delta * delta / 2);
}

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

FeaturePyramid<double> random_pyramid(std::mt19937_64& rng, double scale = 0.05) {
  FeaturePyramid<double> p;
  const int sizes[4] = {8, 4, 2, 1};
  for (int j = 0; j < 4; ++j) {
    Tensor<double> t(1, 2 + j, sizes[j], sizes[j]);
    t.vec() = random_vec(rng, t.size(), scale);
    p.levels.push_back(t);
  }
  return p;
}

}  // namespace

TEST(Huber, QuadraticBranchValue) {
  EXPECT_NEAR(huber_scalar(0.005, 0.0, 0.01), 1.25e-5, 1e-18);
}

TEST(Huber, LinearBranchValue) {
  EXPECT_NEAR(huber_scalar(0.02, 0.0, 0.01), 1.5e-4, 1e-18);
}

TEST(Huber, MatchesPiecewiseOracleOnRandomArrays) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(1, 64);
  std::uniform_real_distribution<double> mag(-4, -0.5);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = len(rng);
    const double scale = std::pow(10.0, mag(rng));
    const auto a = random_vec(rng, n, scale), b = random_vec(rng, n, scale);
    const double got = huber<double>(std::span<const double>(a), std::span<const double>(b), 0.01);
    EXPECT_NEAR(got, huber_oracle(a, b, 0.01), 1e-12);
  }
}

TEST(Huber, ContinuousAtBoundaryForUniformDifferences) {
  const double delta = 0.01;
  for (double eps : {1e-9, 1e-12}) {
    std::vector<double> z(16, 0.0), lo(16, delta - eps), hi(16, delta + eps);
    const double below = huber<double>(std::span<const double>(lo), std::span<const double>(z), delta);
    const double above = huber<double>(std::span<const double>(hi), std::span<const double>(z), delta);
    EXPECT_NEAR(below, 0.5 * delta * delta, 2 * delta * eps);
    EXPECT_NEAR(above, 0.5 * delta * delta, 2 * delta * eps);
  }
}

TEST(Huber, ElementwiseModeAveragesPerElement) {
  std::vector<double> a{0.005, 0.02}, b{0.0, 0.0};
  const double got =
      huber<double>(std::span<const double>(a), std::span<const double>(b), 0.01, HuberMode::elementwise);
  EXPECT_NEAR(got, (1.25e-5 + 1.5e-4) / 2, 1e-18);
}

TEST(Huber, RejectsBadInput) {
  std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(huber<double>(std::span<const double>(a), std::span<const double>(b), 0.01), Error);
  try {
    huber_scalar(1, 2, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonpositiveDelta);
  }
}

TEST(Huber, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (HuberMode mode : {HuberMode::aggregate_mean, HuberMode::elementwise})
    for (double scale : {0.002, 0.05}) {
      auto a = random_vec(rng, 12, scale);
      const auto b = random_vec(rng, 12, scale);
      std::vector<double> g(12, 0.0);
      huber_grad<double>(a, b, 0.01, mode, 1.0, g);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double h = 1e-7, keep = a[i];
        a[i] = keep + h;
        const double up = huber<double>(std::span<const double>(a), std::span<const double>(b), 0.01, mode);
        a[i] = keep - h;
        const double dn = huber<double>(std::span<const double>(a), std::span<const double>(b), 0.01, mode);
        a[i] = keep;
        EXPECT_NEAR(g[i], (up - dn) / (2 * h), 1e-7);
      }
    }
}

TEST(Objectives, IdenticalFramesGiveZeroLosses) {
  std::mt19937_64 rng(1);
  LossConfig cfg;
  for (int k = 0; k < 20; ++k) {
    const auto gt = random_pyramid(rng), prev = random_pyramid(rng), next = random_pyramid(rng);
    const auto content = content_loss(gt, gt, cfg);
    const auto rel = relation_loss<double>(gt, gt, {{-1, prev}, {1, next}}, cfg);
    Tensor<double> frame(1, 3, 8, 8);
    frame.vec() = random_vec(rng, frame.size(), 0.3);
    LossBreakdown b;
    b.content = content;
    b.relation = rel.loss;
    b.pixel = pixel_loss(frame, frame, cfg);
    for (double v : content) EXPECT_EQ(v, 0.0);
    for (const auto& d : rel.loss)
      for (double v : d) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(*b.pixel, 0.0);
    EXPECT_EQ(total_loss(b, cfg), 0.0);
  }
}

TEST(Objectives, TotalLossWeighting) {
  LossConfig cfg;
  LossBreakdown b;
  b.content = {1, 1, 1, 1};
  b.relation = {{2, 2, 2, 2}, {2, 2, 2, 2}};
  b.pixel = 4;
  // 1/4*4 + 1/(2*4)*16 + 4
  EXPECT_DOUBLE_EQ(total_loss(b, cfg), 7.0);
  cfg.w_c = 10;
  EXPECT_DOUBLE_EQ(total_loss(b, cfg), 16.0);
  cfg.w_c = 1;
  cfg.use_content = cfg.use_relation = false;
  EXPECT_DOUBLE_EQ(total_loss(b, cfg), 4.0);
}

TEST(Objectives, LayerMaskRestrictsBothTerms) {
  std::mt19937_64 rng(3);
  LossConfig cfg;
  cfg.layer_mask = {4};
  const auto gen = random_pyramid(rng), gt = random_pyramid(rng), nb = random_pyramid(rng);
  const auto c = content_loss(gen, gt, cfg);
  const auto r = relation_loss<double>(gen, gt, {{-1, nb}, {1, nb}}, cfg);
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(c[j], 0.0);
    EXPECT_EQ(r.loss[0][j], 0.0);
  }
  EXPECT_GT(c[3], 0.0);
  LossBreakdown b;
  b.content = c;
  b.relation = r.loss;
  b.pixel = 0.0;
  EXPECT_NEAR(total_loss(b, cfg), c[3] + (r.loss[0][3] + r.loss[1][3]) / 2, 1e-15);
}

TEST(Objectives, RelationNeedsBothNeighbours) {
  std::mt19937_64 rng(2);
  const auto p = random_pyramid(rng);
  try {
    relation_loss<double>(p, p, {{-1, p}}, LossConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingNeighbor);
  }
}

TEST(Objectives, RelationUsesPhiDistances) {
  std::mt19937_64 rng(5);
  LossConfig cfg;
  const auto gen = random_pyramid(rng), gt = random_pyramid(rng), nb = random_pyramid(rng);
  const auto r = relation_loss<double>(gen, gt, {{-1, nb}, {1, nb}}, cfg);
  for (int j = 0; j < 4; ++j) {
    const double pg = huber(gen.levels[j], nb.levels[j], 0.01);
    const double pt = huber(gt.levels[j], nb.levels[j], 0.01);
    EXPECT_DOUBLE_EQ(r.phi_gen[0][j], pg);
    EXPECT_DOUBLE_EQ(r.phi_gt[0][j], pt);
    EXPECT_DOUBLE_EQ(r.loss[0][j], huber_scalar(pg, pt, 0.01));
  }
}

TEST(Objectives, GeneratorObjectiveGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  LossConfig cfg;
  auto gen = random_pyramid(rng, 0.02);
  const auto gt = random_pyramid(rng, 0.02), prev = random_pyramid(rng, 0.02), next = random_pyramid(rng, 0.02);
  Tensor<double> gf(1, 3, 4, 4), tf(1, 3, 4, 4);
  gf.vec() = random_vec(rng, gf.size(), 0.02);
  tf.vec() = random_vec(rng, tf.size(), 0.02);
  std::map<int, PyramidView<double>> nb{{-1, view(prev)}, {1, view(next)}};
  auto eval = [&] { return *generator_objective<double>(view(gen), view(gt), nb, gf, tf, cfg, false).parts.total; };
  const auto r = generator_objective<double>(view(gen), view(gt), nb, gf, tf, cfg, true);
  const double h = 1e-7;
  for (int j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < gen.levels[j].size(); ++i) {
      double& x = gen.levels[j][i];
      const double keep = x;
      x = keep + h;
      const double up = eval();
      x = keep - h;
      const double dn = eval();
      x = keep;
      EXPECT_NEAR(r.d_levels[j][i], (up - dn) / (2 * h), 1e-6) << "level " << j << " index " << i;
    }
  for (std::size_t i = 0; i < gf.size(); ++i) {
    const double keep = gf[i];
    gf[i] = keep + h;
    const double up = eval();
    gf[i] = keep - h;
    const double dn = eval();
    gf[i] = keep;
    EXPECT_NEAR(r.d_frame[i], (up - dn) / (2 * h), 1e-6);
  }
}

TEST(Objectives, AdversarialLossAtZeroLogitIsLog2) {
  Tensor<double> logits(2, 1, 2, 2);
  Tensor<double> d;
  EXPECT_NEAR(adversarial_g_loss(logits, &d), std::log(2.0), 1e-15);
  for (double v : d.vec()) EXPECT_NEAR(v, -0.5 / 8, 1e-15);
}

TEST(Objectives, CsvRowMatchesHeaderWidth) {
  const auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  LossBreakdown b;
  b.pixel = 0.1;
  EXPECT_EQ(count(loss_csv_header()), count(loss_csv_row(10, b)));
  b.content = {1, 2, 3, 4};
  b.relation = {{1, 1, 1, 1}, {2, 2, 2, 2}};
  b.total = 3;
  b.t_loss = 1.2;
  b.adv = 0.7;
  EXPECT_EQ(count(loss_csv_header()), count(loss_csv_row(20, b)));
  EXPECT_EQ(loss_csv_header(),
            "iter,L_P,L_C1,L_C2,L_C3,L_C4,L_Rm1_1,L_Rm1_2,L_Rm1_3,L_Rm1_4,L_Rp1_1,L_Rp1_2,L_Rp1_3,L_Rp1_4,L_G,L_FC,adv");
}
