#include <gtest/gtest.h>

#include <cmath>

#include "lossforge/lossnet.hpp"

using namespace lossforge;

namespace {

Tensor<double> random_frames(int sequences, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(sequences * 3, 3, h, w);
  for (auto& v : t.vec()) v = rng.uniform();
  return t;
}

LossNetConfig small_config() {
  LossNetConfig c;
  c.channels = {4, 6, 6, 8};
  c.classifier_channels = 5;
  return c;
}

bool close(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + 1e-9; }

}  // namespace

TEST(LossNet, PyramidShapesFollowStrideArithmetic) {
  LossNet<float> net({}, 1);
  for (int size : {128, 64}) {
    Tensor<float> x = random_frames(1, size, size, 2).cast<float>();
    auto pass = net.extract(x, BnMode::train);
    const int channels[4] = {64, 128, 256, 512};
    for (int j = 0; j < 4; ++j) {
      EXPECT_EQ(pass.levels[j].n(), 3);
      EXPECT_EQ(pass.levels[j].c(), channels[j]);
      EXPECT_EQ(pass.levels[j].h(), size >> (j + 1));
      EXPECT_EQ(pass.levels[j].w(), size >> (j + 1));
    }
    auto cp = net.classify(pass);
    EXPECT_EQ(cp.logits.n(), 1);
    EXPECT_EQ(cp.logits.c(), 1);
    EXPECT_EQ(cp.logits.h(), size / 32);
    EXPECT_EQ(cp.logits.w(), size / 32);
  }
}

TEST(LossNet, RejectsPartialSequences) {
  LossNet<double> net(small_config(), 1);
  Tensor<double> x(4, 3, 16, 16);
  EXPECT_THROW(net.extract(x, BnMode::train), Error);
}

TEST(LossNet, SeedDeterminesInitialisation) {
  LossNet<float> a(small_config(), 5), b(small_config(), 5), c(small_config(), 6);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
}

TEST(LossNet, RunningStatisticsOnlyMoveWhenAsked) {
  LossNet<double> net(small_config(), 1);
  const auto x = random_frames(2, 16, 16, 3);
  const auto h0 = net.hash();
  net.extract(x, BnMode::train, false);
  EXPECT_EQ(net.hash(), h0);
  net.extract(x, BnMode::eval, true);
  EXPECT_EQ(net.hash(), h0);
  net.extract(x, BnMode::train, true);
  EXPECT_NE(net.hash(), h0);
}

TEST(LossNet, ChanceLevelBceIsTwoLog2) {
  Tensor<double> zero(3, 1, 2, 2);
  auto r = sequence_bce(zero, zero);
  EXPECT_NEAR(r.loss, 2 * std::log(2.0), 1e-15);
}

TEST(LossNet, BceGradientsMatchFiniteDifferences) {
  Rng rng(4);
  Tensor<double> real(2, 1, 2, 2), fake(2, 1, 2, 2);
  for (auto& v : real.vec()) v = rng.normal() * 3;
  for (auto& v : fake.vec()) v = rng.normal() * 3;
  auto r = sequence_bce(real, fake);
  const double h = 1e-6;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const double k = real[i];
    real[i] = k + h;
    const double up = sequence_bce(real, fake).loss;
    real[i] = k - h;
    const double dn = sequence_bce(real, fake).loss;
    real[i] = k;
    EXPECT_NEAR(r.d_real[i], (up - dn) / (2 * h), 1e-8);
  }
}

TEST(LossNet, ObjectiveParameterGradientsMatchFiniteDifferences) {
  LossNet<double> net(small_config(), 7);
  const auto real = random_frames(2, 16, 16, 1);
  auto fake = real;
  Rng rng(2);
  for (int b = 0; b < 2; ++b) {
    double* c = fake.image(b * 3 + 1);
    for (std::size_t i = 0; i < fake.image_size(); ++i) c[i] = rng.uniform();
  }
  net.zero_grad();
  t_objective(net, real, fake, BnMode::train, true);
  Rng pick(3);
  double worst = 0.0;
  for (auto& p : net.params()) {
    const int probes = std::min<int>(6, static_cast<int>(p.value.size()));
    for (int k = 0; k < probes; ++k) {
      const std::size_t i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(p.value.size()) - 1));
      const double keep = p.value[i], h = 1e-6;
      p.value[i] = keep + h;
      const double up = t_objective(net, real, fake, BnMode::train, false);
      p.value[i] = keep - h;
      const double dn = t_objective(net, real, fake, BnMode::train, false);
      p.value[i] = keep;
      const double fd = (up - dn) / (2 * h);
      EXPECT_TRUE(close(p.grad[i], fd, 1e-4)) << p.name << "[" << i << "] analytic " << p.grad[i] << " fd " << fd;
      if (std::abs(fd) > 1e-8) worst = std::max(worst, std::abs(p.grad[i] - fd) / std::abs(fd));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(LossNet, InputGradientMatchesFiniteDifferences) {
  LossNet<double> net(small_config(), 11);
  auto x = random_frames(2, 16, 16, 5);
  Rng rng(6);
  std::vector<Tensor<double>> w(4);
  auto objective = [&](const Tensor<double>& in, bool grads, Tensor<double>* dx) {
    auto pass = net.extract(in, BnMode::train, false, grads);
    double s = 0.0;
    std::vector<Tensor<double>> dl(4);
    for (int j = 0; j < 4; ++j) {
      if (w[j].empty()) {
        w[j] = Tensor<double>(pass.levels[j].n(), pass.levels[j].c(), pass.levels[j].h(), pass.levels[j].w());
        for (auto& v : w[j].vec()) v = rng.normal();
      }
      for (std::size_t i = 0; i < w[j].size(); ++i) s += w[j][i] * pass.levels[j][i];
      dl[j] = w[j];
    }
    if (dx) *dx = net.backward_features(pass, dl, false, true);
    return s;
  };
  Tensor<double> dx;
  objective(x, true, &dx);
  for (std::size_t i = 0; i < x.size(); i += 97) {
    const double keep = x[i], h = 1e-6;
    x[i] = keep + h;
    const double up = objective(x, false, nullptr);
    x[i] = keep - h;
    const double dn = objective(x, false, nullptr);
    x[i] = keep;
    EXPECT_TRUE(close(dx[i], (up - dn) / (2 * h), 1e-5)) << i;
  }
}

TEST(LossNet, FakeInputReplacesOnlyTheCentre) {
  std::array<Tensor<double>, 3> gt{Tensor<double>(1, 3, 4, 4, 0.1), Tensor<double>(1, 3, 4, 4, 0.2),
                                   Tensor<double>(1, 3, 4, 4, 0.3)};
  Tensor<double> gen(1, 3, 4, 4, 0.9);
  auto f = make_fake_input(gt, gen);
  EXPECT_EQ(f[0], gt[0]);
  EXPECT_EQ(f[1], gen);
  EXPECT_EQ(f[2], gt[2]);
  EXPECT_THROW(make_fake_input(gt, gen, FakeMode::all_gen), Error);
  std::array<Tensor<double>, 2> nb{Tensor<double>(1, 3, 4, 4, 0.7), Tensor<double>(1, 3, 4, 4, 0.8)};
  auto g = make_fake_input(gt, gen, FakeMode::all_gen, std::optional(nb));
  EXPECT_EQ(g[0], nb[0]);
  EXPECT_EQ(g[2], nb[1]);
}

TEST(LossNet, TObjectiveOnlyTouchesTGradientsWhenAsked) {
  LossNet<double> net(small_config(), 1);
  const auto x = random_frames(1, 16, 16, 8);
  net.zero_grad();
  t_objective(net, x, x, BnMode::train, false);
  for (const auto& p : net.params())
    for (double v : p.grad.vec()) ASSERT_EQ(v, 0.0) << p.name;
}
