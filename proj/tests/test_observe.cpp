#include <gtest/gtest.h>

#include <cmath>

#include "nlcs/observe.hpp"

using namespace nlcs;

TEST(Scalars, Sign) {
  EXPECT_EQ(sign_val(0.0), 1.0);
  EXPECT_EQ(sign_val(-0.3), -1.0);
  EXPECT_EQ(sign_val(2.0), 1.0);
}

TEST(Scalars, UniformQuantizer) {
  EXPECT_EQ(uniform_quantize(0.5, 1.0), 1.0);
  EXPECT_EQ(uniform_quantize(-0.5, 1.0), -1.0);
  EXPECT_EQ(uniform_quantize(2.0, 1.0), 1.0);
  EXPECT_EQ(uniform_quantize(2.0001, 1.0), 3.0);
  EXPECT_EQ(uniform_quantize(0.0, 0.25), -0.25);
  EXPECT_THROW(uniform_quantize(1.0, 0.0), InvalidParameter);
  // every output is a cell center within δ of the input
  for (double v = -5.0; v <= 5.0; v += 0.0137) {
    const double q = uniform_quantize(v, 0.5);
    EXPECT_LE(std::abs(q - v), 0.5 + 1e-12);
    EXPECT_NEAR(std::fmod(std::abs(q), 1.0), 0.5, 1e-12);
  }
}

TEST(Scalars, Modulo) {
  EXPECT_EQ(modulo_val(0.0, 1.0), 0.0);
  EXPECT_EQ(modulo_val(1.5, 1.0), -0.5);
  EXPECT_EQ(modulo_val(1.0, 1.0), -1.0);
  EXPECT_EQ(modulo_val(-1.0, 1.0), -1.0);
  for (double v = -0.99; v < 1.0; v += 0.01) EXPECT_EQ(modulo_val(v, 1.0), v);
  for (double v = -20.0; v < 20.0; v += 0.173) {
    const double w = modulo_val(v, 2.0);
    EXPECT_GE(w, -2.0);
    EXPECT_LT(w, 2.0);
    EXPECT_NEAR(std::remainder(v - w, 4.0), 0.0, 1e-12);
  }
}

TEST(Observe, LinearIsExact) {
  const Matrix a = gen_matrix({EnsembleLaw::Gaussian, 5, 1.0}, 7, 1);
  const Vector x = Vector::LinSpaced(5, -1.0, 1.0);
  const auto batch = observe(obs::Linear{}, a, Signal{x}, 0);
  EXPECT_EQ(batch.clean, a * x);
  EXPECT_EQ(batch.corrupted, batch.clean);
  EXPECT_FALSE(batch.dither.has_value());
}

TEST(Observe, OneBitSingleRow) {
  Matrix a(1, 2);
  a << 1.0, -1.0;
  EXPECT_EQ(observe(obs::OneBit{}, a, Signal{Vector{{0.0, 1.0}}}, 0).clean[0], -1.0);
}

TEST(Observe, DitherIsRecordedAndReproducible) {
  const Matrix a = gen_matrix({EnsembleLaw::Gaussian, 3, 1.0}, 50, 2);
  const Signal x{Vector{{0.2, -0.1, 0.4}}};
  const auto b1 = observe(obs::MultiBitDither{0.25}, a, x, 9);
  const auto b2 = observe(obs::MultiBitDither{0.25}, a, x, 9);
  ASSERT_TRUE(b1.dither.has_value());
  EXPECT_EQ(b1.clean, b2.clean);
  const Vector ax = a * signal_vector(x);
  for (Index i = 0; i < 50; ++i) {
    EXPECT_LE(std::abs((*b1.dither)[i]), 0.25);
    EXPECT_EQ(b1.clean[i], uniform_quantize(ax[i] + (*b1.dither)[i], 0.25));
  }
}

TEST(Observe, MultiBitDitherMeanIdentity) {
  const ObservationModel model = obs::MultiBitDither{1.0};
  Rng rng = make_rng(17);
  double sum = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) sum += scalar_output(model, 0.7, draw_dither(model, rng));
  EXPECT_NEAR(sum / n, 0.7, 5e-3);
}

TEST(Observe, VarSelectNeedsSupport) {
  const Matrix a = gen_matrix({EnsembleLaw::Gaussian, 4, 1.0}, 3, 2);
  const SupportSet s{4, {1, 3}};
  const auto b = observe(obs::VarSelect{}, a, Signal{s}, 0);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(b.clean[i], (a(i, 1) + a(i, 3)) / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(observe(obs::VarSelect{}, a, Signal{Vector::Ones(4).eval()}, 0), ModelMismatch);
}

TEST(Corruption, EmptySpecIsIdentity) {
  const Matrix a = gen_matrix({EnsembleLaw::Gaussian, 3, 1.0}, 20, 4);
  const Signal x{Vector{{1.0, 0.0, 0.0}}};
  const auto clean = observe(obs::Linear{}, a, x, 0).clean;
  const auto b = corrupt(clean, CorruptionSpec{}, obs::Linear{}, x, a, 1);
  EXPECT_EQ(b.corrupted, clean);
  EXPECT_TRUE(b.corruption_log.events.empty());
}

TEST(Corruption, BitFlipsExactCount) {
  const Matrix a = gen_matrix({EnsembleLaw::Gaussian, 10, 1.0}, 100, 4);
  const Signal x{Vector::Ones(10).eval()};
  const auto clean = observe(obs::OneBit{}, a, x, 0).clean;
  for (auto mode : {AdversarialMode::Random, AdversarialMode::AlignedWithSignal}) {
    CorruptionSpec spec;
    spec.bitflip_frac = 0.05;
    spec.mode = mode;
    const auto b = corrupt(clean, spec, obs::OneBit{}, x, a, 3);
    EXPECT_EQ((b.corrupted.array() != clean.array()).count(), 5);
    EXPECT_DOUBLE_EQ((b.corrupted - clean).lpNorm<1>() / 2.0, 5.0);
    EXPECT_EQ(b.corruption_log.count(CorruptionEvent::Kind::BitFlip), 5);
  }
  CorruptionSpec spec;
  spec.bitflip_frac = 0.1;
  EXPECT_THROW(corrupt(a * signal_vector(x), spec, obs::Linear{}, x, a, 3), ModelMismatch);
}

TEST(Corruption, L2BudgetRandomIsExact) {
  const Matrix a = gen_matrix({EnsembleLaw::Gaussian, 4, 1.0}, 500, 4);
  const Signal x{Vector::Ones(4).eval()};
  const Vector clean = a * signal_vector(x);
  CorruptionSpec spec;
  spec.l2_budget = 0.3;
  const auto b = corrupt(clean, spec, obs::Linear{}, x, a, 8);
  EXPECT_NEAR(std::sqrt((b.corrupted - clean).squaredNorm() / 500.0), 0.3, 1e-12);
  EXPECT_NEAR(b.corruption_log.l2_rms(500), 0.3, 1e-12);
}

TEST(Corruption, AlignedL2ScalesWithSignal) {
  const Index m = 10000;
  const Matrix a = gen_matrix({EnsembleLaw::Gaussian, 6, 1.0}, m, 5);
  Vector xv = Vector::Zero(6);
  xv[0] = 2.0;
  xv[3] = -1.0;
  const Signal x{xv};
  const double c = 0.5, t = 0.2;
  CorruptionSpec spec;
  spec.l2_budget = c * t;
  spec.mode = AdversarialMode::AlignedWithSignal;
  const Vector clean = a * xv;
  const auto b = corrupt(clean, spec, obs::Linear{}, x, a, 1);
  const double rms = std::sqrt((b.corrupted - clean).squaredNorm() / double(m));
  EXPECT_NEAR(rms, c * t * xv.norm(), 0.1 * c * t * xv.norm());
}

TEST(Corruption, GrossOutliers) {
  const Matrix a = gen_matrix({EnsembleLaw::Gaussian, 4, 1.0}, 200, 4);
  const Signal x{Vector::Ones(4).eval()};
  const Vector clean = a * signal_vector(x);
  CorruptionSpec spec;
  spec.gross_outliers = 7;
  spec.outlier_magnitude = 50.0;
  const auto b = corrupt(clean, spec, obs::Linear{}, x, a, 2);
  const Vector diff = b.corrupted - clean;
  EXPECT_EQ((diff.array() != 0.0).count(), 7);
  EXPECT_NEAR(diff.cwiseAbs().maxCoeff(), 50.0, 1e-12);
  EXPECT_EQ(b.corruption_log.count(CorruptionEvent::Kind::GrossOutlier), 7);
}

TEST(MonteCarlo, LinearCorrelationIsSignal) {
  const Vector x{{0.6, -0.8, 0.0}};
  const auto tv = monte_carlo_correlation(obs::Linear{}, {EnsembleLaw::Gaussian, 3, 1.0}, Signal{x}, 100000, 3);
  ASSERT_TRUE(tv.stderr_.has_value());
  for (Index j = 0; j < 3; ++j) EXPECT_LE(std::abs(tv.value[j] - x[j]), 3.0 * (*tv.stderr_)[j]);
}
