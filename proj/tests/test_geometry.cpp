#include <gtest/gtest.h>

#include <cmath>

#include "nlcs/geometry.hpp"

using namespace nlcs;

namespace {

Vector gaussian(Index p, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(p);
  for (Index j = 0; j < p; ++j) v[j] = normal(rng);
  return v;
}

// Dual projected gradient for the 1-D TV prox:
// min_{|u|∞ ≤ λ} ½‖y − Dᵀu‖², x = y − Dᵀu.
Vector tv_prox_oracle(const Vector& y, double lambda, int iters = 200000) {
  const Index n = y.size();
  Vector u = Vector::Zero(n - 1);
  auto dt = [&](const Vector& w) {
    Vector out = Vector::Zero(n);
    for (Index i = 0; i + 1 < n; ++i) {
      out[i] -= w[i];
      out[i + 1] += w[i];
    }
    return out;
  };
  for (int k = 0; k < iters; ++k) {
    const Vector x = y - dt(u);
    for (Index i = 0; i + 1 < n; ++i) u[i] = std::clamp(u[i] + 0.25 * (x[i + 1] - x[i]), -lambda, lambda);
  }
  return y - dt(u);
}

// Brute-force projection onto a 2-D set: dense grid search, refined by
// zooming around the best feasible grid point.
template <class Inside>
Vector grid_project(Inside inside, const Vector& x) {
  double cx = 0.0, cy = 0.0, step = 0.02, half = 4.0;
  for (int level = 0; level < 7; ++level) {
    double best = INFINITY, bx = cx, by = cy;
    const int n = static_cast<int>(std::lround(half / step));
    for (int i = -n; i <= n; ++i)
      for (int k = -n; k <= n; ++k) {
        const double u = cx + i * step, v = cy + k * step;
        if (!inside(u, v)) continue;
        const double d = (u - x[0]) * (u - x[0]) + (v - x[1]) * (v - x[1]);
        if (d < best) {
          best = d;
          bx = u;
          by = v;
        }
      }
    cx = bx;
    cy = by;
    half = 3.0 * step;
    step /= 10.0;
  }
  return Vector{{cx, cy}};
}

// Disc of radius r: points outside project onto the circle, so the grid
// runs over the boundary angle instead (a Cartesian lattice resolves a curved
// boundary only to O(h^{2/3})).
Vector grid_project_disc(double r, const Vector& x) {
  if (x.norm() <= r) return x;
  double center = 0.0, half = M_PI, best_phi = 0.0;
  for (int level = 0; level < 8; ++level) {
    double best = INFINITY;
    for (int i = -1000; i <= 1000; ++i) {
      const double phi = center + half * i / 1000.0;
      const double d = std::hypot(r * std::cos(phi) - x[0], r * std::sin(phi) - x[1]);
      if (d < best) {
        best = d;
        best_phi = phi;
      }
    }
    center = best_phi;
    half /= 100.0;
  }
  return Vector{{r * std::cos(best_phi), r * std::sin(best_phi)}};
}

std::vector<ConstraintSet> families() {
  return {cset::L1Ball{1.3}, cset::L2Ball{0.7}, cset::TVBall{1.1}, cset::Box{-0.4, 0.9}, cset::FullSpace{}};
}

}  // namespace

TEST(Projection, HandExamples) {
  EXPECT_TRUE(project(cset::L2Ball{1.0}, Vector{{2.0, 0.0}}).point.isApprox(Vector{{1.0, 0.0}}));
  EXPECT_TRUE(project(cset::L1Ball{1.0}, Vector{{2.0, 1.0}}).point.isApprox(Vector{{1.0, 0.0}}));
  const Vector tv = project(cset::TVBall{1.0}, Vector{{0.0, 2.0}}).point;
  EXPECT_NEAR(tv[0], 0.5, 1e-9);
  EXPECT_NEAR(tv[1], 1.5, 1e-9);
  EXPECT_EQ(project(cset::Box{-1.0, 1.0}, Vector{{3.0, -0.5}}).point, (Vector{{1.0, -0.5}}));
}

TEST(Projection, InteriorPointsAreFixed) {
  const Vector x{{0.1, -0.2, 0.05}};
  for (const auto& set : families()) EXPECT_LE((project(set, x).point - x).norm(), 1e-12);
}

TEST(Projection, MatchesGridSearchIn2D) {
  Rng rng = make_rng(31);
  for (int k = 0; k < 10; ++k) {
    const Vector x = gaussian(2, rng, 1.5);
    auto check = [&](const ConstraintSet& set, auto inside) {
      EXPECT_LE((project(set, x).point - grid_project(inside, x)).norm(), 1e-4);
    };
    check(cset::L1Ball{1.3}, [](double u, double v) { return std::abs(u) + std::abs(v) <= 1.3; });
    EXPECT_LE((project(cset::L2Ball{0.7}, x).point - grid_project_disc(0.7, x)).norm(), 1e-4);
    check(cset::TVBall{1.1}, [](double u, double v) { return std::abs(v - u) <= 1.1; });
    check(cset::Box{-0.4, 0.9}, [](double u, double v) { return u >= -0.4 && u <= 0.9 && v >= -0.4 && v <= 0.9; });
  }
}

TEST(Projection, Properties) {
  Rng rng = make_rng(5);
  for (const auto& set : families()) {
    for (int k = 0; k < 300; ++k) {
      const Index p = 2 + k % 30;
      const Vector x = gaussian(p, rng, 2.0), y = gaussian(p, rng, 2.0);
      const Vector px = project(set, x).point, py = project(set, y).point;
      EXPECT_TRUE(contains(set, px, 1e-9));
      EXPECT_LE((project(set, px).point - px).norm(), 1e-8);
      EXPECT_LE((px - py).norm(), (x - y).norm() + 1e-8);
      // ⟨x − Px, z − Px⟩ ≤ 0 for feasible z
      const Vector z = project(set, gaussian(p, rng, 0.3)).point;
      EXPECT_LE((x - px).dot(z - px), 1e-8);
    }
  }
}

TEST(Projection, L1ResultHasExactRadius) {
  Rng rng = make_rng(8);
  for (int k = 0; k < 100; ++k) {
    const Vector x = gaussian(50, rng, 3.0);
    EXPECT_LE(project(cset::L1Ball{1.0}, x).point.lpNorm<1>(), 1.0);
  }
}

TEST(TvProx, MatchesDualOracle) {
  Rng rng = make_rng(12);
  for (double lambda : {0.05, 0.3, 1.0, 5.0}) {
    const Vector y = gaussian(12, rng);
    EXPECT_LE((tv_prox(y, lambda) - tv_prox_oracle(y, lambda)).norm(), 1e-8) << "lambda " << lambda;
  }
}

TEST(TvProx, LargeLambdaGivesMean) {
  Rng rng = make_rng(3);
  const Vector y = gaussian(20, rng);
  const Vector x = tv_prox(y, tv_prox_lambda_max(y) * 1.0001);
  EXPECT_LE((x.array() - y.mean()).abs().maxCoeff(), 1e-12);
  EXPECT_EQ(tv_prox(y, 0.0), y);
}

TEST(Support, ClosedForms) {
  const Vector g{{0.3, -2.0, 1.0}};
  EXPECT_NEAR(support_max(cset::L1Ball{2.0}, kNoCap, g).value, 4.0, 1e-12);
  const auto tie = support_max(cset::L1Ball{1.0}, 1.0, Vector{{1.0, 1.0}});
  EXPECT_NEAR(tie.value, 1.0, 1e-10);
  EXPECT_TRUE(tie.argmax.isApprox(Vector{{1.0, 0.0}}, 1e-8));
  EXPECT_NEAR(support_max(cset::L2Ball{5.0}, 1.0, g).value, g.norm(), 1e-12);
  EXPECT_NEAR(support_max(cset::FullSpace{}, 2.0, g).value, 2.0 * g.norm(), 1e-12);
  EXPECT_THROW(support_max(cset::FullSpace{}, kNoCap, g), UnboundedProblem);
}

TEST(Support, CappedL1AgainstShiftedRayMethod) {
  Rng rng = make_rng(44);
  for (int k = 0; k < 50; ++k) {
    const Vector g = gaussian(16, rng);
    const double r = 0.5 + 2.0 * (k % 5), t = 0.3 + 0.2 * (k % 7);
    const auto a = support_max(cset::L1Ball{r}, t, g);
    const auto b = support_max_shifted(cset::L1Ball{r}, Vector::Zero(16), t, g);
    EXPECT_NEAR(a.value, b.value, 1e-7 * (1.0 + a.value));
    EXPECT_LE(a.argmax.lpNorm<1>(), r + 1e-9);
    EXPECT_LE(a.argmax.norm(), t + 1e-9);
    EXPECT_NEAR(g.dot(a.argmax), a.value, 1e-9 * (1.0 + a.value));
  }
}

TEST(Support, ShiftedDominatesRandomFeasiblePoints) {
  Rng rng = make_rng(45);
  const ConstraintSet set = cset::TVBall{1.0};
  const Vector c = project(set, gaussian(10, rng)).point;
  const Vector g = gaussian(10, rng);
  const double t = 0.4;
  const auto best = support_max_shifted(set, c, t, g);
  for (int k = 0; k < 2000; ++k) {
    Vector v = project(set, c + gaussian(10, rng, 0.3)).point - c;
    if (v.norm() > t) v *= t / v.norm();  // segment from c stays in K
    EXPECT_LE(g.dot(v), best.value + 1e-9);
  }
}

TEST(Residuals, ContainsAndNorms) {
  EXPECT_TRUE(contains(cset::L1Ball{1.0}, Vector{{0.5, -0.5}}));
  EXPECT_FALSE(contains(cset::L1Ball{1.0}, Vector{{0.6, -0.5}}));
  EXPECT_NEAR(constraint_residual(cset::L2Ball{1.0}, Vector{{3.0, 4.0}}), 4.0, 1e-12);
  EXPECT_NEAR(set_norm(cset::TVBall{}, Vector{{0.0, 2.0, 1.0}}), 3.0, 1e-15);
  EXPECT_NEAR(set_norm(cset::L1Ball{}, Vector{{-1.0, 2.0}}), 3.0, 1e-15);
}
