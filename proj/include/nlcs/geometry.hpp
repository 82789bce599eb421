#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "nlcs/model.hpp"

namespace nlcs {

struct ProjectionResult {
  Vector point;
  bool active = false;  // the constraint was binding
  int iterations = 0;   // inner-solver iterations (TV bisection)
};

/// Exact solution of min_v ½‖v − y‖² + λ‖Dv‖₁ (1-D total-variation prox).
///
/// Direct O(p) taut-string scan (Condat 2013): the output is built segment
/// by segment while tracking the admissible range [vmin, vmax] of the
/// current level.
inline Vector tv_prox(const Vector& y, double lambda) {
  const Index n = y.size();
  Vector out(n);
  if (n == 0) return out;
  if (lambda <= 0.0) return y;
  Index k = 0, k0 = 0, kplus = 0, kminus = 0;
  double umin = lambda, umax = -lambda;
  double vmin = y[0] - lambda, vmax = y[0] + lambda;
  const double twolambda = 2.0 * lambda, minlambda = -lambda;
  for (;;) {
    while (k == n - 1) {
      if (umin < 0.0) {
        do out[k0++] = vmin;
        while (k0 <= kminus);
        k = kminus = k0;
        vmin = y[k];
        umin = lambda;
        umax = vmin + umin - vmax;
      } else if (umax > 0.0) {
        do out[k0++] = vmax;
        while (k0 <= kplus);
        k = kplus = k0;
        vmax = y[k];
        umax = minlambda;
        umin = vmax + umax - vmin;
      } else {
        vmin += umin / double(k - k0 + 1);
        do out[k0++] = vmin;
        while (k0 <= k);
        return out;
      }
    }
    if ((umin += y[k + 1] - vmin) < minlambda) {
      do out[k0++] = vmin;
      while (k0 <= kminus);
      k = kplus = kminus = k0;
      vmin = y[k];
      vmax = vmin + twolambda;
      umin = lambda;
      umax = minlambda;
    } else if ((umax += y[k + 1] - vmax) > lambda) {
      do out[k0++] = vmax;
      while (k0 <= kplus);
      k = kplus = kminus = k0;
      vmax = y[k];
      vmin = vmax - twolambda;
      umin = lambda;
      umax = minlambda;
    } else {
      ++k;
      if (umin >= lambda) {
        kminus = k;
        vmin += (umin - lambda) / double(kminus - k0 + 1);
        umin = lambda;
      }
      if (umax <= minlambda) {
        kplus = k;
        vmax += (umax + lambda) / double(kplus - k0 + 1);
        umax = minlambda;
      }
    }
  }
}

/// Smallest λ at which tv_prox(y, λ) is constant.
inline double tv_prox_lambda_max(const Vector& y) {
  const double mean = y.mean();
  double run = 0.0, best = 0.0;
  for (Index i = 0; i + 1 < y.size(); ++i) {
    run += y[i] - mean;
    best = std::max(best, std::abs(run));
  }
  return best;
}

namespace detail {

inline ProjectionResult project_l1(const Vector& x, double radius) {
  if (x.lpNorm<1>() <= radius) return {x, false, 0};
  // sort-based threshold: θ solves Σ(|x_i| − θ)₊ = R
  std::vector<double> mag(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) mag[static_cast<std::size_t>(i)] = std::abs(x[i]);
  std::sort(mag.begin(), mag.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    cumsum += mag[k];
    const double t = (cumsum - radius) / double(k + 1);
    if (k + 1 == mag.size() || mag[k + 1] <= t) {
      theta = t;
      break;
    }
  }
  Vector v(x.size());
  for (Index i = 0; i < x.size(); ++i)
    v[i] = std::copysign(std::max(std::abs(x[i]) - theta, 0.0), x[i]);
  // rounding may leave ‖v‖₁ a few ulp above R
  const double l1 = v.lpNorm<1>();
  if (l1 > radius) v *= radius / l1;
  return {v, true, 0};
}

/// TV-ball projection: the prox at the λ where TV(prox_λ(x)) = R. TV of the
/// prox is continuous, nonincreasing and piecewise linear in λ, so a
/// safeguarded secant (Illinois) search lands on λ* to rounding precision.
inline ProjectionResult project_tv(const Vector& x, double radius) {
  if (total_variation(x) <= radius) return {x, false, 0};
  constexpr int kMaxIters = 200;
  const double tol = 1e-14 * std::max(1.0, radius);
  double lo = 0.0, hi = tv_prox_lambda_max(x);
  double f_lo = total_variation(x) - radius, f_hi = -radius;  // f(λ) = TV(prox_λ) − R
  Vector best = tv_prox(x, hi);  // constant: TV = 0, feasible
  int side = 0, it = 0;
  for (; it < kMaxIters; ++it) {
    double mid = hi - f_hi * (hi - lo) / (f_hi - f_lo);
    if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    Vector v = tv_prox(x, mid);
    const double f = total_variation(v) - radius;
    if (f > 0.0) {
      lo = mid;
      f_lo = f;
      if (side == -1) f_hi *= 0.5;
      side = -1;
    } else {
      hi = mid;
      f_hi = f;
      best = std::move(v);
      if (side == 1) f_lo *= 0.5;
      side = 1;
      if (-f <= tol) break;
    }
  }
  return {best, true, it + 1};
}

}  // namespace detail

/// Euclidean projection onto a constraint set.
inline ProjectionResult project(const ConstraintSet& set, const Vector& x) {
  return std::visit(
      Overloaded{
          [&](const cset::L1Ball& b) { return detail::project_l1(x, b.radius); },
          [&](const cset::L2Ball& b) {
            const double nrm = x.norm();
            if (nrm <= b.radius) return ProjectionResult{x, false, 0};
            return ProjectionResult{x * (b.radius / nrm), true, 0};
          },
          [&](const cset::TVBall& b) { return detail::project_tv(x, b.radius); },
          [&](const cset::Box& b) {
            Vector v = x.cwiseMax(b.lo).cwiseMin(b.hi);
            const bool active = (v.array() != x.array()).any();
            return ProjectionResult{std::move(v), active, 0};
          },
          [&](const cset::FullSpace&) { return ProjectionResult{x, false, 0}; },
      },
      set);
}

/// Alternating projections onto several sets, `rounds` sweeps.
/// Diagnostic only: for intersections this is a heuristic, not the exact
/// Euclidean projection.
inline Vector project_sequential(const std::vector<ConstraintSet>& sets, const Vector& x,
                                 int rounds = 1) {
  Vector v = x;
  for (int r = 0; r < rounds; ++r)
    for (const auto& s : sets) v = project(s, v).point;
  return v;
}

/// Amount by which x violates membership (0 inside).
inline double constraint_residual(const ConstraintSet& set, const Vector& x) {
  return std::visit(
      Overloaded{
          [&](const cset::L1Ball& b) { return std::max(0.0, x.lpNorm<1>() - b.radius); },
          [&](const cset::L2Ball& b) { return std::max(0.0, x.norm() - b.radius); },
          [&](const cset::TVBall& b) { return std::max(0.0, total_variation(x) - b.radius); },
          [&](const cset::Box& b) {
            if (x.size() == 0) return 0.0;
            return std::max({0.0, b.lo - x.minCoeff(), x.maxCoeff() - b.hi});
          },
          [&](const cset::FullSpace&) { return 0.0; },
      },
      set);
}

inline bool contains(const ConstraintSet& set, const Vector& x, double tol = 1e-10) {
  return constraint_residual(set, x) <= tol;
}

/// Gauge of the set's defining norm (ℓ₁, ℓ₂ or TV); used for tuning radii.
inline double set_norm(const ConstraintSet& set, const Vector& x) {
  return std::visit(Overloaded{
                        [&](const cset::L1Ball&) { return x.lpNorm<1>(); },
                        [&](const cset::L2Ball&) { return x.norm(); },
                        [&](const cset::TVBall&) { return total_variation(x); },
                        [&](const auto&) { return 0.0; },
                    },
                    set);
}

struct SupportResult {
  double value = 0.0;
  Vector argmax;
};

inline constexpr double kNoCap = std::numeric_limits<double>::infinity();

namespace detail {

/// max ⟨g, v⟩ over {‖v‖₁ ≤ R, ‖v‖₂ ≤ t}.
///
/// Dual: min_{θ≥0} Rθ + t‖soft(g, θ)‖₂. The primal point is t·u/‖u‖₂ with
/// u = soft(g, θ), shrunk onto the ℓ₁ sphere if needed. Bisection on θ stops
/// on a duality gap below 1e−10.
inline SupportResult support_l1_capped(const Vector& g, double radius, double cap) {
  const Index p = g.size();
  Index jmax = 0;
  for (Index j = 1; j < p; ++j)
    if (std::abs(g[j]) > std::abs(g[jmax])) jmax = j;  // lowest index on ties
  const double gmax = p > 0 ? std::abs(g[jmax]) : 0.0;
  auto vertex = [&]() {
    Vector v = Vector::Zero(p);
    if (p > 0 && gmax > 0.0) v[jmax] = std::copysign(radius, g[jmax]);
    return SupportResult{radius * gmax, v};
  };
  if (gmax == 0.0 || radius <= cap) return vertex();  // ‖v‖₂ ≤ ‖v‖₁ ≤ R ≤ t

  auto soft = [&](double theta) {
    Vector u(p);
    for (Index j = 0; j < p; ++j)
      u[j] = std::copysign(std::max(std::abs(g[j]) - theta, 0.0), g[j]);
    return u;
  };
  auto primal = [&](const Vector& u) {
    Vector v = u * (cap / u.norm());
    const double l1 = v.lpNorm<1>();
    if (l1 > radius) v *= radius / l1;
    return SupportResult{g.dot(v), v};
  };
  auto dual = [&](double theta) { return radius * theta + cap * soft(theta).norm(); };

  // θ = 0: ℓ₁ constraint may be slack
  {
    const Vector u = soft(0.0);
    if (cap * u.lpNorm<1>() <= radius * u.norm())
      return SupportResult{cap * g.norm(), u * (cap / u.norm())};
  }
  double lo = 0.0, hi = gmax;
  SupportResult best{-std::numeric_limits<double>::infinity(), Vector::Zero(p)};
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const Vector u = soft(mid);
    const double nrm = u.norm();
    if (nrm == 0.0) {
      hi = mid;
      continue;
    }
    SupportResult cand = primal(u);
    if (cand.value > best.value) best = cand;
    // derivative of the dual objective: R − t‖u‖₁/‖u‖₂
    if (radius - cap * u.lpNorm<1>() / nrm < 0.0)
      lo = mid;
    else
      hi = mid;
    const double gap = std::min(dual(lo), dual(hi)) - best.value;
    if (gap < 1e-10 * std::max(1.0, best.value)) break;
  }
  return best;
}

}  // namespace detail

/// max ⟨g, v⟩ over {v ∈ K − center, ‖v‖₂ ≤ cap}, for a center inside K.
///
/// KKT: the maximizer is v(s) = P_K(center + s·g) − center for the s > 0 at
/// which ‖v(s)‖₂ = cap (‖v(s)‖₂ is nondecreasing in s). If the norm never
/// reaches the cap the linear maximum over K is attained inside the ball.
inline SupportResult support_max_shifted(const ConstraintSet& set, const Vector& center,
                                         double cap, const Vector& g) {
  if (!(cap > 0.0)) throw InvalidParameter("ℓ₂ cap must be > 0");
  if (!std::isfinite(cap)) throw InvalidParameter("shifted support needs a finite ℓ₂ cap");
  if (!contains(set, center, 1e-9)) throw ConstraintInfeasible("center lies outside the set");
  const Index p = g.size();
  const double gn = g.norm();
  if (gn == 0.0) return {0.0, Vector::Zero(p)};
  auto step = [&](double s) { return Vector(project(set, center + s * g).point - center); };

  double s_lo = cap / gn;  // nonexpansive: ‖v(s_lo)‖ ≤ cap
  Vector v_lo = step(s_lo);
  double s_hi = s_lo;
  Vector v_hi = v_lo;
  bool bracketed = false;
  for (int i = 0; i < 100; ++i) {
    s_hi *= 2.0;
    v_hi = step(s_hi);
    if (v_hi.norm() > cap) {
      bracketed = true;
      break;
    }
    // the ray has saturated on a face of K inside the cap; pushing s further
    // only loses precision in the projection
    const bool saturated = (v_hi - v_lo).norm() <= 1e-14 * std::max(1.0, v_hi.norm());
    s_lo = s_hi;
    v_lo = v_hi;
    if (saturated) break;
  }
  if (bracketed) {
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (s_lo + s_hi);
      if (mid <= s_lo || mid >= s_hi) break;
      Vector v = step(mid);
      if (v.norm() > cap) {
        s_hi = mid;
      } else {
        s_lo = mid;
        v_lo = std::move(v);
        if (cap - v_lo.norm() <= 1e-13 * cap) break;
      }
    }
  }
  return {g.dot(v_lo), v_lo};
}

/// max ⟨g, v⟩ over {v ∈ set, ‖v‖₂ ≤ cap}; cap = kNoCap means no ℓ₂ cap.
inline SupportResult support_max(const ConstraintSet& set, double cap, const Vector& g) {
  if (!(cap > 0.0)) throw InvalidParameter("ℓ₂ cap must be > 0");
  const bool uncapped = !std::isfinite(cap);
  const Index p = g.size();
  return std::visit(
      Overloaded{
          [&](const cset::L1Ball& b) { return detail::support_l1_capped(g, b.radius, cap); },
          [&](const cset::L2Ball& b) {
            const double r = std::min(b.radius, cap);
            const double gn = g.norm();
            if (gn == 0.0) return SupportResult{0.0, Vector::Zero(p)};
            return SupportResult{r * gn, g * (r / gn)};
          },
          [&](const cset::FullSpace&) {
            const double gn = g.norm();
            if (gn == 0.0) return SupportResult{0.0, Vector::Zero(p)};
            if (uncapped) throw UnboundedProblem("support of the full space is unbounded");
            return SupportResult{cap * gn, g * (cap / gn)};
          },
          [&](const cset::TVBall& b) {
            if (!uncapped) return support_max_shifted(set, Vector::Zero(p), cap, g);
            // constants are free: bounded only when Σg = 0, then R·max_k |Σ_{i≤k} g_i|
            if (std::abs(g.sum()) > 1e-12 * std::max(1.0, g.lpNorm<1>()))
              throw UnboundedProblem("TV ball is unbounded along constants");
            double run = 0.0, best = 0.0;
            Index arg = -1;
            for (Index k = 0; k + 1 < p; ++k) {
              run += g[k];
              if (std::abs(run) > best) {
                best = std::abs(run);
                arg = k;
              }
            }
            Vector v = Vector::Zero(p);
            // step of height R at arg, oriented to match −sign(run)
            if (arg >= 0) {
              double partial = g.head(arg + 1).sum();
              for (Index i = 0; i <= arg; ++i) v[i] = partial > 0 ? b.radius : 0.0;
              for (Index i = arg + 1; i < p; ++i) v[i] = partial > 0 ? 0.0 : b.radius;
            }
            return SupportResult{b.radius * best, v};
          },
          [&](const cset::Box& b) {
            if (!uncapped) {
              if (b.lo > 0.0 || b.hi < 0.0)
                throw ConstraintInfeasible("capped box support needs 0 inside the box");
              return support_max_shifted(set, Vector::Zero(p), cap, g);
            }
            Vector v(p);
            for (Index j = 0; j < p; ++j) v[j] = g[j] >= 0.0 ? b.hi : b.lo;
            return SupportResult{g.dot(v), v};
          },
      },
      set);
}

}  // namespace nlcs
