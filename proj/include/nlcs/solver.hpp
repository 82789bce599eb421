#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "nlcs/geometry.hpp"
#include "nlcs/model.hpp"

namespace nlcs {

/// Power-iteration estimate of ‖A‖²_op = λ_max(AᵀA). Zero matrix gives 0.
inline double spectral_norm_sq(const Matrix& a, int iters = 100, Seed seed = 0) {
  if (iters < 1) throw InvalidParameter("power iteration needs iters >= 1");
  if (a.size() == 0 || a.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal;
  Vector v(a.cols());
  for (Index j = 0; j < v.size(); ++j) v[j] = normal(rng);
  v.normalize();
  double estimate = 0.0;
  for (int k = 0; k < iters; ++k) {
    Vector w = a.transpose() * (a * v);
    const double nrm = w.norm();
    if (nrm == 0.0) return estimate;
    estimate = v.dot(w);  // Rayleigh quotient
    v = w / nrm;
  }
  return std::max(estimate, (a * v).squaredNorm());
}

enum class StepRule { FixedInverseLipschitz, Backtracking };

struct SolveOptions {
  int max_iters = 5000;
  double rel_tol = 1e-9;
  StepRule step_rule = StepRule::FixedInverseLipschitz;
  double safety_factor = 0.9;
  bool record_trace = false;
  std::optional<Vector> init;  // default: P_K(0)
};

struct SolveDiagnostics {
  int iterations = 0;
  double objective = 0.0;  // (1/m)‖y − Az‖₂²
  std::vector<double> trace;
  bool converged = false;
  double stationarity = 0.0;  // ‖z − P_K(z − η∇f(z))‖₂
  double step = 0.0;
};

struct LassoSolution {
  Vector z;
  SolveDiagnostics diag;
};

namespace detail {

/// f(z) = (1/m)‖y − Az‖² and its gradient; switches to the p×p Gram form
/// when m > p.
class LeastSquares {
 public:
  LeastSquares(const Matrix& a, const Vector& y) : a_(a), y_(y), m_(double(a.rows())) {
    if (a.rows() > a.cols()) {
      gram_ = a.transpose() * a / m_;
      aty_ = a.transpose() * y / m_;
    }
  }

  double value(const Vector& z) const { return (y_ - a_ * z).squaredNorm() / m_; }

  Vector gradient(const Vector& z) const {
    if (gram_) return 2.0 * (*gram_ * z - *aty_);
    return (2.0 / m_) * (a_.transpose() * (a_ * z - y_));
  }

 private:
  const Matrix& a_;
  const Vector& y_;
  double m_;
  std::optional<Matrix> gram_;
  std::optional<Vector> aty_;
};

}  // namespace detail

/// Minimize (1/m)‖y − Az‖² over z ∈ K by projected gradient descent.
///
/// Fixed step η = safety·m/(2‖A‖²_op) gives monotone descent. Convergence is
/// declared when ‖z_{k+1} − z_k‖ ≤ rel_tol·(1 + ‖z_k‖). Hitting max_iters is
/// not an error: the last iterate comes back with converged = false.
inline LassoSolution solve_lasso(const Matrix& a, const Vector& y, const ConstraintSet& set,
                                 const SolveOptions& opts = {}) {
  if (a.rows() != y.size()) throw InvalidDimension("A.rows() must equal y.size()");
  if (opts.max_iters < 1) throw InvalidParameter("max_iters must be >= 1");
  if (!(opts.rel_tol > 0.0)) throw InvalidParameter("rel_tol must be > 0");
  if (!(opts.safety_factor > 0.0)) throw InvalidParameter("safety_factor must be > 0");
  validate(set);
  const Index p = a.cols();
  const double m = double(a.rows());
  detail::LeastSquares f(a, y);

  Vector z = opts.init ? project(set, *opts.init).point : project(set, Vector::Zero(p)).point;
  if (z.size() != p) throw InvalidDimension("initial point has the wrong length");

  LassoSolution out;
  auto& diag = out.diag;
  const double lip_op = spectral_norm_sq(a);
  if (lip_op == 0.0) {
    // f is constant; every feasible point is optimal
    out.z = z;
    diag.objective = f.value(z);
    diag.converged = true;
    return out;
  }
  double eta = opts.safety_factor * m / (2.0 * lip_op);
  const bool backtrack = opts.step_rule == StepRule::Backtracking;
  double fz = f.value(z);
  if (opts.record_trace) diag.trace.push_back(fz);

  for (int k = 0; k < opts.max_iters; ++k) {
    const Vector grad = f.gradient(z);
    Vector z_next = project(set, z - eta * grad).point;
    if (backtrack) {
      // Armijo along the projection arc, halving from a doubled trial step
      eta *= 2.0;
      for (int h = 0; h < 60; ++h) {
        z_next = project(set, z - eta * grad).point;
        if (f.value(z_next) <= fz + 1e-4 * grad.dot(z_next - z)) break;
        eta *= 0.5;
      }
    }
    const double change = (z_next - z).norm();
    const double scale = 1.0 + z.norm();
    z = std::move(z_next);
    diag.iterations = k + 1;
    if (opts.record_trace || backtrack) fz = f.value(z);
    if (opts.record_trace) diag.trace.push_back(fz);
    if (change <= opts.rel_tol * scale) {
      diag.converged = true;
      break;
    }
  }
  diag.step = eta;
  diag.objective = f.value(z);
  diag.stationarity = (z - project(set, z - eta * f.gradient(z)).point).norm();
  out.z = std::move(z);
  return out;
}

}  // namespace nlcs
