#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nlcs/geometry.hpp"
#include "nlcs/model.hpp"
#include "nlcs/observe.hpp"

namespace nlcs {

// ---------------------------------------------------------------------------
// Quadrature

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {
// Golub-Welsch on a symmetric tridiagonal Jacobi matrix with zero diagonal.
template <class OffDiag>
QuadratureRule golub_welsch(int n, OffDiag off_diag, double mu0) {
  Matrix j = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = off_diag(k);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(j);
  QuadratureRule rule;
  for (int k = 0; k < n; ++k) {
    rule.nodes.push_back(eig.eigenvalues()[k]);
    const double v0 = eig.eigenvectors()(0, k);
    rule.weights.push_back(mu0 * v0 * v0);
  }
  return rule;
}
}  // namespace detail

/// Nodes/weights with Σ w_i h(x_i) ≈ E[h(g)], g ~ N(0,1) (probabilists' Hermite).
inline QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw InvalidParameter("quadrature needs at least one node");
  return detail::golub_welsch(n, [](int k) { return std::sqrt(double(k)); }, 1.0);
}

/// Gauss-Legendre rule on [−1, 1].
inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw InvalidParameter("quadrature needs at least one node");
  return detail::golub_welsch(
      n, [](int k) { return double(k) / std::sqrt(4.0 * double(k) * double(k) - 1.0); }, 2.0);
}

inline double normal_pdf(double x) {
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);
  return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// ---------------------------------------------------------------------------
// Target scalars μ = E[f(g)g]

/// Built-in scalar non-linearities with a known breakpoint structure.
struct Nonlinearity {
  enum class Kind { Identity, Sign, Tanh, Modulo } kind = Kind::Identity;
  double lambda = 1.0;  // Modulo half-period

  double operator()(double u) const {
    switch (kind) {
      case Kind::Identity:
        return u;
      case Kind::Sign:
        return sign_val(u);
      case Kind::Tanh:
        return std::tanh(u);
      case Kind::Modulo:
        return modulo_val(u, lambda);
    }
    return u;
  }

  /// Discontinuities inside [−limit, limit].
  std::vector<double> breakpoints(double limit) const {
    std::vector<double> out;
    if (kind == Kind::Sign) out.push_back(0.0);
    if (kind == Kind::Modulo)
      for (double b = lambda; b < limit; b += 2.0 * lambda) {
        out.push_back(b);
        out.push_back(-b);
      }
    std::sort(out.begin(), out.end());
    return out;
  }

  static Nonlinearity from_link(obs::Link l) {
    switch (l) {
      case obs::Link::Identity:
        return {Kind::Identity};
      case obs::Link::Sign:
        return {Kind::Sign};
      case obs::Link::Tanh:
        return {Kind::Tanh};
    }
    return {};
  }
};

/// Composite Gauss-Legendre quadrature; `nodes` per panel.
struct QuadratureMethod {
  int nodes = 32;
};
struct MonteCarloMethod {
  Index n = 1000000;
  Seed seed = 0;
};
using ExpectationMethod = std::variant<QuadratureMethod, MonteCarloMethod>;

struct ScalarTarget {
  double mu = 0.0;
  ExpectationMethod method;
  std::optional<double> stderr_;  // Monte Carlo only
};

/// E[h(g)] for g ~ N(0,1) by composite Gauss-Legendre against the normal
/// density on [−12, 12] (neglected mass < 1e−32). Panels have unit width and
/// are additionally split at `breaks`, so integrands with jumps stay
/// piecewise smooth on every panel.
template <class H>
double gaussian_expectation(const H& h, const std::vector<double>& breaks, int nodes) {
  constexpr double kLimit = 12.0;
  std::vector<double> edges;
  for (int k = -12; k <= 12; ++k) edges.push_back(double(k));
  for (double b : breaks)
    if (b > -kLimit && b < kLimit) edges.push_back(b);
  std::sort(edges.begin(), edges.end());
  const auto rule = gauss_legendre(nodes);
  double acc = 0.0;
  for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
    const double a = edges[e], b = edges[e + 1];
    if (!(b > a)) continue;
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double x = mid + half * rule.nodes[i];
      acc += half * rule.weights[i] * h(x) * normal_pdf(x);
    }
  }
  return acc;
}

inline ScalarTarget mu_scalar(const Nonlinearity& f, const ExpectationMethod& method = QuadratureMethod{}) {
  if (f.kind == Nonlinearity::Kind::Modulo && !(f.lambda > 0.0))
    throw InvalidParameter("modulo half-period must be > 0");
  return std::visit(
      Overloaded{
          [&](const QuadratureMethod& q) {
            const double mu =
                gaussian_expectation([&](double u) { return f(u) * u; }, f.breakpoints(12.0), q.nodes);
            return ScalarTarget{mu, q, std::nullopt};
          },
          [&](const MonteCarloMethod& mc) {
            if (mc.n < 2) throw InvalidParameter("Monte-Carlo needs n >= 2");
            Rng rng = make_rng(mc.seed);
            std::normal_distribution<double> normal;
            double mean = 0.0, m2 = 0.0;
            for (Index k = 0; k < mc.n; ++k) {
              const double g = normal(rng);
              const double v = f(g) * g;
              const double d = v - mean;
              mean += d / double(k + 1);
              m2 += d * (v - mean);
            }
            const double se = 1.96 * std::sqrt(m2 / double(mc.n - 1) / double(mc.n));
            return ScalarTarget{mean, mc, se};
          },
      },
      method);
}

/// Per-coordinate factor c with T S = c·s^{-1/2}·1_S for variable selection.
inline double var_select_scale(const obs::VarSelect& m, EnsembleLaw law) {
  if (m.kind == obs::VarSelect::Kind::Linear) return 1.0;
  switch (law) {
    case EnsembleLaw::Gaussian:
      return gaussian_expectation([](double u) { return std::tanh(u) * u; }, {}, 32);
    case EnsembleLaw::Rademacher:
      return std::tanh(1.0);
    case EnsembleLaw::UniformScaled: {
      const double h = std::sqrt(3.0);
      const auto rule = gauss_legendre(64);
      double acc = 0.0;
      for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double u = h * rule.nodes[i];
        acc += rule.weights[i] * std::tanh(u) * u;
      }
      return acc / 2.0;
    }
  }
  return 1.0;
}

/// Natural target map of each observation model.
///
/// Linear/noisy/multi-bit → identity; 1-bit → √(2/π)x/‖x‖; dithered 1-bit →
/// x/λ; modulo and single-index models → μ·x/‖x‖; variable selection →
/// c·s^{-1/2}1_S; coordinate-wise distortions → Monte-Carlo E[ỹ(x)a].
inline TargetMap default_target(const ObservationModel& model, const MeasurementEnsemble& ens,
                                Index mc_samples = 200000, Seed mc_seed = 0) {
  return std::visit(
      Overloaded{
          [](const obs::Linear&) -> TargetMap { return tmap::Identity{}; },
          [](const obs::LinearGaussNoise&) -> TargetMap { return tmap::Identity{}; },
          [](const obs::MultiBitDither&) -> TargetMap { return tmap::Identity{}; },
          [](const obs::OneBit&) -> TargetMap {
            return tmap::NormalizeScale{std::sqrt(2.0 / M_PI)};
          },
          [](const obs::OneBitDither& m) -> TargetMap { return tmap::ScaleBy{1.0 / m.lambda}; },
          [](const obs::Modulo& m) -> TargetMap {
            return tmap::NormalizeScale{mu_scalar({Nonlinearity::Kind::Modulo, m.lambda}).mu};
          },
          [](const obs::Sim& m) -> TargetMap {
            return tmap::NormalizeScale{mu_scalar(Nonlinearity::from_link(m.f)).mu};
          },
          [&](const obs::CoordWise&) -> TargetMap {
            return tmap::MonteCarlo{model, ens, mc_samples, mc_seed};
          },
          [](const obs::VarSelect&) -> TargetMap { return tmap::Identity{}; },
      },
      model);
}

/// Target vector of a signal under `model`; index sets are handled through
/// their scaled indicator.
inline Vector model_target(const ObservationModel& model, const MeasurementEnsemble& ens,
                           const Signal& x, Seed mc_seed = 0) {
  if (const auto* vs = std::get_if<obs::VarSelect>(&model)) {
    const auto* s = std::get_if<SupportSet>(&x);
    if (s == nullptr) throw ModelMismatch("variable selection needs an index-set signal");
    const double k = s->indices.empty() ? 1.0 : std::sqrt(double(s->indices.size()));
    return var_select_scale(*vs, ens.law) / k * s->indicator();
  }
  return target_of(default_target(model, ens, 200000, mc_seed), x).value;
}

// ---------------------------------------------------------------------------
// Target mismatch ρ(x) = ‖E[ỹ(x)a] − Tx‖₂

struct MismatchEstimate {
  double rho_hat = 0.0;
  double stderr_ = 0.0;  // ‖per-coordinate stderr vector‖₂
  Index n_samples = 0;
};

inline MismatchEstimate target_mismatch(const ObservationModel& model,
                                        const MeasurementEnsemble& ens, const Signal& x,
                                        const Vector& tx, Index n, Seed seed) {
  if (n < 1000) throw InvalidParameter("target mismatch needs n >= 1000");
  if (tx.size() != signal_dim(x)) throw InvalidDimension("Tx length does not match the signal");
  const TargetValue mc = monte_carlo_correlation(model, ens, x, n, seed);
  return {(mc.value - tx).norm(), mc.stderr_->norm(), n};
}

// ---------------------------------------------------------------------------
// Mean widths

enum class WidthKind { Global, Local, ConicApprox };

struct WidthEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  Index n_samples = 0;
  WidthKind kind = WidthKind::Global;
  double t = 0.0;  // scale of Local / ConicApprox
};

namespace width {
/// A constraint set in ℝ^p, maximized through support_max.
struct Convex {
  ConstraintSet set;
  Index p = 1;
};
struct Sphere {
  Index p = 1;
};
/// Finite set; columns are the points.
struct PointCloud {
  Matrix points;
};
}  // namespace width

using WidthSet = std::variant<width::Convex, width::Sphere, width::PointCloud>;

namespace detail {
struct RunningMean {
  double mean = 0.0, m2 = 0.0;
  Index n = 0;
  void push(double v) {
    ++n;
    const double d = v - mean;
    mean += d / double(n);
    m2 += d * (v - mean);
  }
  /// 1.96·sd/√n
  double stderr_() const { return n > 1 ? 1.96 * std::sqrt(m2 / double(n - 1) / double(n)) : 0.0; }
};

inline Index width_dim(const WidthSet& s) {
  return std::visit(Overloaded{
                        [](const width::Convex& c) { return c.p; },
                        [](const width::Sphere& c) { return c.p; },
                        [](const width::PointCloud& c) { return c.points.rows(); },
                    },
                    s);
}

/// sup_{v∈H} ⟨g, v⟩. Point clouds are measured relative to their first
/// point, which leaves the expectation unchanged and makes singletons
/// exactly zero.
inline double sup_inner(const WidthSet& s, const Vector& g) {
  return std::visit(Overloaded{
                        [&](const width::Convex& c) { return support_max(c.set, kNoCap, g).value; },
                        [&](const width::Sphere&) { return g.norm(); },
                        [&](const width::PointCloud& c) {
                          const Vector proj = c.points.transpose() * g;
                          return proj.maxCoeff() - proj[0];
                        },
                    },
                    s);
}
}  // namespace detail

/// Monte-Carlo w(H) = E sup_{v∈H} ⟨g, v⟩.
inline WidthEstimate mean_width_global(const WidthSet& set, Index n, Seed seed) {
  if (n < 2) throw InvalidParameter("mean width needs n >= 2");
  if (const auto* pc = std::get_if<width::PointCloud>(&set); pc && pc->points.cols() == 0)
    throw InvalidParameter("empty point cloud");
  const Index p = detail::width_dim(set);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal;
  Vector g(p);
  detail::RunningMean acc;
  for (Index k = 0; k < n; ++k) {
    for (Index j = 0; j < p; ++j) g[j] = normal(rng);
    acc.push(detail::sup_inner(set, g));
  }
  return {acc.mean, acc.stderr_(), n, WidthKind::Global, 0.0};
}

/// Monte-Carlo local width at scale t, using the ball-capped proxy
/// (1/t)·E sup{⟨g, v⟩ : v ∈ K − center, ‖v‖₂ ≤ t}. This upper-bounds the
/// spherical version.
inline WidthEstimate mean_width_local(const ConstraintSet& set, const Vector& center, double t,
                                      Index n, Seed seed) {
  if (!(t > 0.0)) throw InvalidParameter("local width needs t > 0");
  if (n < 2) throw InvalidParameter("mean width needs n >= 2");
  if (!contains(set, center, 1e-9)) throw ConstraintInfeasible("center lies outside the set");
  const Index p = center.size();
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal;
  Vector g(p);
  detail::RunningMean acc;
  for (Index k = 0; k < n; ++k) {
    for (Index j = 0; j < p; ++j) g[j] = normal(rng);
    acc.push(support_max_shifted(set, center, t, g).value / t);
  }
  return {acc.mean, acc.stderr_(), n, WidthKind::Local, t};
}

/// Conic width proxy: local width at t = 1e−3·diam. Approximate.
inline WidthEstimate mean_width_conic_approx(const ConstraintSet& set, const Vector& center,
                                             double diam, Index n, Seed seed) {
  auto w = mean_width_local(set, center, 1e-3 * diam, n, seed);
  w.kind = WidthKind::ConicApprox;
  return w;
}

struct DecouplingProbe {
  double lhs = 0.0;         // E max_c (1/t) sup{⟨g,v⟩ : v ∈ K − c, ‖v‖ ≤ t}
  double lhs_stderr = 0.0;
  double local_sup = 0.0;   // max_c of the per-center local widths
  double global_width = 0.0;  // w(L)
  double rhs = 0.0;         // local_sup + w(L)/t
  double ratio = 0.0;       // lhs / rhs
};

/// Compares the local width of a union of centers with the decoupled bound
/// sup_c w_t(K − c) + t⁻¹·w(L). All terms share the same Gaussian draws.
inline DecouplingProbe decoupling_probe(const ConstraintSet& set,
                                        const std::vector<Vector>& centers, double t, Index n,
                                        Seed seed) {
  if (centers.empty()) throw InvalidParameter("decoupling probe needs at least one center");
  if (!(t > 0.0)) throw InvalidParameter("decoupling probe needs t > 0");
  const Index p = centers.front().size();
  for (const auto& c : centers)
    if (!contains(set, c, 1e-9)) throw ConstraintInfeasible("center lies outside the set");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal;
  Vector g(p);
  detail::RunningMean lhs, glob;
  std::vector<detail::RunningMean> per(centers.size());
  for (Index k = 0; k < n; ++k) {
    for (Index j = 0; j < p; ++j) g[j] = normal(rng);
    double best = -std::numeric_limits<double>::infinity();
    double best_inner = -std::numeric_limits<double>::infinity();
    const double base = g.dot(centers.front());
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double v = support_max_shifted(set, centers[c], t, g).value / t;
      per[c].push(v);
      best = std::max(best, v);
      best_inner = std::max(best_inner, g.dot(centers[c]) - base);
    }
    lhs.push(best);
    glob.push(best_inner);
  }
  DecouplingProbe out;
  out.lhs = lhs.mean;
  out.lhs_stderr = lhs.stderr_();
  for (const auto& r : per) out.local_sup = std::max(out.local_sup, r.mean);
  out.global_width = glob.mean;
  out.rhs = out.local_sup + out.global_width / t;
  out.ratio = out.rhs > 0.0 ? out.lhs / out.rhs : (out.lhs > 0.0 ? INFINITY : 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Outlier norms

struct OutlierSplit {
  double top_sq = 0.0;   // ‖w‖²_[m₀]
  double tail_sq = 0.0;  // σ_{m₀}(w)₂²
};

namespace detail {
/// Neumaier-compensated sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      c_ += (sum_ - t) + v;
    else
      c_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + c_; }

 private:
  double sum_ = 0.0, c_ = 0.0;
};
}  // namespace detail

/// Split ‖w‖² into the m₀ largest-magnitude entries and the rest.
inline OutlierSplit outlier_split(const Vector& w, Index m0) {
  if (m0 < 0 || m0 > w.size()) throw InvalidParameter("m0 must lie in [0, m]");
  std::vector<double> mag(static_cast<std::size_t>(w.size()));
  for (Index i = 0; i < w.size(); ++i) mag[static_cast<std::size_t>(i)] = std::abs(w[i]);
  std::nth_element(mag.begin(), mag.begin() + m0, mag.end(), std::greater<>());
  detail::CompensatedSum top, tail;
  for (Index i = 0; i < w.size(); ++i) {
    const double v = mag[static_cast<std::size_t>(i)];
    (i < m0 ? top : tail).add(v * v);
  }
  return {top.value(), tail.value()};
}

/// ℓ₂ norm of the m₀ largest-magnitude entries.
inline double top_norm(const Vector& w, Index m0) { return std::sqrt(outlier_split(w, m0).top_sq); }

/// ℓ₂ error of the best m₀-term approximation.
inline double tail_norm(const Vector& w, Index m0) {
  return std::sqrt(outlier_split(w, m0).tail_sq);
}

// ---------------------------------------------------------------------------
// Error metrics and support recovery

/// ‖z − μ·x/‖x‖₂‖₂
inline double direction_error(const Vector& z, const Vector& x, double mu) {
  const double nrm = x.norm();
  if (nrm == 0.0) throw DegenerateInput("direction error of the zero signal");
  return (z - (mu / nrm) * x).norm();
}

/// Indices of the s largest |z_j|, ties to the lowest index.
inline SupportSet support_recover(const Vector& z, Index s) {
  if (s < 1 || s > z.size()) throw InvalidParameter("support size must lie in [1, p]");
  std::vector<Index> idx(static_cast<std::size_t>(z.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return std::abs(z[a]) > std::abs(z[b]); });
  idx.resize(static_cast<std::size_t>(s));
  std::sort(idx.begin(), idx.end());
  return {z.size(), idx};
}

/// Indices of the nonzero entries.
inline SupportSet support_of(const Vector& x, double tol = 0.0) {
  SupportSet s{x.size(), {}};
  for (Index j = 0; j < x.size(); ++j)
    if (std::abs(x[j]) > tol) s.indices.push_back(j);
  return s;
}

// ---------------------------------------------------------------------------
// Local stability

struct StabilityProbe {
  double top_max = 0.0;   // max over pairs of ‖ỹ(x) − ỹ(x')‖_[2m₀] / √m
  double tail_max = 0.0;  // max over pairs of σ_{m₀}(ỹ(x) − ỹ(x'))₂ / √m
};

/// Empirical maxima of the two noise functionals over the supplied pairs.
/// Both members of a pair see the same A and the same dither draw.
inline StabilityProbe local_stability_probe(const ObservationModel& model,
                                            const std::vector<std::pair<Signal, Signal>>& pairs,
                                            const Matrix& a, Index m0, Seed dither_seed) {
  const Index m = a.rows();
  if (m0 < 0 || 2 * m0 > m) throw InvalidParameter("m0 must lie in [0, m/2]");
  StabilityProbe out;
  const double root_m = std::sqrt(double(m));
  for (const auto& [x, xp] : pairs) {
    const Vector d = observe(model, a, x, dither_seed).clean - observe(model, a, xp, dither_seed).clean;
    out.top_max = std::max(out.top_max, top_norm(d, 2 * m0) / root_m);
    out.tail_max = std::max(out.tail_max, tail_norm(d, m0) / root_m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rate fits

struct RatePoint {
  double m = 0.0;
  double error = 0.0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;  // log(error) at log(m) = 0
  std::size_t used = 0;
  std::vector<std::string> warnings;
};

/// Least-squares slope of log(error) against log(m). Non-positive errors are
/// dropped with a warning. `window` keeps only the points with the largest m.
inline RateFit fit_rate(std::vector<RatePoint> points, std::optional<std::size_t> window = {}) {
  RateFit fit;
  std::vector<RatePoint> kept;
  for (const auto& pt : points) {
    if (!(pt.error > 0.0) || !(pt.m > 0.0)) {
      fit.warnings.push_back("excluded non-positive point at m=" + std::to_string(pt.m));
      continue;
    }
    kept.push_back(pt);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.m < b.m; });
  if (window && *window < kept.size())
    kept.erase(kept.begin(), kept.end() - static_cast<std::ptrdiff_t>(*window));
  if (kept.empty()) throw FitImpossible("no positive error values to fit");
  if (kept.front().m == kept.back().m) throw FitImpossible("need at least two distinct m");
  double sx = 0, sy = 0;
  for (const auto& pt : kept) {
    sx += std::log(pt.m);
    sy += std::log(pt.error);
  }
  const double n = double(kept.size());
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& pt : kept) {
    const double dx = std::log(pt.m) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(pt.error) - my);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.used = kept.size();
  return fit;
}

}  // namespace nlcs
