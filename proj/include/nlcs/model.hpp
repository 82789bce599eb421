#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "nlcs/errors.hpp"
#include "nlcs/random.hpp"

namespace nlcs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Sorted index set S ⊂ {0, ..., p-1}.
struct SupportSet {
  Index p = 0;
  std::vector<Index> indices;

  Vector indicator() const {
    Vector v = Vector::Zero(p);
    for (Index j : indices) v[j] = 1.0;
    return v;
  }
  friend bool operator==(const SupportSet&, const SupportSet&) = default;
};

/// A ground-truth signal: a real vector, or an index set for variable selection.
using Signal = std::variant<Vector, SupportSet>;

inline Index signal_dim(const Signal& x) {
  return std::visit(
      [](const auto& v) -> Index {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Vector>)
          return v.size();
        else
          return v.p;
      },
      x);
}

/// Vector view of a signal; index sets become their indicator vector.
inline Vector signal_vector(const Signal& x) {
  if (const auto* v = std::get_if<Vector>(&x)) return *v;
  return std::get<SupportSet>(x).indicator();
}

// ---------------------------------------------------------------------------
// Signals

enum class SignalFamily { Sparse, GradientSparse, UnitSphere, Support };

struct SignalSpec {
  SignalFamily family = SignalFamily::Sparse;
  Index p = 1;
  Index s = 1;             // sparsity, or jump count for GradientSparse
  double delta_sep = 1.0;  // Δ ∈ (0,1], GradientSparse only
  double r_tune = 1.0;     // ‖x‖₁ = R (Sparse) or ‖Dx‖₁ = R (GradientSparse)
  std::optional<double> r_l2;  // ℓ₂ bound for GradientSparse (default 1)
};

/// Discrete gradient (x₂−x₁, ..., x_p−x_{p−1}).
inline Vector finite_difference(const Vector& x) {
  if (x.size() < 2) return Vector(0);
  return x.tail(x.size() - 1) - x.head(x.size() - 1);
}

inline double total_variation(const Vector& x) { return finite_difference(x).lpNorm<1>(); }

/// Jump positions ν with x[ν] ≠ x[ν−1].
inline std::vector<Index> jump_positions(const Vector& x, double tol = 0.0) {
  std::vector<Index> out;
  for (Index i = 1; i < x.size(); ++i)
    if (std::abs(x[i] - x[i - 1]) > tol) out.push_back(i);
  return out;
}

/// Smallest gap between consecutive jumps including the borders 0 and p.
inline Index min_jump_gap(const Vector& x, double tol = 0.0) {
  auto nu = jump_positions(x, tol);
  Index prev = 0, gap = x.size();
  for (Index v : nu) {
    gap = std::min(gap, v - prev);
    prev = v;
  }
  return std::min(gap, static_cast<Index>(x.size()) - prev);
}

namespace detail {

inline std::vector<Index> random_subset(Index p, Index s, Rng& rng) {
  std::vector<Index> all(static_cast<std::size_t>(p));
  std::iota(all.begin(), all.end(), Index{0});
  // partial Fisher-Yates
  for (Index i = 0; i < s; ++i) {
    std::uniform_int_distribution<Index> pick(i, p - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(s));
  std::sort(all.begin(), all.end());
  return all;
}

inline Vector gen_sparse(const SignalSpec& spec, Rng& rng) {
  if (spec.r_tune <= 0) throw InvalidParameter("sparse signal needs r_tune > 0");
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin;
  Vector x = Vector::Zero(spec.p);
  auto support = random_subset(spec.p, spec.s, rng);
  for (Index j : support) {
    double mag = 0.0;
    while (mag == 0.0) mag = std::abs(normal(rng));
    x[j] = coin(rng) ? mag : -mag;
  }
  x *= spec.r_tune / x.lpNorm<1>();
  return x;
}

inline Vector gen_unit_sphere(const SignalSpec& spec, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector x = Vector::Zero(spec.p);
  while (x.squaredNorm() == 0.0)
    for (Index j : random_subset(spec.p, spec.s, rng)) x[j] = normal(rng);
  return x / x.norm();
}

inline Vector gen_gradient_sparse(const SignalSpec& spec, Rng& rng) {
  const Index p = spec.p, s = spec.s;
  const double l2_cap = spec.r_l2.value_or(1.0);
  if (s == 0) {
    if (spec.r_tune != 0.0)
      throw ConstraintInfeasible("zero jumps force ‖Dx‖₁ = 0 but r_tune != 0");
    return Vector::Zero(p);
  }
  if (spec.r_tune <= 0) throw InvalidParameter("gradient-sparse signal needs r_tune > 0");
  if (!(spec.delta_sep > 0.0 && spec.delta_sep <= 1.0))
    throw InvalidParameter("delta_sep must lie in (0, 1]");
  const auto min_gap = static_cast<Index>(std::floor(spec.delta_sep * double(p) / double(s + 1)));
  if (min_gap < 1) throw ConstraintInfeasible("separation infeasible: floor(Δp/(s+1)) < 1");

  const Index base_gap = p / (s + 1);
  const Index jitter = (base_gap - min_gap) / 2;
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<Index> shift(-jitter, jitter);

  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<Index> nu(static_cast<std::size_t>(s));
    for (Index j = 1; j <= s; ++j) {
      const auto grid = static_cast<Index>(std::llround(double(j) * double(p) / double(s + 1)));
      nu[static_cast<std::size_t>(j - 1)] = grid + shift(rng);
    }
    std::vector<double> level(static_cast<std::size_t>(s + 1));
    for (auto& l : level) l = normal(rng);

    Vector x(p);
    std::size_t seg = 0;
    for (Index i = 0; i < p; ++i) {
      while (seg < nu.size() && i >= nu[seg]) ++seg;
      x[i] = level[seg];
    }
    const double tv = total_variation(x);
    if (tv == 0.0 || static_cast<Index>(jump_positions(x).size()) != s) continue;
    x *= spec.r_tune / tv;
    x.array() -= x.mean();
    if (x.norm() <= l2_cap) return x;
  }
  throw ConstraintInfeasible("could not meet ‖x‖₂ ≤ r_l2 with ‖Dx‖₁ = r_tune; lower r_tune");
}

}  // namespace detail

/// Draw a signal of the requested family. Pure function of (spec, seed).
inline Signal gen_signal(const SignalSpec& spec, Seed seed) {
  if (spec.p < 1) throw InvalidDimension("signal dimension p must be >= 1");
  const Index s_max = spec.family == SignalFamily::GradientSparse ? spec.p - 1 : spec.p;
  const Index s_min = spec.family == SignalFamily::GradientSparse ? 0 : 1;
  if (spec.s < s_min || spec.s > s_max) throw InvalidParameter("sparsity s out of range");
  Rng rng = make_rng(seed);
  switch (spec.family) {
    case SignalFamily::Sparse:
      return detail::gen_sparse(spec, rng);
    case SignalFamily::GradientSparse:
      return detail::gen_gradient_sparse(spec, rng);
    case SignalFamily::UnitSphere:
      return detail::gen_unit_sphere(spec, rng);
    case SignalFamily::Support:
      return SupportSet{spec.p, detail::random_subset(spec.p, spec.s, rng)};
  }
  throw InvalidParameter("unknown signal family");
}

// ---------------------------------------------------------------------------
// Measurements

enum class EnsembleLaw { Gaussian, Rademacher, UniformScaled };

struct MeasurementEnsemble {
  EnsembleLaw law = EnsembleLaw::Gaussian;
  Index p = 1;
  double subg_param = 1.0;  // informational only
};

/// Draw one centered unit-variance entry of the given law.
inline double draw_entry(EnsembleLaw law, Rng& rng) {
  switch (law) {
    case EnsembleLaw::Gaussian:
      return std::normal_distribution<double>{}(rng);
    case EnsembleLaw::Rademacher:
      return std::bernoulli_distribution{}(rng) ? 1.0 : -1.0;
    case EnsembleLaw::UniformScaled: {
      static const double kHalfWidth = std::sqrt(3.0);
      return std::uniform_real_distribution<double>{-kHalfWidth, kHalfWidth}(rng);
    }
  }
  return 0.0;
}

inline void fill_row(EnsembleLaw law, Rng& rng, Eigen::Ref<Vector> out) {
  for (Index j = 0; j < out.size(); ++j) out[j] = draw_entry(law, rng);
}

/// m×p matrix with i.i.d. rows a_i drawn from `ens`.
inline Matrix gen_matrix(const MeasurementEnsemble& ens, Index m, Seed seed) {
  if (m < 1) throw InvalidDimension("measurement count m must be >= 1");
  if (ens.p < 1) throw InvalidDimension("ensemble dimension p must be >= 1");
  Rng rng = make_rng(seed);
  Matrix a(m, ens.p);
  // row by row so a prefix of rows does not depend on m
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < ens.p; ++j) a(i, j) = draw_entry(ens.law, rng);
  return a;
}

// ---------------------------------------------------------------------------
// Observation models

namespace obs {

struct Linear {};
struct LinearGaussNoise {
  double sigma = 0.0;
};
struct OneBit {};
struct OneBitDither {
  double lambda = 1.0;
};
struct MultiBitDither {
  double delta = 1.0;
};
struct Modulo {
  double lambda = 1.0;
};

enum class Link { Identity, Sign, Tanh };

/// Single-index model y = f(⟨a, x⟩).
struct Sim {
  Link f = Link::Tanh;
  double gamma = 1.0;  // Lipschitz constant of f (informational)
};

/// y = Σ_j f_j(a_j x_j) with f_j(v) = v + gain·tanh(v).
/// Growth constants: α = β₁ = 1, β₂ = γ = 1 + gain.
struct CoordWise {
  double gain = 0.5;
  double alpha() const { return 1.0; }
  double beta1() const { return 1.0; }
  double beta2() const { return 1.0 + gain; }
  double gamma() const { return 1.0 + gain; }
  double apply(double v) const { return v + gain * std::tanh(v); }
};

/// y = f(a_S) with f(a_S) = s^{-1/2} Σ_{j∈S} h(a_j), h = identity or tanh.
struct VarSelect {
  enum class Kind { Linear, Tanh } kind = Kind::Linear;
  double apply(double a) const { return kind == Kind::Linear ? a : std::tanh(a); }
};

}  // namespace obs

using ObservationModel = std::variant<obs::Linear, obs::LinearGaussNoise, obs::OneBit,
                                      obs::OneBitDither, obs::MultiBitDither, obs::Modulo,
                                      obs::Sim, obs::CoordWise, obs::VarSelect>;

inline std::string link_name(obs::Link f) {
  switch (f) {
    case obs::Link::Identity:
      return "identity";
    case obs::Link::Sign:
      return "sign";
    case obs::Link::Tanh:
      return "tanh";
  }
  return "?";
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

inline std::string fmt_param(double v) {
  std::string s = std::to_string(v);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

/// Self-describing tag used in CSV rows, e.g. "multi_bit_dither(delta=0.125)".
inline std::string model_tag(const ObservationModel& model) {
  return std::visit(
      Overloaded{
          [](const obs::Linear&) { return std::string("linear"); },
          [](const obs::LinearGaussNoise& m) {
            return "linear_gauss_noise(sigma=" + fmt_param(m.sigma) + ")";
          },
          [](const obs::OneBit&) { return std::string("one_bit"); },
          [](const obs::OneBitDither& m) {
            return "one_bit_dither(lambda=" + fmt_param(m.lambda) + ")";
          },
          [](const obs::MultiBitDither& m) {
            return "multi_bit_dither(delta=" + fmt_param(m.delta) + ")";
          },
          [](const obs::Modulo& m) { return "modulo(lambda=" + fmt_param(m.lambda) + ")"; },
          [](const obs::Sim& m) { return "sim(f=" + link_name(m.f) + ")"; },
          [](const obs::CoordWise& m) { return "coord_wise(gain=" + fmt_param(m.gain) + ")"; },
          [](const obs::VarSelect& m) {
            return std::string(m.kind == obs::VarSelect::Kind::Linear ? "var_select(linear)"
                                                                      : "var_select(tanh)");
          },
      },
      model);
}

inline void validate(const ObservationModel& model) {
  std::visit(Overloaded{
                 [](const obs::LinearGaussNoise& m) {
                   if (!(m.sigma >= 0.0)) throw InvalidParameter("sigma must be >= 0");
                 },
                 [](const obs::OneBitDither& m) {
                   if (!(m.lambda > 0.0)) throw InvalidParameter("lambda must be > 0");
                 },
                 [](const obs::MultiBitDither& m) {
                   if (!(m.delta > 0.0)) throw InvalidParameter("delta must be > 0");
                 },
                 [](const obs::Modulo& m) {
                   if (!(m.lambda > 0.0)) throw InvalidParameter("lambda must be > 0");
                 },
                 [](const obs::CoordWise& m) {
                   if (!(m.gain >= 0.0)) throw InvalidParameter("coord-wise gain must be >= 0");
                 },
                 [](const auto&) {},
             },
             model);
}

/// Observations live in {−1, +1} (before corruption).
inline bool is_binary(const ObservationModel& model) {
  return std::holds_alternative<obs::OneBit>(model) ||
         std::holds_alternative<obs::OneBitDither>(model);
}

// ---------------------------------------------------------------------------
// Constraint sets

namespace cset {
struct L1Ball {
  double radius = 1.0;
};
struct L2Ball {
  double radius = 1.0;
};
/// {x : ‖Dx‖₁ ≤ radius}
struct TVBall {
  double radius = 1.0;
};
struct Box {
  double lo = -1.0;
  double hi = 1.0;
};
struct FullSpace {};
}  // namespace cset

using ConstraintSet = std::variant<cset::L1Ball, cset::L2Ball, cset::TVBall, cset::Box,
                                   cset::FullSpace>;

inline void validate(const ConstraintSet& set) {
  std::visit(Overloaded{
                 [](const cset::Box& b) {
                   if (!(b.lo <= b.hi)) throw InvalidParameter("box needs lo <= hi");
                 },
                 [](const cset::FullSpace&) {},
                 [](const auto& ball) {
                   if (!(ball.radius > 0.0)) throw InvalidParameter("radius must be > 0");
                 },
             },
             set);
}

// ---------------------------------------------------------------------------
// Corruption

enum class AdversarialMode { Random, AlignedWithSignal };

struct CorruptionSpec {
  double bitflip_frac = 0.0;     // β
  double l2_budget = 0.0;        // b: target (1/m Σν²)^{1/2}
  Index gross_outliers = 0;      // m₀
  double outlier_magnitude = 0.0;
  AdversarialMode mode = AdversarialMode::Random;

  bool empty() const { return bitflip_frac == 0.0 && l2_budget == 0.0 && gross_outliers == 0; }
};

// ---------------------------------------------------------------------------
// Target maps

namespace tmap {
struct ScaleBy {
  double mu = 1.0;
};
/// x ↦ μ·x/‖x‖₂
struct NormalizeScale {
  double mu = 1.0;
};
struct Identity {};
/// Monte-Carlo estimate of E[ỹ(x)·a].
struct MonteCarlo {
  ObservationModel model;
  MeasurementEnsemble ensemble;
  Index n = 100000;
  Seed seed = 0;
};
}  // namespace tmap

using TargetMap = std::variant<tmap::ScaleBy, tmap::NormalizeScale, tmap::Identity, tmap::MonteCarlo>;

struct TargetValue {
  Vector value;
  std::optional<Vector> stderr_;  // per-coordinate, MonteCarlo only
};

}  // namespace nlcs
