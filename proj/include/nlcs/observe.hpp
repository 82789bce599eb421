#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "nlcs/model.hpp"

namespace nlcs {

/// sign with the convention sign(0) = +1.
constexpr double sign_val(double u) noexcept { return u < 0.0 ? -1.0 : 1.0; }

/// Uniform quantizer q_δ(v) = (2⌈v/(2δ)⌉ − 1)δ: center of the cell (2kδ − 2δ, 2kδ].
inline double uniform_quantize(double v, double delta) {
  if (!(delta > 0.0)) throw InvalidParameter("quantizer resolution must be > 0");
  return (2.0 * std::ceil(v / (2.0 * delta)) - 1.0) * delta;
}

/// Modulo wrap m_λ(v) = v − ⌊(v+λ)/(2λ)⌋·2λ into [−λ, λ).
inline double modulo_val(double v, double lambda) {
  if (!(lambda > 0.0)) throw InvalidParameter("modulo half-period must be > 0");
  double r = v - std::floor((v + lambda) / (2.0 * lambda)) * 2.0 * lambda;
  // guard the half-open range against rounding at the upper edge
  if (r >= lambda) r -= 2.0 * lambda;
  if (r < -lambda) r += 2.0 * lambda;
  return r;
}

/// Scalar link of a single-index model.
inline double apply_link(obs::Link f, double u) {
  switch (f) {
    case obs::Link::Identity:
      return u;
    case obs::Link::Sign:
      return sign_val(u);
    case obs::Link::Tanh:
      return std::tanh(u);
  }
  return u;
}

/// Law of the per-measurement auxiliary variable (dither or additive noise).
inline bool uses_dither(const ObservationModel& model) {
  return std::holds_alternative<obs::OneBitDither>(model) ||
         std::holds_alternative<obs::MultiBitDither>(model) ||
         std::holds_alternative<obs::LinearGaussNoise>(model);
}

inline double draw_dither(const ObservationModel& model, Rng& rng) {
  return std::visit(
      Overloaded{
          [&](const obs::OneBitDither& m) {
            return std::uniform_real_distribution<double>{-m.lambda, m.lambda}(rng);
          },
          [&](const obs::MultiBitDither& m) {
            return std::uniform_real_distribution<double>{-m.delta, m.delta}(rng);
          },
          [&](const obs::LinearGaussNoise& m) {
            return m.sigma == 0.0 ? 0.0 : std::normal_distribution<double>{0.0, m.sigma}(rng);
          },
          [](const auto&) { return 0.0; },
      },
      model);
}

/// True for models whose output depends on (a, x) only through ⟨a, x⟩.
inline bool is_single_index(const ObservationModel& model) {
  return !std::holds_alternative<obs::CoordWise>(model) &&
         !std::holds_alternative<obs::VarSelect>(model);
}

/// Output of a single-index model given u = ⟨a, x⟩ and dither τ.
inline double scalar_output(const ObservationModel& model, double u, double tau) {
  return std::visit(
      Overloaded{
          [&](const obs::Linear&) { return u; },
          [&](const obs::LinearGaussNoise&) { return u + tau; },
          [&](const obs::OneBit&) { return sign_val(u); },
          [&](const obs::OneBitDither&) { return sign_val(u + tau); },
          [&](const obs::MultiBitDither& m) { return uniform_quantize(u + tau, m.delta); },
          [&](const obs::Modulo& m) { return modulo_val(u, m.lambda); },
          [&](const obs::Sim& m) { return apply_link(m.f, u); },
          [](const auto&) -> double {
            throw ModelMismatch("model is not a function of <a, x> alone");
          },
      },
      model);
}

/// Clean output ỹ for one measurement row `a` and realized dither `tau`.
template <class Row>
double output_value(const ObservationModel& model, const Row& a, const Signal& x, double tau) {
  if (const auto* m = std::get_if<obs::VarSelect>(&model)) {
    const auto* s = std::get_if<SupportSet>(&x);
    if (s == nullptr) throw ModelMismatch("variable selection needs an index-set signal");
    if (s->indices.empty()) return 0.0;
    double acc = 0.0;
    for (Index j : s->indices) acc += m->apply(a[j]);
    return acc / std::sqrt(double(s->indices.size()));
  }
  const auto* v = std::get_if<Vector>(&x);
  if (v == nullptr) throw ModelMismatch("model needs a vector signal, got an index set");
  if (const auto* m = std::get_if<obs::CoordWise>(&model)) {
    double acc = 0.0;
    for (Index j = 0; j < v->size(); ++j) acc += m->apply(a[j] * (*v)[j]);
    return acc;
  }
  return scalar_output(model, a.dot(*v), tau);
}

struct CorruptionEvent {
  enum class Kind { BitFlip, L2Noise, GrossOutlier };
  Index index;
  Kind kind;
  double amount;  // y − ỹ contribution of this event
};

struct CorruptionLog {
  std::vector<CorruptionEvent> events;

  Index count(CorruptionEvent::Kind k) const {
    return static_cast<Index>(std::count_if(events.begin(), events.end(),
                                            [k](const auto& e) { return e.kind == k; }));
  }
  /// (1/m Σ ν_i²)^{1/2} over the ℓ₂-mode events.
  double l2_rms(Index m) const {
    double acc = 0.0;
    for (const auto& e : events)
      if (e.kind == CorruptionEvent::Kind::L2Noise) acc += e.amount * e.amount;
    return std::sqrt(acc / double(m));
  }
};

struct ObservationBatch {
  Vector clean;                  // ỹ(x̊)
  Vector corrupted;              // y
  std::optional<Vector> dither;  // τ (dithered / noisy models)
  CorruptionLog corruption_log;
};

/// Clean observations ỹ(x) for every row of A. Dither is drawn from `seed`
/// only, so it is independent of A.
inline ObservationBatch observe(const ObservationModel& model, const Matrix& a, const Signal& x,
                                Seed seed) {
  validate(model);
  if (signal_dim(x) != a.cols()) throw InvalidDimension("signal length does not match A.cols()");
  const Index m = a.rows();
  ObservationBatch out;
  out.clean.resize(m);
  Rng rng = make_rng(seed);
  const bool dithered = uses_dither(model);
  if (dithered) out.dither = Vector(m);
  Vector ax;
  if (is_single_index(model)) {
    const auto* v = std::get_if<Vector>(&x);
    if (v == nullptr) throw ModelMismatch("model needs a vector signal, got an index set");
    ax = a * (*v);
  }
  for (Index i = 0; i < m; ++i) {
    const double tau = dithered ? draw_dither(model, rng) : 0.0;
    if (dithered) (*out.dither)[i] = tau;
    out.clean[i] = ax.size() > 0 ? scalar_output(model, ax[i], tau)
                                 : output_value(model, a.row(i).transpose(), x, tau);
  }
  out.corrupted = out.clean;
  return out;
}

namespace detail {
inline std::vector<Index> sample_without_replacement(Index m, Index k, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(m));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, m - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}
}  // namespace detail

inline Index bitflip_count(const CorruptionSpec& spec, Index m) {
  return static_cast<Index>(std::floor(spec.bitflip_frac * double(m) + 1e-9));
}

/// Apply the corruption recipe to clean observations.
///
/// Bit flips negate exactly ⌊βm⌋ entries (difference ±2). The ℓ₂ mode adds
/// ν with (1/m Σν²)^{1/2} = b exactly in Random mode, and ν_i = b·⟨a_i, x⟩ in
/// AlignedWithSignal mode. Gross outliers shift exactly m₀ entries by
/// ±outlier_magnitude. Random mode picks victims uniformly without
/// replacement; aligned mode flips the entries with largest |⟨a_i, x⟩| and
/// pushes outliers against sign⟨a_i, x⟩.
inline ObservationBatch corrupt(const Vector& clean, const CorruptionSpec& spec,
                                const ObservationModel& model, const Signal& x, const Matrix& a,
                                Seed seed) {
  const Index m = clean.size();
  if (!(spec.bitflip_frac >= 0.0 && spec.bitflip_frac <= 1.0))
    throw InvalidParameter("bitflip_frac must lie in [0, 1]");
  if (!(spec.l2_budget >= 0.0)) throw InvalidParameter("l2_budget must be >= 0");
  if (spec.gross_outliers < 0 || spec.gross_outliers > m)
    throw InvalidParameter("gross_outliers must lie in [0, m]");
  if (a.rows() != m) throw InvalidDimension("A.rows() must equal observation length");

  ObservationBatch out;
  out.clean = clean;
  out.corrupted = clean;
  Rng rng = make_rng(seed);
  const bool aligned = spec.mode == AdversarialMode::AlignedWithSignal;
  Vector ax;
  if (aligned) ax = a * signal_vector(x);

  const Index flips = bitflip_count(spec, m);
  if (flips > 0) {
    if (!is_binary(model)) throw ModelMismatch("bit flips requested on non-binary observations");
    std::vector<Index> victims;
    if (aligned) {
      victims.resize(static_cast<std::size_t>(m));
      std::iota(victims.begin(), victims.end(), Index{0});
      std::stable_sort(victims.begin(), victims.end(),
                       [&](Index i, Index j) { return std::abs(ax[i]) > std::abs(ax[j]); });
      victims.resize(static_cast<std::size_t>(flips));
    } else {
      victims = detail::sample_without_replacement(m, flips, rng);
    }
    for (Index i : victims) {
      const double before = out.corrupted[i];
      out.corrupted[i] = -before;
      out.corruption_log.events.push_back({i, CorruptionEvent::Kind::BitFlip, -2.0 * before});
    }
  }

  if (spec.l2_budget > 0.0) {
    Vector nu(m);
    if (aligned) {
      nu = spec.l2_budget * ax;
    } else {
      std::normal_distribution<double> normal;
      do {
        for (Index i = 0; i < m; ++i) nu[i] = normal(rng);
      } while (nu.squaredNorm() == 0.0);
      nu *= spec.l2_budget * std::sqrt(double(m)) / nu.norm();
    }
    for (Index i = 0; i < m; ++i) {
      out.corrupted[i] += nu[i];
      out.corruption_log.events.push_back({i, CorruptionEvent::Kind::L2Noise, nu[i]});
    }
  }

  if (spec.gross_outliers > 0) {
    auto victims = detail::sample_without_replacement(m, spec.gross_outliers, rng);
    std::bernoulli_distribution coin;
    for (Index i : victims) {
      const double dir = aligned ? -sign_val(ax[i]) : (coin(rng) ? 1.0 : -1.0);
      const double amount = dir * spec.outlier_magnitude;
      out.corrupted[i] += amount;
      out.corruption_log.events.push_back({i, CorruptionEvent::Kind::GrossOutlier, amount});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target maps

/// Monte-Carlo estimate of E[ỹ(x)·a] with per-coordinate standard errors
/// (1.96·sd/√n).
inline TargetValue monte_carlo_correlation(const ObservationModel& model,
                                           const MeasurementEnsemble& ens, const Signal& x,
                                           Index n, Seed seed) {
  if (n < 2) throw InvalidParameter("Monte-Carlo sample count must be >= 2");
  const Index p = signal_dim(x);
  if (ens.p != p) throw InvalidDimension("ensemble dimension does not match the signal");
  Rng rng_a = make_rng(derive_seed(seed, "rows"));
  Rng rng_tau = make_rng(derive_seed(seed, "dither"));
  const bool dithered = uses_dither(model);
  Vector mean = Vector::Zero(p), m2 = Vector::Zero(p), row(p);
  for (Index k = 0; k < n; ++k) {
    fill_row(ens.law, rng_a, row);
    const double tau = dithered ? draw_dither(model, rng_tau) : 0.0;
    const double y = output_value(model, row, x, tau);
    // Welford update, coordinatewise
    const Vector sample = y * row;
    const Vector d = sample - mean;
    mean += d / double(k + 1);
    m2 += d.cwiseProduct(sample - mean);
  }
  Vector se = (m2 / double(n - 1)).cwiseSqrt() * (1.96 / std::sqrt(double(n)));
  return {mean, se};
}

inline TargetValue target_of(const TargetMap& t, const Signal& x) {
  return std::visit(
      Overloaded{
          [&](const tmap::ScaleBy& s) { return TargetValue{s.mu * signal_vector(x), {}}; },
          [&](const tmap::Identity&) { return TargetValue{signal_vector(x), {}}; },
          [&](const tmap::NormalizeScale& s) {
            const Vector v = signal_vector(x);
            const double nrm = v.norm();
            if (nrm == 0.0) throw DegenerateInput("cannot normalize the zero vector");
            return TargetValue{s.mu * v / nrm, {}};
          },
          [&](const tmap::MonteCarlo& mc) {
            return monte_carlo_correlation(mc.model, mc.ensemble, x, mc.n, mc.seed);
          },
      },
      t);
}

}  // namespace nlcs
