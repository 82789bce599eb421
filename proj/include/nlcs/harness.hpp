#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "nlcs/analysis.hpp"
#include "nlcs/geometry.hpp"
#include "nlcs/model.hpp"
#include "nlcs/observe.hpp"
#include "nlcs/solver.hpp"

namespace nlcs {

using Json = nlohmann::json;

/// Constraint recipe; a missing radius means "tuned": the radius is the
/// set's norm of the trial's target vector, times radius_scale.
struct ConstraintSpec {
  enum class Kind { L1Ball, L2Ball, TVBall, Box, FullSpace } kind = Kind::L1Ball;
  std::optional<double> radius;
  double radius_scale = 1.0;
  double lo = -1.0, hi = 1.0;  // Box

  ConstraintSet resolve(const Vector& target) const {
    auto r = [&](auto tag) {
      decltype(tag) set;
      set.radius = radius ? *radius : radius_scale * set_norm(ConstraintSet{tag}, target);
      if (!(set.radius > 0.0)) set.radius = std::numeric_limits<double>::min();
      return ConstraintSet{set};
    };
    switch (kind) {
      case Kind::L1Ball:
        return r(cset::L1Ball{});
      case Kind::L2Ball:
        return r(cset::L2Ball{});
      case Kind::TVBall:
        return r(cset::TVBall{});
      case Kind::Box:
        return cset::Box{lo, hi};
      case Kind::FullSpace:
        return cset::FullSpace{};
    }
    return cset::FullSpace{};
  }
};

struct ExperimentConfig {
  std::string name = "experiment";
  ObservationModel model = obs::Linear{};
  MeasurementEnsemble ensemble;  // p mirrors signal.p
  SignalSpec signal;
  ConstraintSpec constraint;
  std::vector<Index> m_grid;
  int trials = 1;
  CorruptionSpec corruption;
  SolveOptions solver;
  Seed master_seed = 0;
  double t = 0.1;  // accuracy target
  std::string output;
  bool record_timing = false;
};

struct TrialRecord {
  std::string model;
  Index p = 0, s = 0, m = 0;
  int trial = 0;
  Seed seed = 0;
  double err_l2 = 0.0;
  double err_direction = 0.0;
  bool support_match = false;
  int iterations = 0;
  bool converged = false;
  double wall_ms = 0.0;
};

/// Stable per-trial seed: hash of (master_seed, m, trial).
inline Seed trial_seed(Seed master, Index m, int trial) {
  return derive_seed(master, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(trial));
}

// ---------------------------------------------------------------------------
// Config schema

namespace config_detail {

class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const Json& json() const { return j_; }
  const std::string& path() const { return path_; }
  [[noreturn]] void fail(const std::string& what) const { throw SchemaError(path_, what); }

  Reader child(const std::string& key) const {
    if (!j_.is_object() || !j_.contains(key)) fail("missing required field '" + key + "'");
    return {j_.at(key), path_ + "/" + key};
  }
  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

  double number() const {
    if (!j_.is_number()) fail("expected a number");
    const double v = j_.get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  std::int64_t integer() const {
    if (!j_.is_number_integer()) fail("expected an integer");
    return j_.get<std::int64_t>();
  }
  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) fail("expected a boolean");
    return j_.get<bool>();
  }
  void only(std::initializer_list<const char*> keys) const {
    if (!j_.is_object()) fail("expected an object");
    for (const auto& [k, v] : j_.items())
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
        throw SchemaError(path_ + "/" + k, "unknown field");
  }

  double number_or(const std::string& key, double dflt) const {
    return has(key) ? child(key).number() : dflt;
  }

 private:
  const Json& j_;
  std::string path_;
};

inline double positive(const Reader& r) {
  const double v = r.number();
  if (!(v > 0.0)) r.fail("must be > 0");
  return v;
}

inline ObservationModel parse_model(const Reader& r) {
  const std::string type = r.child("type").string();
  auto pos = [&](const char* k) { return positive(r.child(k)); };
  if (type == "linear") {
    r.only({"type"});
    return obs::Linear{};
  }
  if (type == "linear_gauss_noise") {
    r.only({"type", "sigma"});
    const double s = r.child("sigma").number();
    if (s < 0) r.child("sigma").fail("must be >= 0");
    return obs::LinearGaussNoise{s};
  }
  if (type == "one_bit") {
    r.only({"type"});
    return obs::OneBit{};
  }
  if (type == "one_bit_dither") {
    r.only({"type", "lambda"});
    return obs::OneBitDither{pos("lambda")};
  }
  if (type == "multi_bit_dither") {
    r.only({"type", "delta"});
    return obs::MultiBitDither{pos("delta")};
  }
  if (type == "modulo") {
    r.only({"type", "lambda"});
    return obs::Modulo{pos("lambda")};
  }
  if (type == "sim") {
    r.only({"type", "link", "gamma"});
    const std::string link = r.child("link").string();
    obs::Sim m;
    if (link == "identity")
      m.f = obs::Link::Identity;
    else if (link == "sign")
      m.f = obs::Link::Sign;
    else if (link == "tanh")
      m.f = obs::Link::Tanh;
    else
      r.child("link").fail("unknown link '" + link + "'");
    m.gamma = r.number_or("gamma", 1.0);
    return m;
  }
  if (type == "coord_wise") {
    r.only({"type", "gain"});
    const double g = r.number_or("gain", 0.5);
    if (g < 0) r.child("gain").fail("must be >= 0");
    return obs::CoordWise{g};
  }
  if (type == "var_select") {
    r.only({"type", "kind"});
    obs::VarSelect m;
    const std::string kind = r.has("kind") ? r.child("kind").string() : "linear";
    if (kind == "linear")
      m.kind = obs::VarSelect::Kind::Linear;
    else if (kind == "tanh")
      m.kind = obs::VarSelect::Kind::Tanh;
    else
      r.child("kind").fail("unknown kind '" + kind + "'");
    return m;
  }
  r.child("type").fail("unknown model type '" + type + "'");
}

inline Json model_json(const ObservationModel& model) {
  return std::visit(
      Overloaded{
          [](const obs::Linear&) { return Json{{"type", "linear"}}; },
          [](const obs::LinearGaussNoise& m) {
            return Json{{"type", "linear_gauss_noise"}, {"sigma", m.sigma}};
          },
          [](const obs::OneBit&) { return Json{{"type", "one_bit"}}; },
          [](const obs::OneBitDither& m) { return Json{{"type", "one_bit_dither"}, {"lambda", m.lambda}}; },
          [](const obs::MultiBitDither& m) {
            return Json{{"type", "multi_bit_dither"}, {"delta", m.delta}};
          },
          [](const obs::Modulo& m) { return Json{{"type", "modulo"}, {"lambda", m.lambda}}; },
          [](const obs::Sim& m) {
            return Json{{"type", "sim"}, {"link", link_name(m.f)}, {"gamma", m.gamma}};
          },
          [](const obs::CoordWise& m) { return Json{{"type", "coord_wise"}, {"gain", m.gain}}; },
          [](const obs::VarSelect& m) {
            return Json{{"type", "var_select"},
                        {"kind", m.kind == obs::VarSelect::Kind::Linear ? "linear" : "tanh"}};
          },
      },
      model);
}

inline const char* law_name(EnsembleLaw law) {
  switch (law) {
    case EnsembleLaw::Gaussian:
      return "gaussian";
    case EnsembleLaw::Rademacher:
      return "rademacher";
    case EnsembleLaw::UniformScaled:
      return "uniform_scaled";
  }
  return "?";
}

inline const char* family_name(SignalFamily f) {
  switch (f) {
    case SignalFamily::Sparse:
      return "sparse";
    case SignalFamily::GradientSparse:
      return "gradient_sparse";
    case SignalFamily::UnitSphere:
      return "unit_sphere";
    case SignalFamily::Support:
      return "support";
  }
  return "?";
}

inline const char* constraint_name(ConstraintSpec::Kind k) {
  switch (k) {
    case ConstraintSpec::Kind::L1Ball:
      return "l1_ball";
    case ConstraintSpec::Kind::L2Ball:
      return "l2_ball";
    case ConstraintSpec::Kind::TVBall:
      return "tv_ball";
    case ConstraintSpec::Kind::Box:
      return "box";
    case ConstraintSpec::Kind::FullSpace:
      return "full_space";
  }
  return "?";
}

}  // namespace config_detail

/// `points` log-spaced integers from lo to hi; duplicates after rounding are dropped.
inline std::vector<Index> log_spaced_grid(Index lo, Index hi, int points = 6) {
  if (lo < 1 || hi < lo || points < 1) throw InvalidParameter("log grid needs 1 <= lo <= hi, points >= 1");
  std::vector<Index> grid;
  for (int k = 0; k < points; ++k) {
    const double frac = points == 1 ? 0.0 : double(k) / double(points - 1);
    const auto m = static_cast<Index>(std::llround(double(lo) * std::pow(double(hi) / double(lo), frac)));
    if (grid.empty() || m > grid.back()) grid.push_back(m);
  }
  return grid;
}

/// Validate and parse an experiment config. Errors carry the field path.
inline ExperimentConfig parse_config(const Json& root) {
  using config_detail::Reader;
  Reader r(root, "");
  r.only({"name", "model", "ensemble", "signal", "constraint", "m_grid", "trials", "corruption",
          "solver", "master_seed", "t", "output", "record_timing"});
  ExperimentConfig cfg;
  if (r.has("name")) cfg.name = r.child("name").string();
  cfg.model = config_detail::parse_model(r.child("model"));

  {
    const Reader s = r.child("signal");
    s.only({"family", "p", "s", "delta_sep", "r_tune", "r_l2"});
    const std::string fam = s.child("family").string();
    if (fam == "sparse")
      cfg.signal.family = SignalFamily::Sparse;
    else if (fam == "gradient_sparse")
      cfg.signal.family = SignalFamily::GradientSparse;
    else if (fam == "unit_sphere")
      cfg.signal.family = SignalFamily::UnitSphere;
    else if (fam == "support")
      cfg.signal.family = SignalFamily::Support;
    else
      s.child("family").fail("unknown signal family '" + fam + "'");
    cfg.signal.p = s.child("p").integer();
    if (cfg.signal.p < 1) s.child("p").fail("must be >= 1");
    cfg.signal.s = s.child("s").integer();
    const Index smax = cfg.signal.family == SignalFamily::GradientSparse ? cfg.signal.p - 1 : cfg.signal.p;
    if (cfg.signal.s < 0 || cfg.signal.s > smax) s.child("s").fail("out of range for p");
    cfg.signal.delta_sep = s.number_or("delta_sep", 1.0);
    if (!(cfg.signal.delta_sep > 0.0 && cfg.signal.delta_sep <= 1.0))
      s.child("delta_sep").fail("must lie in (0, 1]");
    cfg.signal.r_tune = s.number_or("r_tune", 1.0);
    if (cfg.signal.r_tune < 0) s.child("r_tune").fail("must be >= 0");
    if (s.has("r_l2")) cfg.signal.r_l2 = config_detail::positive(s.child("r_l2"));
  }

  cfg.ensemble.p = cfg.signal.p;
  if (r.has("ensemble")) {
    const Reader e = r.child("ensemble");
    e.only({"law", "subg_param"});
    const std::string law = e.has("law") ? e.child("law").string() : "gaussian";
    if (law == "gaussian")
      cfg.ensemble.law = EnsembleLaw::Gaussian;
    else if (law == "rademacher")
      cfg.ensemble.law = EnsembleLaw::Rademacher;
    else if (law == "uniform_scaled")
      cfg.ensemble.law = EnsembleLaw::UniformScaled;
    else
      e.child("law").fail("unknown law '" + law + "'");
    cfg.ensemble.subg_param = e.number_or("subg_param", 1.0);
    if (cfg.ensemble.subg_param < 1.0) e.child("subg_param").fail("must be >= 1");
  }

  {
    const Reader c = r.child("constraint");
    c.only({"type", "radius", "radius_scale", "lo", "hi"});
    const std::string type = c.child("type").string();
    using K = ConstraintSpec::Kind;
    if (type == "l1_ball")
      cfg.constraint.kind = K::L1Ball;
    else if (type == "l2_ball")
      cfg.constraint.kind = K::L2Ball;
    else if (type == "tv_ball")
      cfg.constraint.kind = K::TVBall;
    else if (type == "box")
      cfg.constraint.kind = K::Box;
    else if (type == "full_space")
      cfg.constraint.kind = K::FullSpace;
    else
      c.child("type").fail("unknown constraint type '" + type + "'");
    if (c.has("radius")) {
      const Reader rad = c.child("radius");
      if (rad.json().is_string()) {
        if (rad.string() != "tuned") rad.fail("expected a number or \"tuned\"");
      } else {
        cfg.constraint.radius = config_detail::positive(rad);
      }
    }
    if (c.has("radius_scale")) cfg.constraint.radius_scale = config_detail::positive(c.child("radius_scale"));
    cfg.constraint.lo = c.number_or("lo", -1.0);
    cfg.constraint.hi = c.number_or("hi", 1.0);
    if (cfg.constraint.kind == K::Box && cfg.constraint.lo > cfg.constraint.hi) c.fail("box needs lo <= hi");
  }

  {
    const Reader g = r.child("m_grid");
    if (g.json().is_object()) {
      g.only({"min", "max", "points"});
      const auto lo = g.child("min").integer(), hi = g.child("max").integer();
      const auto n = g.has("points") ? g.child("points").integer() : 6;
      if (lo < 1) g.child("min").fail("must be >= 1");
      if (hi < lo) g.child("max").fail("must be >= min");
      if (n < 1) g.child("points").fail("must be >= 1");
      cfg.m_grid = log_spaced_grid(lo, hi, static_cast<int>(n));
    } else if (!g.json().is_array() || g.json().empty()) {
      g.fail("expected a non-empty array or a {min, max, points} object");
    }
    for (std::size_t i = 0; g.json().is_array() && i < g.json().size(); ++i) {
      const Reader item(g.json()[i], g.path() + "/" + std::to_string(i));
      const auto m = item.integer();
      if (m < 1) item.fail("must be >= 1");
      if (!cfg.m_grid.empty() && m <= cfg.m_grid.back()) item.fail("m_grid must be strictly increasing");
      cfg.m_grid.push_back(m);
    }
  }
  if (r.has("trials")) {
    cfg.trials = static_cast<int>(r.child("trials").integer());
    if (cfg.trials < 1) r.child("trials").fail("must be >= 1");
  }

  if (r.has("corruption")) {
    const Reader c = r.child("corruption");
    c.only({"bitflip_frac", "l2_budget", "gross_outliers", "outlier_magnitude", "mode"});
    cfg.corruption.bitflip_frac = c.number_or("bitflip_frac", 0.0);
    if (cfg.corruption.bitflip_frac < 0 || cfg.corruption.bitflip_frac > 1)
      c.child("bitflip_frac").fail("must lie in [0, 1]");
    cfg.corruption.l2_budget = c.number_or("l2_budget", 0.0);
    if (cfg.corruption.l2_budget < 0) c.child("l2_budget").fail("must be >= 0");
    if (c.has("gross_outliers")) {
      cfg.corruption.gross_outliers = c.child("gross_outliers").integer();
      if (cfg.corruption.gross_outliers < 0) c.child("gross_outliers").fail("must be >= 0");
      if (cfg.corruption.gross_outliers > cfg.m_grid.front())
        c.child("gross_outliers").fail("exceeds the smallest m in m_grid");
    }
    cfg.corruption.outlier_magnitude = c.number_or("outlier_magnitude", 0.0);
    if (c.has("mode")) {
      const std::string mode = c.child("mode").string();
      if (mode == "random")
        cfg.corruption.mode = AdversarialMode::Random;
      else if (mode == "aligned")
        cfg.corruption.mode = AdversarialMode::AlignedWithSignal;
      else
        c.child("mode").fail("expected \"random\" or \"aligned\"");
    }
    if (cfg.corruption.bitflip_frac > 0 && !is_binary(cfg.model))
      c.child("bitflip_frac").fail("bit flips need a binary observation model");
  }

  if (r.has("solver")) {
    const Reader s = r.child("solver");
    s.only({"max_iters", "rel_tol", "step_rule", "safety_factor"});
    if (s.has("max_iters")) {
      cfg.solver.max_iters = static_cast<int>(s.child("max_iters").integer());
      if (cfg.solver.max_iters < 1) s.child("max_iters").fail("must be >= 1");
    }
    if (s.has("rel_tol")) cfg.solver.rel_tol = config_detail::positive(s.child("rel_tol"));
    if (s.has("safety_factor")) cfg.solver.safety_factor = config_detail::positive(s.child("safety_factor"));
    if (s.has("step_rule")) {
      const std::string rule = s.child("step_rule").string();
      if (rule == "fixed")
        cfg.solver.step_rule = StepRule::FixedInverseLipschitz;
      else if (rule == "backtracking")
        cfg.solver.step_rule = StepRule::Backtracking;
      else
        s.child("step_rule").fail("expected \"fixed\" or \"backtracking\"");
    }
  }

  if (r.has("master_seed")) {
    const Reader s = r.child("master_seed");
    if (!s.json().is_number_unsigned() && !(s.json().is_number_integer() && s.integer() >= 0))
      s.fail("expected a non-negative integer");
    cfg.master_seed = s.json().get<std::uint64_t>();
  }
  if (r.has("t")) cfg.t = config_detail::positive(r.child("t"));
  if (r.has("output")) cfg.output = r.child("output").string();
  if (r.has("record_timing")) cfg.record_timing = r.child("record_timing").boolean();
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Canonical JSON form; parse_config(to_json(c)) reproduces c.
inline Json to_json(const ExperimentConfig& cfg) {
  using namespace config_detail;
  Json j;
  j["name"] = cfg.name;
  j["model"] = model_json(cfg.model);
  j["ensemble"] = {{"law", law_name(cfg.ensemble.law)}, {"subg_param", cfg.ensemble.subg_param}};
  Json sig = {{"family", family_name(cfg.signal.family)},
              {"p", cfg.signal.p},
              {"s", cfg.signal.s},
              {"delta_sep", cfg.signal.delta_sep},
              {"r_tune", cfg.signal.r_tune}};
  if (cfg.signal.r_l2) sig["r_l2"] = *cfg.signal.r_l2;
  j["signal"] = sig;
  Json con = {{"type", constraint_name(cfg.constraint.kind)},
              {"radius_scale", cfg.constraint.radius_scale},
              {"lo", cfg.constraint.lo},
              {"hi", cfg.constraint.hi}};
  con["radius"] = cfg.constraint.radius ? Json(*cfg.constraint.radius) : Json("tuned");
  j["constraint"] = con;
  j["m_grid"] = cfg.m_grid;
  j["trials"] = cfg.trials;
  j["corruption"] = {{"bitflip_frac", cfg.corruption.bitflip_frac},
                     {"l2_budget", cfg.corruption.l2_budget},
                     {"gross_outliers", cfg.corruption.gross_outliers},
                     {"outlier_magnitude", cfg.corruption.outlier_magnitude},
                     {"mode", cfg.corruption.mode == AdversarialMode::Random ? "random" : "aligned"}};
  j["solver"] = {{"max_iters", cfg.solver.max_iters},
                 {"rel_tol", cfg.solver.rel_tol},
                 {"safety_factor", cfg.solver.safety_factor},
                 {"step_rule", cfg.solver.step_rule == StepRule::Backtracking ? "backtracking" : "fixed"}};
  j["master_seed"] = cfg.master_seed;
  j["t"] = cfg.t;
  j["output"] = cfg.output;
  j["record_timing"] = cfg.record_timing;
  return j;
}

// ---------------------------------------------------------------------------
// Trials

/// One recovery trial: signal, matrix, observations, corruption, Lasso solve
/// and error metrics. Pure function of (cfg, m, trial).
inline TrialRecord run_trial(const ExperimentConfig& cfg, Index m, int trial) {
  const auto start = std::chrono::steady_clock::now();
  TrialRecord rec;
  rec.model = model_tag(cfg.model);
  rec.p = cfg.signal.p;
  rec.s = cfg.signal.s;
  rec.m = m;
  rec.trial = trial;
  rec.seed = trial_seed(cfg.master_seed, m, trial);

  const Signal x = gen_signal(cfg.signal, derive_seed(rec.seed, "signal"));
  const Matrix a = gen_matrix(cfg.ensemble, m, derive_seed(rec.seed, "matrix"));
  ObservationBatch batch = observe(cfg.model, a, x, derive_seed(rec.seed, "dither"));
  if (!cfg.corruption.empty())
    batch = corrupt(batch.clean, cfg.corruption, cfg.model, x, a, derive_seed(rec.seed, "corruption"));

  const Vector target = model_target(cfg.model, cfg.ensemble, x, derive_seed(rec.seed, "target"));
  const ConstraintSet set = cfg.constraint.resolve(target);
  const LassoSolution sol = solve_lasso(a, batch.corrupted, set, cfg.solver);

  const Vector xv = signal_vector(x);
  rec.err_l2 = (sol.z - target).norm();
  rec.err_direction = xv.norm() > 0.0 ? direction_error(sol.z, xv, target.norm()) : rec.err_l2;
  if (cfg.signal.family != SignalFamily::GradientSparse) {
    const SupportSet truth = support_of(target);
    if (!truth.indices.empty())
      rec.support_match = support_recover(sol.z, static_cast<Index>(truth.indices.size())) == truth;
  }
  rec.iterations = sol.diag.iterations;
  rec.converged = sol.diag.converged;
  if (cfg.record_timing)
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// ---------------------------------------------------------------------------
// CSV

inline const char* kCsvHeader =
    "model,p,s,m,trial,seed,err_l2,err_direction,support_match,iterations,converged,wall_ms";

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string to_csv_row(const TrialRecord& r) {
  std::ostringstream os;
  os << csv_escape(r.model) << ',' << r.p << ',' << r.s << ',' << r.m << ',' << r.trial << ','
     << r.seed << ',' << format_double(r.err_l2) << ',' << format_double(r.err_direction) << ','
     << (r.support_match ? 1 : 0) << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ','
     << format_double(r.wall_ms);
  return os.str();
}

/// Write all rows to `path` through a temporary file and a rename, so the
/// final file is either absent or complete.
inline void write_csv_atomic(const std::filesystem::path& path, const std::vector<TrialRecord>& rows) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << kCsvHeader << '\n';
    for (const auto& r : rows) out << to_csv_row(r) << '\n';
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move results into " + path.string());
  }
}

/// Worker count: NLCS_THREADS overrides the requested value; 0 means all cores.
inline unsigned resolve_threads(unsigned requested) {
  if (const char* env = std::getenv("NLCS_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) requested = static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
  return requested;
}

/// Run every (m, trial) pair. Rows come back ordered by (m, trial)
/// regardless of thread count or completion order. Writes cfg.output when set.
inline std::vector<TrialRecord> run_experiment(const ExperimentConfig& cfg, unsigned threads = 1) {
  if (cfg.m_grid.empty()) throw SchemaError("/m_grid", "expected a non-empty array");
  if (cfg.trials < 1) throw SchemaError("/trials", "must be >= 1");
  const std::size_t jobs = cfg.m_grid.size() * static_cast<std::size_t>(cfg.trials);
  std::vector<TrialRecord> rows(jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= jobs) return;
      try {
        const Index m = cfg.m_grid[job / static_cast<std::size_t>(cfg.trials)];
        const int trial = static_cast<int>(job % static_cast<std::size_t>(cfg.trials));
        rows[job] = run_trial(cfg, m, trial);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(jobs);
      }
    }
  };
  const unsigned n = std::min<std::size_t>(resolve_threads(threads), jobs);
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  if (!cfg.output.empty()) write_csv_atomic(cfg.output, rows);
  return rows;
}

// ---------------------------------------------------------------------------
// Summaries

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw EmptyInput("empty CSV: " + path.string());
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != t.header.size()) throw FormatError("ragged CSV row: " + line);
    t.rows.push_back(std::move(fields));
  }
  return t;
}

/// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw EmptyInput("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

struct LevelSummary {
  Index m = 0;
  std::size_t n = 0;
  double median = 0.0, q25 = 0.0, q75 = 0.0;
};

struct GroupSummary {
  std::string key;
  std::vector<LevelSummary> levels;  // ascending m
  std::optional<RateFit> fit;
  std::string fit_error;
};

/// Per-group, per-m median and quartiles of `metric`, plus the log-log slope
/// of the medians against m.
inline std::vector<GroupSummary> summarize(const std::filesystem::path& csv,
                                           const std::vector<std::string>& group_keys = {"model"},
                                           const std::string& metric = "err_l2",
                                           std::optional<std::size_t> window = {}) {
  const CsvTable t = read_csv(csv);
  if (t.rows.empty()) throw EmptyInput("CSV has no data rows: " + csv.string());
  const std::size_t m_col = t.column("m"), v_col = t.column(metric);
  std::vector<std::size_t> key_cols;
  for (const auto& k : group_keys) key_cols.push_back(t.column(k));

  std::map<std::string, std::map<Index, std::vector<double>>> groups;
  for (const auto& row : t.rows) {
    std::string key;
    for (std::size_t i = 0; i < key_cols.size(); ++i)
      key += (i ? "|" : "") + row[key_cols[i]];
    try {
      groups[key][std::stoll(row[m_col])].push_back(std::stod(row[v_col]));
    } catch (const std::exception&) {
      throw FormatError("non-numeric value in row for group " + key);
    }
  }
  std::vector<GroupSummary> out;
  for (auto& [key, levels] : groups) {
    GroupSummary g{key, {}, std::nullopt, {}};
    std::vector<RatePoint> pts;
    for (auto& [m, vals] : levels) {
      LevelSummary l{m, vals.size(), quantile(vals, 0.5), quantile(vals, 0.25), quantile(vals, 0.75)};
      g.levels.push_back(l);
      pts.push_back({double(m), l.median});
    }
    try {
      g.fit = fit_rate(pts, window);
    } catch (const FitImpossible& e) {
      g.fit_error = e.what();
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace nlcs
