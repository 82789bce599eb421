#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "nlcs/nlcs.hpp"

using namespace nlcs;

namespace {

ConstraintSet parse_set(const std::string& name, double radius) {
  if (name == "l1ball") return cset::L1Ball{radius};
  if (name == "l2ball") return cset::L2Ball{radius};
  if (name == "tvball") return cset::TVBall{radius};
  if (name == "box") return cset::Box{-radius, radius};
  if (name == "full") return cset::FullSpace{};
  throw InvalidParameter("unknown set '" + name + "'");
}

void print_rows(const std::vector<TrialRecord>& rows) {
  std::map<Index, std::vector<double>> l2, dir;
  std::map<Index, int> conv;
  for (const auto& r : rows) {
    l2[r.m].push_back(r.err_l2);
    dir[r.m].push_back(r.err_direction);
    conv[r.m] += r.converged ? 1 : 0;
  }
  std::printf("%8s %14s %14s %10s\n", "m", "median_l2", "median_dir", "converged");
  for (const auto& [m, v] : l2)
    std::printf("%8lld %14.6g %14.6g %6d/%zu\n", static_cast<long long>(m), quantile(v, 0.5),
                quantile(dir[m], 0.5), conv[m], v.size());
}

int cmd_run(const std::string& config, const std::string& out, unsigned threads,
            std::optional<Seed> seed) {
  ExperimentConfig cfg = load_config(config);
  if (!out.empty()) cfg.output = out;
  if (seed) cfg.master_seed = *seed;
  const auto rows = run_experiment(cfg, threads);
  print_rows(rows);
  if (!cfg.output.empty()) std::printf("wrote %zu rows to %s\n", rows.size(), cfg.output.c_str());
  return 0;
}

int cmd_rates(const std::string& in, const std::vector<std::string>& group, const std::string& metric,
              std::optional<std::size_t> window) {
  for (const auto& g : summarize(in, group, metric, window)) {
    std::printf("group %s\n", g.key.c_str());
    std::printf("%8s %6s %14s %14s %14s\n", "m", "n", "median", "q25", "q75");
    for (const auto& l : g.levels)
      std::printf("%8lld %6zu %14.6g %14.6g %14.6g\n", static_cast<long long>(l.m), l.n, l.median, l.q25,
                  l.q75);
    if (g.fit) {
      std::printf("slope %.4f (points used: %zu)\n", g.fit->slope, g.fit->used);
      for (const auto& w : g.fit->warnings) std::printf("warning: %s\n", w.c_str());
    } else {
      std::printf("slope unavailable: %s\n", g.fit_error.c_str());
    }
  }
  return 0;
}

int cmd_mismatch(const std::string& config, Index n, Seed seed) {
  const ExperimentConfig cfg = load_config(config);
  const Signal x = gen_signal(cfg.signal, derive_seed(seed, "signal"));
  const Vector tx = model_target(cfg.model, cfg.ensemble, x, derive_seed(seed, "target"));
  const auto est = target_mismatch(cfg.model, cfg.ensemble, x, tx, n, derive_seed(seed, "mismatch"));
  std::printf("model %s\n", model_tag(cfg.model).c_str());
  std::printf("|Tx| %.6g\nrho_hat %.6g\nstderr %.6g\nn %lld\n", tx.norm(), est.rho_hat, est.stderr_,
              static_cast<long long>(est.n_samples));
  return 0;
}

int cmd_meanwidth(const std::string& set_name, double radius, Index p, Index n, std::optional<double> t,
                  Seed seed) {
  WidthEstimate est;
  if (set_name == "sphere") {
    if (t) throw InvalidParameter("local width is not available for the sphere");
    est = mean_width_global(width::Sphere{p}, n, seed);
  } else {
    const ConstraintSet set = parse_set(set_name, radius);
    est = t ? mean_width_local(set, Vector::Zero(p), *t, n, seed)
            : mean_width_global(width::Convex{set, p}, n, seed);
  }
  std::printf("value %.8g\nstderr %.8g\nn %lld\n", est.value, est.stderr_, static_cast<long long>(est.n_samples));
  return 0;
}

int cmd_probe(const std::string& kind, const std::string& config, const std::string& set_name, double radius,
              Index p, double t, Index centers, Index m, Index m0, Index pairs, Index n, Seed seed) {
  if (kind == "decoupling") {
    const ConstraintSet set = parse_set(set_name, radius);
    Rng rng = make_rng(derive_seed(seed, "centers"));
    std::normal_distribution<double> normal;
    std::vector<Vector> cs;
    for (Index c = 0; c < centers; ++c) {
      Vector v(p);
      for (Index j = 0; j < p; ++j) v[j] = normal(rng);
      cs.push_back(project(set, v).point);
    }
    const auto r = decoupling_probe(set, cs, t, n, derive_seed(seed, "probe"));
    std::printf("lhs %.6g\nlhs_stderr %.6g\nlocal_sup %.6g\nglobal_width %.6g\nrhs %.6g\nratio %.6g\n", r.lhs,
                r.lhs_stderr, r.local_sup, r.global_width, r.rhs, r.ratio);
    return 0;
  }
  if (kind == "stability") {
    if (config.empty()) throw InvalidParameter("stability probe needs --config");
    const ExperimentConfig cfg = load_config(config);
    const Matrix a = gen_matrix(cfg.ensemble, m, derive_seed(seed, "matrix"));
    std::vector<std::pair<Signal, Signal>> ps;
    for (Index k = 0; k < pairs; ++k)
      ps.emplace_back(gen_signal(cfg.signal, derive_seed(seed, "x", k)),
                      gen_signal(cfg.signal, derive_seed(seed, "x'", k)));
    const auto r = local_stability_probe(cfg.model, ps, a, m0, derive_seed(seed, "dither"));
    std::printf("top_max %.6g\ntail_max %.6g\n", r.top_max, r.tail_max);
    return 0;
  }
  throw InvalidParameter("unknown probe kind '" + kind + "'");
}

int cmd_identities(const std::string& model, double delta, double lambda, Index n, Seed seed) {
  if (n < 2) throw InvalidParameter("--n must be >= 2");
  std::vector<double> points;
  ObservationModel om;
  if (model == "multibit") {
    if (!(delta > 0)) throw InvalidParameter("--delta must be > 0");
    points = {-3.3, 0.0, 0.7, 2.0 * delta};
    om = obs::MultiBitDither{delta};
  } else if (model == "dither") {
    if (!(lambda > 0)) throw InvalidParameter("--lambda must be > 0");
    points = {-lambda, -0.5 * lambda, 0.0, 0.3 * lambda, lambda};
    om = obs::OneBitDither{lambda};
  } else {
    throw InvalidParameter("unknown identity model '" + model + "'");
  }
  std::printf("%12s %14s %14s %14s\n", "s", "expected", "estimate", "residual");
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double s = points[k];
    Rng rng = make_rng(derive_seed(seed, "identity", k));
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) sum += scalar_output(om, s, draw_dither(om, rng));
    const double est = sum / double(n);
    const double expected = model == "multibit" ? s : s / lambda;
    std::printf("%12.6g %14.8g %14.8g %14.3e\n", s, expected, est, est - expected);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-linear compressed sensing experiments"};
  app.require_subcommand(1);

  std::string config, out, in, metric = "err_l2", set_name = "l1ball", kind, model = "multibit";
  std::vector<std::string> group{"model"};
  unsigned threads = 1;
  Seed seed = 0;
  std::optional<Seed> run_seed;
  std::optional<std::size_t> window;
  std::optional<double> t_local;
  double radius = 1.0, delta = 1.0, lambda = 1.0, t = 0.1;
  Index p = 10, n = 100000, centers = 4, m = 500, m0 = 10, pairs = 20;

  auto* run = app.add_subcommand("run", "run an experiment config and write the trial CSV");
  run->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "CSV output path (overrides the config)");
  run->add_option("--threads", threads, "worker threads (0 = all cores; NLCS_THREADS overrides)");
  run->add_option("--seed", run_seed, "master seed (overrides the config)");

  auto* rates = app.add_subcommand("rates", "per-m medians, quartiles and log-log slope of a trial CSV");
  rates->add_option("--in", in, "trial CSV")->required()->check(CLI::ExistingFile);
  rates->add_option("--group", group, "grouping columns")->delimiter(',');
  rates->add_option("--metric", metric, "metric column");
  rates->add_option("--window", window, "fit only the largest-m points");

  auto* mismatch = app.add_subcommand("mismatch", "Monte-Carlo target mismatch for a config's model");
  mismatch->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  mismatch->add_option("--n", n, "Monte-Carlo samples");
  mismatch->add_option("--seed", seed, "seed");

  auto* meanwidth = app.add_subcommand("meanwidth", "Monte-Carlo mean width of a set");
  meanwidth->add_option("--set", set_name, "l1ball|l2ball|tvball|box|full|sphere");
  meanwidth->add_option("--radius", radius, "set radius");
  meanwidth->add_option("--p", p, "ambient dimension")->check(CLI::PositiveNumber);
  meanwidth->add_option("--n", n, "Monte-Carlo samples")->check(CLI::Range(Index{2}, Index{1} << 40));
  meanwidth->add_option("--t", t_local, "local scale (local width at the origin)");
  meanwidth->add_option("--seed", seed, "seed");

  auto* probe = app.add_subcommand("probe", "decoupling or local-stability probes");
  probe->add_option("--kind", kind, "stability|decoupling")->required();
  probe->add_option("--config", config, "experiment JSON (stability)");
  probe->add_option("--set", set_name, "constraint set (decoupling)");
  probe->add_option("--radius", radius, "set radius (decoupling)");
  probe->add_option("--p", p, "ambient dimension (decoupling)");
  probe->add_option("--t", t, "local scale (decoupling)");
  probe->add_option("--centers", centers, "number of centers (decoupling)");
  probe->add_option("--m", m, "measurements (stability)");
  probe->add_option("--m0", m0, "outlier count (stability)");
  probe->add_option("--pairs", pairs, "signal pairs (stability)");
  probe->add_option("--n", n, "Monte-Carlo samples (decoupling)");
  probe->add_option("--seed", seed, "seed");

  auto* identities = app.add_subcommand("identities", "Monte-Carlo check of the dither identities");
  identities->add_option("--model", model, "multibit|dither");
  identities->add_option("--delta", delta, "quantizer resolution");
  identities->add_option("--lambda", lambda, "dither half-width");
  identities->add_option("--n", n, "Monte-Carlo samples");
  identities->add_option("--seed", seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) return cmd_run(config, out, threads, run_seed);
    if (*rates) return cmd_rates(in, group, metric, window);
    if (*mismatch) return cmd_mismatch(config, n, seed);
    if (*meanwidth) return cmd_meanwidth(set_name, radius, p, n, t_local, seed);
    if (*probe) return cmd_probe(kind, config, set_name, radius, p, t, centers, m, m0, pairs, n, seed);
    if (*identities) return cmd_identities(model, delta, lambda, n, seed);
  } catch (const SchemaError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
