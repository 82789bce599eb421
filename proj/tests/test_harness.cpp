#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nlcs/harness.hpp"

using namespace nlcs;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"({
  "model": {"type": "one_bit"},
  "signal": {"family": "sparse", "p": 20, "s": 2},
  "constraint": {"type": "l1_ball", "radius": "tuned"},
  "m_grid": [100],
  "trials": 3,
  "master_seed": 5
})";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "nlcs_harness_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string schema_path(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const SchemaError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
  const ExperimentConfig cfg = parse_config_text(kSmallConfig);
  EXPECT_EQ(cfg.ensemble.p, 20);
  EXPECT_EQ(cfg.trials, 3);
  EXPECT_FALSE(cfg.constraint.radius.has_value());
  const Json once = to_json(cfg);
  const Json twice = to_json(parse_config(once));
  EXPECT_EQ(once, twice);
}

TEST(Config, EveryModelRoundTrips) {
  for (const char* model :
       {R"({"type":"linear"})", R"({"type":"linear_gauss_noise","sigma":0.1})", R"({"type":"one_bit_dither","lambda":3})",
        R"({"type":"multi_bit_dither","delta":0.5})", R"({"type":"modulo","lambda":2})",
        R"({"type":"sim","link":"tanh"})", R"({"type":"coord_wise","gain":0.25})",
        R"({"type":"var_select","kind":"tanh"})"}) {
    Json j = Json::parse(kSmallConfig);
    j["model"] = Json::parse(model);
    const Json once = to_json(parse_config(j));
    EXPECT_EQ(once, to_json(parse_config(once))) << model;
    EXPECT_EQ(once["model"]["type"], j["model"]["type"]);
  }
}

TEST(Config, SchemaErrorsCarryPaths) {
  Json j = Json::parse(kSmallConfig);
  j["m_grid"] = {100, 100};
  EXPECT_EQ(schema_path(j.dump()), "/m_grid/1");
  j = Json::parse(kSmallConfig);
  j["trials"] = 0;
  EXPECT_EQ(schema_path(j.dump()), "/trials");
  j = Json::parse(kSmallConfig);
  j["model"]["type"] = "bogus";
  EXPECT_EQ(schema_path(j.dump()), "/model/type");
  j = Json::parse(kSmallConfig);
  j["signal"].erase("p");
  EXPECT_EQ(schema_path(j.dump()), "/signal");
  j = Json::parse(kSmallConfig);
  j["extra"] = 1;
  EXPECT_EQ(schema_path(j.dump()), "/extra");
  j = Json::parse(kSmallConfig);
  j["model"] = {{"type", "linear"}};
  j["corruption"] = {{"bitflip_frac", 0.1}};
  EXPECT_EQ(schema_path(j.dump()), "/corruption/bitflip_frac");
  EXPECT_EQ(schema_path("{not json"), "");
}

TEST(Config, LogSpacedGrid) {
  Json j = Json::parse(kSmallConfig);
  j["m_grid"] = {{"min", 100}, {"max", 3200}};
  const auto cfg = parse_config(j);
  EXPECT_EQ(cfg.m_grid, (std::vector<Index>{100, 200, 400, 800, 1600, 3200}));
  EXPECT_EQ(log_spaced_grid(5, 5, 6), (std::vector<Index>{5}));
}

TEST(Run, CardinalityAndOrdering) {
  ExperimentConfig cfg = parse_config_text(kSmallConfig);
  cfg.m_grid = {60, 100};
  const auto rows = run_experiment(cfg);
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(rows[k].m, k < 3 ? 60 : 100);
    EXPECT_EQ(rows[k].trial, static_cast<int>(k % 3));
    EXPECT_EQ(rows[k].seed, trial_seed(5, rows[k].m, rows[k].trial));
    EXPECT_EQ(rows[k].model, "one_bit");
  }
}

TEST(Run, DeterministicAcrossThreadCounts) {
  ExperimentConfig cfg = parse_config_text(kSmallConfig);
  cfg.m_grid = {50, 80, 120};
  cfg.trials = 4;
  cfg.output = scratch("a.csv").string();
  run_experiment(cfg, 1);
  const std::string first = slurp(cfg.output);
  cfg.output = scratch("b.csv").string();
  run_experiment(cfg, 3);
  EXPECT_EQ(first, slurp(cfg.output));
  EXPECT_EQ(first.substr(0, first.find('\n')), kCsvHeader);
  for (const auto& e : fs::directory_iterator(scratch("")))
    EXPECT_EQ(e.path().string().find(".tmp."), std::string::npos);
}

TEST(Run, UnwritableOutputIsIoError) {
  ExperimentConfig cfg = parse_config_text(kSmallConfig);
  cfg.output = "/nonexistent-dir/out.csv";
  EXPECT_THROW(run_experiment(cfg), IoError);
}

TEST(Run, VarSelectAndTvPipelines) {
  ExperimentConfig vs = parse_config_text(R"({
    "model": {"type": "var_select"},
    "signal": {"family": "support", "p": 30, "s": 3},
    "constraint": {"type": "l2_ball", "radius": 2},
    "m_grid": [600], "trials": 2, "master_seed": 1})");
  for (const auto& r : run_experiment(vs)) EXPECT_TRUE(r.support_match);

  ExperimentConfig tv = parse_config_text(R"({
    "model": {"type": "linear"},
    "signal": {"family": "gradient_sparse", "p": 60, "s": 2, "delta_sep": 0.8, "r_tune": 0.3},
    "constraint": {"type": "tv_ball"},
    "m_grid": [60], "trials": 2, "master_seed": 1})");
  for (const auto& r : run_experiment(tv)) {
    EXPECT_FALSE(r.support_match);
    EXPECT_LT(r.err_l2, 0.05);
  }
}

TEST(Summaries, PowerLawSlope) {
  const fs::path path = scratch("power.csv");
  std::vector<TrialRecord> rows;
  for (Index m : {100, 400, 1600})
    for (int t = 0; t < 3; ++t) {
      TrialRecord r;
      r.model = "linear";
      r.m = m;
      r.trial = t;
      r.err_l2 = (1.0 + 0.1 * (t - 1)) / std::sqrt(double(m));
      rows.push_back(r);
    }
  write_csv_atomic(path, rows);
  const auto s = summarize(path);
  ASSERT_EQ(s.size(), 1u);
  ASSERT_TRUE(s[0].fit.has_value());
  EXPECT_NEAR(s[0].fit->slope, -0.5, 1e-9);
  EXPECT_EQ(s[0].levels.size(), 3u);
  EXPECT_NEAR(s[0].levels[0].median, 0.1, 1e-12);
  EXPECT_NEAR(s[0].levels[0].q25, 0.095, 1e-12);
  EXPECT_NEAR(s[0].levels[0].q75, 0.105, 1e-12);
}

TEST(Summaries, Errors) {
  const fs::path empty = scratch("empty.csv");
  { std::ofstream(empty) << ""; }
  EXPECT_THROW(summarize(empty), EmptyInput);
  const fs::path header_only = scratch("header.csv");
  { std::ofstream(header_only) << kCsvHeader << '\n'; }
  EXPECT_THROW(summarize(header_only), EmptyInput);
  const fs::path missing = scratch("missing.csv");
  { std::ofstream(missing) << "model,m\nlinear,10\n"; }
  EXPECT_THROW(summarize(missing), FormatError);
}

TEST(Csv, QuotedFields) {
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(split_csv_line("\"a,b\",c,\"x\"\"y\""), (std::vector<std::string>{"a,b", "c", "x\"y"}));
}
