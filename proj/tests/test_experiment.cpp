#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "sparsepce/experiment.hpp"

using namespace sparsepce;

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) rows.push_back(split(line));
  return rows;
}

std::string records_csv(const RunResult& r, ExperimentKind kind) {
  std::ostringstream os;
  write_records(r.records, kind, os);
  return os.str();
}

ExperimentConfig smoke(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.family = Family::chebyshev;
  c.function = "f3";
  c.alphas = {0.0, 1.0};
  c.mc_points = 2000;
  if (kind == ExperimentKind::noise_comparison || kind == ExperimentKind::eta_sweep) c.noise_level = 1e-3;
  return apply_scale(c, Scale::smoke);
}

}  // namespace

TEST(TestFunctions, ValuesAtOrigin) {
  for (std::size_t d : {2u, 4u, 8u}) {
    const std::vector<double> z(d, 0.0);
    EXPECT_DOUBLE_EQ(test_function("f1", d)(z), 1.0);
    EXPECT_DOUBLE_EQ(test_function("f2", d)(z), 1.0);
    EXPECT_NEAR(test_function("f3", d)(z), std::exp(-1.0 / 8.0), 1e-15);
  }
  EXPECT_NEAR(std::exp(-1.0 / 8.0), 0.88250, 1e-5);
  EXPECT_THROW(test_function("f1", 3), std::invalid_argument);
  EXPECT_THROW(test_function("f9", 2), std::invalid_argument);
}

TEST(TestFunctions, F1AgainstHandEvaluation) {
  const std::vector<double> y{0.5, -0.25};
  // d = 2: numerator cos(16 y_2 / 4), denominator 1 - y_1 / 4.
  EXPECT_NEAR(test_function("f1", 2)(y), std::cos(16 * -0.25 / 4) / (1 - 0.5 / 4), 1e-15);
}

TEST(RandomLowerSubset, IsLowerAndInside) {
  const IndexSet s = hyperbolic_cross(8, 10);
  Rng rng(1);
  for (int t = 0; t < 30; ++t) {
    const IndexSet sub = random_lower_subset(s, 5, rng);
    EXPECT_EQ(sub.size(), 5u);
    EXPECT_TRUE(is_lower(sub));
    for (const auto& i : sub) EXPECT_TRUE(s.contains(i));
  }
  EXPECT_THROW(random_lower_subset(hyperbolic_cross(1, 3), 5, rng), std::invalid_argument);
}

TEST(PlantedFunction, PlusMinusOneOnLowerSupport) {
  const BasisSpec b(Family::chebyshev, 3);
  const IndexSet s = hyperbolic_cross(3, 8);
  Rng rng(2);
  const TargetFunction f = planted_function(s, b, 4, rng);
  std::vector<MultiIndex> supp;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double c = f.reference->coefficients[static_cast<Eigen::Index>(j)];
    if (c != 0) {
      EXPECT_EQ(std::abs(c), 1.0);
      supp.push_back(s[j]);
    }
  }
  EXPECT_EQ(supp.size(), 4u);
  EXPECT_TRUE(is_lower(IndexSet(3, supp)));
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  ExperimentConfig c;
  c.kind = ExperimentKind::eta_sweep;
  c.noise_level = 1e-3;
  c.m_grid = {10, 20};
  c.qu_mass = QuMass::sum_squared_weights;
  const nlohmann::json j = c;
  const auto back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  nlohmann::json bad = j;
  bad["trails"] = 3;
  EXPECT_THROW(bad.get<ExperimentConfig>(), std::invalid_argument);
}

TEST(Config, ValidationErrors) {
  ExperimentConfig c;
  c.m_grid = {20, 10};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ExperimentConfig{};
  c.kind = ExperimentKind::noise_comparison;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ExperimentConfig{};
  c.function = "f1";
  c.d = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ExperimentConfig{};
  c.eta_strategy = "bogus";
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, LoadsShippedConfigs) {
  const std::filesystem::path dir = std::filesystem::path(SPARSEPCE_SOURCE_DIR) / "configs";
  std::size_t seen = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") {
      EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
      ++seen;
    }
  EXPECT_GE(seen, 4u);
}

TEST(Scale, DeskAndSmoke) {
  ExperimentConfig c;
  c.m_grid = {125, 250, 375, 500, 625, 750, 875, 1000};
  const auto desk = apply_scale(c, Scale::desk);
  EXPECT_EQ(desk.trials, 10u);
  EXPECT_EQ(desk.m_grid, (std::vector<std::size_t>{250, 500, 750, 1000}));
  const auto sm = apply_scale(c, Scale::smoke);
  EXPECT_EQ(sm.d, 2u);
  EXPECT_EQ(sm.k, 12u);
  EXPECT_EQ(sm.trials, 3u);
  EXPECT_EQ(sm.m_grid, (std::vector<std::size_t>{8, 16, 24}));
  EXPECT_EQ(apply_scale(c, Scale::paper).m_grid, c.m_grid);
}

TEST(Csv, HeaderAndRoundTripFloats) {
  EXPECT_STREQ(csv_header(),
               "experiment,basis,d,k,n,alpha,m,trial,eta_strategy,eta,l2_error,linf_error,iterations,converged,seed,"
               "wall_ms");
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const double v = std::ldexp(rng.uniform(), static_cast<int>(rng.below(200)) - 100);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(std::nan("")), "nan");
}

TEST(Summary, Path) {
  EXPECT_EQ(summary_path("out/results.csv"), "out/results.summary.csv");
  EXPECT_EQ(summary_path("a.b/res"), "a.b/res.summary.csv");
}

TEST(ParallelFor, CoversEveryIndexAndRethrows) {
  std::vector<int> hit(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw std::runtime_error("x");
               }),
               std::runtime_error);
}

TEST(RunExperiment, SmokeErrorVsMIsDeterministicAndOrdered) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig c = smoke(ExperimentKind::error_vs_m);
  const RunResult a = run_experiment(c, {1, nullptr});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0);
  const RunResult b = run_experiment(c, {3, nullptr});
  EXPECT_EQ(records_csv(a, c.kind), records_csv(b, c.kind));
  EXPECT_EQ(a.failures, 0u);
  EXPECT_EQ(a.nonconverged, 0u);
  ASSERT_EQ(a.records.size(), 2u * 3u * 3u);
  for (std::size_t i = 1; i < a.records.size(); ++i) {
    const auto& p = a.records[i - 1];
    const auto& q = a.records[i];
    EXPECT_TRUE(std::tie(p.alpha, p.m, p.trial) < std::tie(q.alpha, q.m, q.trial));
  }
  for (const auto& r : a.records) EXPECT_EQ(r.wall_ms, 0.0);

  const auto rows = parse_csv(records_csv(a, c.kind));
  ASSERT_EQ(rows.size(), a.records.size() + 1);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 16u);
    EXPECT_EQ(rows[i][0], "error_vs_m");
    EXPECT_EQ(rows[i][1], "chebyshev");
    EXPECT_EQ(std::stoul(rows[i][4]), hyperbolic_cross(2, 12).size());
    EXPECT_TRUE(rows[i][13] == "0" || rows[i][13] == "1");
    EXPECT_GE(std::stod(rows[i][10]), 0.0);
  }
}

TEST(RunExperiment, SeedChangesOutput) {
  ExperimentConfig c = smoke(ExperimentKind::error_vs_m);
  const std::string a = records_csv(run_experiment(c, {1, nullptr}), c.kind);
  c.seed = 2;
  EXPECT_NE(a, records_csv(run_experiment(c, {1, nullptr}), c.kind));
}

TEST(RunExperiment, SummaryMeansEqualRecomputedMeans) {
  const ExperimentConfig c = smoke(ExperimentKind::noise_comparison);
  const RunResult r = run_experiment(c, {2, nullptr});
  const auto raw = parse_csv(records_csv(r, c.kind));
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> l2;
  for (std::size_t i = 1; i < raw.size(); ++i) l2[{raw[i][5], raw[i][6], raw[i][8]}].push_back(std::stod(raw[i][10]));
  std::ostringstream os;
  write_summary(r.records, c.kind, os);
  const auto sum = parse_csv(os.str());
  ASSERT_EQ(sum.size(), l2.size() + 1);
  for (std::size_t i = 1; i < sum.size(); ++i) {
    const auto& v = l2.at({sum[i][1], sum[i][2], sum[i][3]});
    double mean = 0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    EXPECT_NEAR(std::stod(sum[i][6]), mean, 1e-15 * (1 + mean));
    EXPECT_EQ(std::stoul(sum[i][5]), v.size());
  }
  std::set<std::string> strategies;
  for (std::size_t i = 1; i < raw.size(); ++i) strategies.insert(raw[i][8]);
  EXPECT_EQ(strategies, (std::set<std::string>{"noiseless", "fixed", "oracle", "cv"}));
}

TEST(RunExperiment, EtaSweepRowsPerTrial) {
  ExperimentConfig c = smoke(ExperimentKind::eta_sweep);
  c.alphas = {1.0};
  c.m_grid = {40};
  c.trials = 2;
  const RunResult r = run_experiment(c, {1, nullptr});
  ASSERT_EQ(r.records.size(), 2u * (31u + 2u));
  EXPECT_EQ(r.records.front().eta_strategy, "sweep");
  EXPECT_NEAR(r.records.front().eta, 1e-5, 1e-20);
  EXPECT_NEAR(r.records[30].eta, 10.0, 1e-12);
  EXPECT_EQ(r.records[31].eta_strategy, "oracle");
  EXPECT_EQ(r.records[32].eta_strategy, "cv");
}

TEST(RunExperiment, QuTableSmoke) {
  const ExperimentConfig c = smoke(ExperimentKind::qu_table);
  const RunResult r = run_experiment(c, {1, nullptr});
  ASSERT_EQ(r.records.size(), 9u);
  for (const auto& rec : r.records) EXPECT_GE(rec.qu, 1.0);
  const auto rows = parse_csv(records_csv(r, c.kind));
  EXPECT_EQ(rows[0].size(), 10u);
  EXPECT_EQ(rows[0][7], "qu");
  ExperimentConfig big = c;
  big.m_grid = {100};
  EXPECT_THROW(run_experiment(big, {1, nullptr}), std::invalid_argument);
}

TEST(RunExperiment, PlantedConfigRecoversExactly) {
  ExperimentConfig c;
  c.kind = ExperimentKind::error_vs_m;
  c.family = Family::chebyshev;
  c.d = 4;
  c.k = 8;
  c.function = "planted";
  c.planted_support = 3;
  c.alphas = {1.0};
  c.m_grid = {40};
  c.trials = 3;
  c.mc_points = 2000;
  const RunResult r = run_experiment(c, {1, nullptr});
  for (const auto& rec : r.records) {
    EXPECT_TRUE(rec.converged);
    EXPECT_LE(rec.l2_error, 1e-6);
  }
}

TEST(RunExperiment, TimingIsOptIn) {
  ExperimentConfig c = smoke(ExperimentKind::error_vs_m);
  c.alphas = {0.0};
  c.m_grid = {16};
  c.trials = 1;
  c.record_timing = true;
  const RunResult r = run_experiment(c, {1, nullptr});
  EXPECT_GT(r.records.front().wall_ms, 0.0);
}
