#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "basis_spec.hpp"
#include "diagnostics.hpp"
#include "estimators.hpp"
#include "measurement.hpp"
#include "multiindex.hpp"
#include "rng.hpp"
#include "solvers.hpp"

namespace sparsepce {

// ---------------------------------------------------------------------------
// Test functions

/// f1(y) = prod_{k>d/2} cos(16 y_k / 2^k) / prod_{k<=d/2} (1 - y_k / 4^k)
/// f2(y) = exp(-sum y_k / (2d))
/// f3(y) = exp(-sum cos(y_k) / (8d))
inline TargetFunction test_function(const std::string& id, std::size_t d) {
  if (d < 1) throw std::invalid_argument("test_function: d must be >= 1");
  if (id == "f1") {
    if (d % 2 != 0) throw std::invalid_argument("test_function: f1 needs even d (got " + std::to_string(d) + ")");
    return TargetFunction{[d](std::span<const double> y) {
                            double num = 1, den = 1;
                            for (std::size_t k = 1; k <= d; ++k) {
                              if (k > d / 2)
                                num *= std::cos(16.0 * y[k - 1] / std::ldexp(1.0, static_cast<int>(k)));
                              else
                                den *= 1.0 - y[k - 1] / std::ldexp(1.0, 2 * static_cast<int>(k));
                            }
                            return num / den;
                          },
                          std::nullopt, "f1"};
  }
  if (id == "f2")
    return TargetFunction{[d](std::span<const double> y) {
                            double s = 0;
                            for (double v : y) s += v;
                            return std::exp(-s / (2.0 * static_cast<double>(d)));
                          },
                          std::nullopt, "f2"};
  if (id == "f3")
    return TargetFunction{[d](std::span<const double> y) {
                            double s = 0;
                            for (double v : y) s += std::cos(v);
                            return std::exp(-s / (8.0 * static_cast<double>(d)));
                          },
                          std::nullopt, "f3"};
  throw std::invalid_argument("unknown test function '" + id + "' (expected f1, f2, f3 or planted)");
}

/// Random lower set of the given size inside `set`, grown from {0} by adding
/// uniformly chosen admissible indices that lie in `set`.
inline IndexSet random_lower_subset(const IndexSet& set, std::size_t size, Rng& rng) {
  const std::size_t d = set.dim();
  std::vector<MultiIndex> members{MultiIndex(d)};
  std::unordered_map<MultiIndex, bool, MultiIndexHash> in{{MultiIndex(d), true}};
  if (!set.contains(MultiIndex(d))) throw std::invalid_argument("random_lower_subset: set lacks the zero index");
  while (members.size() < size) {
    std::vector<MultiIndex> frontier;
    for (auto& c : detail::lower_frontier(members, in, d))
      if (set.contains(c)) frontier.push_back(std::move(c));
    if (frontier.empty()) throw std::invalid_argument("random_lower_subset: set has no lower subset of that size");
    const auto& pick = frontier[rng.below(frontier.size())];
    members.push_back(pick);
    in.emplace(pick, true);
  }
  return IndexSet(d, members);
}

/// Expansion with +-1 coefficients on a random lower subset of `set`.
inline TargetFunction planted_function(const IndexSet& set, const BasisSpec& basis, std::size_t support, Rng& rng) {
  const IndexSet s = random_lower_subset(set, support, rng);
  Vector c(static_cast<Eigen::Index>(set.size()));
  c.setZero();
  for (const auto& i : s) c[static_cast<Eigen::Index>(set.find(i))] = rng.below(2) ? 1.0 : -1.0;
  return TargetFunction::from_expansion(basis, set, c, "planted");
}

// ---------------------------------------------------------------------------
// Configuration

enum class ExperimentKind { error_vs_m, qu_table, eta_sweep, noise_comparison };
enum class Scale { paper, desk, smoke };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::error_vs_m: return "error_vs_m";
    case ExperimentKind::qu_table: return "qu_table";
    case ExperimentKind::eta_sweep: return "eta_sweep";
    case ExperimentKind::noise_comparison: return "noise_comparison";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "error_vs_m") return ExperimentKind::error_vs_m;
  if (s == "qu_table") return ExperimentKind::qu_table;
  if (s == "eta_sweep") return ExperimentKind::eta_sweep;
  if (s == "noise_comparison") return ExperimentKind::noise_comparison;
  throw std::invalid_argument("unknown experiment '" + s + "'");
}

inline Scale scale_from_string(const std::string& s) {
  if (s == "paper") return Scale::paper;
  if (s == "desk") return Scale::desk;
  if (s == "smoke") return Scale::smoke;
  throw std::invalid_argument("unknown scale '" + s + "' (expected paper, desk or smoke)");
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::error_vs_m;
  Family family = Family::legendre;
  std::size_t d = 8;
  std::uint64_t k = 22;
  std::vector<std::size_t> m_grid{125, 250, 375, 500, 625, 750, 875, 1000};
  std::size_t trials = 50;
  std::vector<double> alphas{0.0, 0.5, 1.0, 2.0};
  std::string eta_strategy = "fixed";
  double eta = 0;
  double noise_level = 0;
  std::string function = "f2";
  std::size_t planted_support = 5;
  std::uint64_t seed = 1;
  std::string output = "results.csv";
  std::size_t mc_points = default_mc_points;
  std::size_t eta_grid_points = 31;
  double eta_log10_min = -5;
  double eta_log10_max = 1;
  QuMass qu_mass = QuMass::sum_weights;
  std::size_t max_iterations = 100'000;
  double tolerance = 1e-8;
  bool record_timing = false;

  void validate() const {
    if (d < 1) throw std::invalid_argument("config: d must be >= 1");
    if (k < 1) throw std::invalid_argument("config: k must be >= 1");
    if (m_grid.empty()) throw std::invalid_argument("config: m_grid is empty");
    for (std::size_t j = 0; j < m_grid.size(); ++j) {
      if (m_grid[j] < 1) throw std::invalid_argument("config: m values must be >= 1");
      if (j > 0 && m_grid[j] <= m_grid[j - 1]) throw std::invalid_argument("config: m_grid must be strictly increasing");
    }
    if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (kind != ExperimentKind::qu_table && alphas.empty()) throw std::invalid_argument("config: alphas is empty");
    for (double a : alphas)
      if (!(a >= 0)) throw std::invalid_argument("config: alpha values must be >= 0");
    eta_strategy_from_string(eta_strategy, eta);
    if (!(eta >= 0)) throw std::invalid_argument("config: eta must be >= 0");
    if (!(noise_level >= 0)) throw std::invalid_argument("config: noise_level must be >= 0");
    if ((kind == ExperimentKind::noise_comparison || kind == ExperimentKind::eta_sweep) && !(noise_level > 0))
      throw std::invalid_argument("config: " + to_string(kind) + " needs noise_level > 0");
    if (function != "planted") test_function(function, d);
    if (mc_points < 1) throw std::invalid_argument("config: mc_points must be >= 1");
    if (eta_grid_points < 1 || !(eta_log10_max >= eta_log10_min))
      throw std::invalid_argument("config: invalid eta grid");
    if (max_iterations < 1 || !(tolerance > 0)) throw std::invalid_argument("config: invalid solver settings");
  }

  SolverOptions solver_options() const {
    SolverOptions o;
    o.max_iterations = max_iterations;
    o.tolerance = tolerance;
    return o;
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"experiment", to_string(c.kind)},
                     {"basis", to_string(c.family)},
                     {"d", c.d},
                     {"k", c.k},
                     {"m_grid", c.m_grid},
                     {"trials", c.trials},
                     {"alphas", c.alphas},
                     {"eta_strategy", c.eta_strategy},
                     {"eta", c.eta},
                     {"noise_level", c.noise_level},
                     {"function", c.function},
                     {"planted_support", c.planted_support},
                     {"seed", c.seed},
                     {"output", c.output},
                     {"mc_points", c.mc_points},
                     {"eta_grid", {{"points", c.eta_grid_points}, {"log10_min", c.eta_log10_min}, {"log10_max", c.eta_log10_max}}},
                     {"qu_mass", c.qu_mass == QuMass::sum_weights ? "sum_weights" : "sum_squared_weights"},
                     {"solver", {{"max_iterations", c.max_iterations}, {"tolerance", c.tolerance}}},
                     {"record_timing", c.record_timing}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::set<std::string> known{"experiment", "basis", "d", "k", "m_grid", "trials", "alphas", "eta_strategy",
                                           "eta", "noise_level", "function", "planted_support", "seed", "output",
                                           "mc_points", "eta_grid", "qu_mass", "solver", "record_timing"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
  c = ExperimentConfig{};
  c.kind = experiment_kind_from_string(j.at("experiment").get<std::string>());
  if (j.contains("basis")) c.family = family_from_string(j["basis"].get<std::string>());
  c.d = j.value("d", c.d);
  c.k = j.value("k", c.k);
  c.m_grid = j.value("m_grid", c.m_grid);
  c.trials = j.value("trials", c.trials);
  c.alphas = j.value("alphas", c.alphas);
  c.eta_strategy = j.value("eta_strategy", c.eta_strategy);
  c.eta = j.value("eta", c.eta);
  c.noise_level = j.value("noise_level", c.noise_level);
  c.function = j.value("function", c.function);
  c.planted_support = j.value("planted_support", c.planted_support);
  c.seed = j.value("seed", c.seed);
  c.output = j.value("output", c.output);
  c.mc_points = j.value("mc_points", c.mc_points);
  if (j.contains("eta_grid")) {
    const auto& g = j["eta_grid"];
    c.eta_grid_points = g.value("points", c.eta_grid_points);
    c.eta_log10_min = g.value("log10_min", c.eta_log10_min);
    c.eta_log10_max = g.value("log10_max", c.eta_log10_max);
  }
  if (j.contains("qu_mass")) {
    const auto s = j["qu_mass"].get<std::string>();
    if (s == "sum_weights")
      c.qu_mass = QuMass::sum_weights;
    else if (s == "sum_squared_weights")
      c.qu_mass = QuMass::sum_squared_weights;
    else
      throw std::invalid_argument("config: unknown qu_mass '" + s + "'");
  }
  if (j.contains("solver")) {
    c.max_iterations = j["solver"].value("max_iterations", c.max_iterations);
    c.tolerance = j["solver"].value("tolerance", c.tolerance);
  }
  c.record_timing = j.value("record_timing", c.record_timing);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  auto c = j.get<ExperimentConfig>();
  c.validate();
  return c;
}

/// desk: at most 10 trials and every other m (largest kept).
/// smoke: d = 2, k = 6, three small m values, 3 trials.
inline ExperimentConfig apply_scale(ExperimentConfig c, Scale s) {
  if (s == Scale::desk) {
    c.trials = std::min<std::size_t>(c.trials, 10);
    std::vector<std::size_t> kept;
    for (std::size_t j = c.m_grid.size(); j-- > 0;)
      if ((c.m_grid.size() - 1 - j) % 2 == 0) kept.push_back(c.m_grid[j]);
    std::reverse(kept.begin(), kept.end());
    c.m_grid = kept;
  } else if (s == Scale::smoke) {
    c.d = 2;
    c.k = 12;  // n = 35
    c.trials = 3;
    c.m_grid = {8, 16, 24};
    c.mc_points = std::min<std::size_t>(c.mc_points, 10'000);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Records and CSV

struct TrialRecord {
  std::string experiment;
  std::string basis;
  std::size_t d = 0;
  std::uint64_t k = 0;
  std::size_t n = 0;
  double alpha = 0;
  std::size_t m = 0;
  std::size_t trial = 0;
  std::string eta_strategy;
  double eta = 0;
  double l2_error = 0;
  double linf_error = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::uint64_t seed = 0;
  double wall_ms = 0;
  double qu = 0;  // qu_table only
};

inline const char* csv_header() {
  return "experiment,basis,d,k,n,alpha,m,trial,eta_strategy,eta,l2_error,linf_error,iterations,converged,seed,wall_ms";
}
inline const char* qu_csv_header() { return "experiment,basis,d,k,n,m,trial,qu,seed,wall_ms"; }

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, res.ptr);
}

inline std::string csv_row(const TrialRecord& r) {
  std::ostringstream os;
  os << r.experiment << ',' << r.basis << ',' << r.d << ',' << r.k << ',' << r.n << ',' << format_double(r.alpha) << ','
     << r.m << ',' << r.trial << ',' << r.eta_strategy << ',' << format_double(r.eta) << ','
     << format_double(r.l2_error) << ',' << format_double(r.linf_error) << ',' << r.iterations << ','
     << (r.converged ? 1 : 0) << ',' << r.seed << ',' << format_double(r.wall_ms);
  return os.str();
}

inline std::string qu_csv_row(const TrialRecord& r) {
  std::ostringstream os;
  os << r.experiment << ',' << r.basis << ',' << r.d << ',' << r.k << ',' << r.n << ',' << r.m << ',' << r.trial << ','
     << format_double(r.qu) << ',' << r.seed << ',' << format_double(r.wall_ms);
  return os.str();
}

struct SummaryRow {
  std::string basis;
  double alpha = 0;
  std::size_t m = 0;
  std::string eta_strategy;
  std::optional<double> eta_point;  // set for eta-sweep grid rows
  std::size_t count = 0;
  double l2_mean = 0, l2_std = 0, linf_mean = 0, linf_std = 0, eta_mean = 0, eta_std = 0, qu_mean = 0, qu_std = 0;
  double converged_fraction = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
  return {mean, std::sqrt(var)};
}

}  // namespace detail

/// Means and sample standard deviations per (alpha, m, strategy[, eta]) in
/// first-appearance order. Failed trials (NaN errors) are left out of the
/// error statistics but counted in converged_fraction.
inline std::vector<SummaryRow> summarize(const std::vector<TrialRecord>& records) {
  using Key = std::tuple<double, std::size_t, std::string, double>;
  std::vector<Key> order;
  std::map<Key, std::vector<const TrialRecord*>> groups;
  for (const auto& r : records) {
    const bool sweep = r.eta_strategy == "sweep";
    Key key{r.alpha, r.m, r.eta_strategy, sweep ? r.eta : 0.0};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    SummaryRow s;
    s.basis = g.front()->basis;
    s.alpha = std::get<0>(key);
    s.m = std::get<1>(key);
    s.eta_strategy = std::get<2>(key);
    if (s.eta_strategy == "sweep") s.eta_point = std::get<3>(key);
    s.count = g.size();
    std::vector<double> l2, linf, eta, qu;
    std::size_t conv = 0;
    for (const auto* r : g) {
      if (std::isfinite(r->l2_error)) l2.push_back(r->l2_error);
      if (std::isfinite(r->linf_error)) linf.push_back(r->linf_error);
      if (std::isfinite(r->eta)) eta.push_back(r->eta);
      if (std::isfinite(r->qu)) qu.push_back(r->qu);
      conv += r->converged ? 1 : 0;
    }
    std::tie(s.l2_mean, s.l2_std) = detail::mean_std(l2);
    std::tie(s.linf_mean, s.linf_std) = detail::mean_std(linf);
    std::tie(s.eta_mean, s.eta_std) = detail::mean_std(eta);
    std::tie(s.qu_mean, s.qu_std) = detail::mean_std(qu);
    s.converged_fraction = static_cast<double>(conv) / static_cast<double>(g.size());
    out.push_back(s);
  }
  return out;
}

inline std::string summary_header(ExperimentKind kind) {
  if (kind == ExperimentKind::qu_table) return "basis,m,trials,qu_mean,qu_std";
  return "basis,alpha,m,eta_strategy,eta_point,trials,l2_mean,l2_std,linf_mean,linf_std,eta_mean,eta_std,"
         "converged_fraction";
}

inline std::string summary_row(const SummaryRow& s, ExperimentKind kind) {
  std::ostringstream os;
  if (kind == ExperimentKind::qu_table) {
    os << s.basis << ',' << s.m << ',' << s.count << ',' << format_double(s.qu_mean) << ',' << format_double(s.qu_std);
    return os.str();
  }
  os << s.basis << ',' << format_double(s.alpha) << ',' << s.m << ',' << s.eta_strategy << ','
     << (s.eta_point ? format_double(*s.eta_point) : std::string()) << ',' << s.count << ','
     << format_double(s.l2_mean) << ',' << format_double(s.l2_std) << ',' << format_double(s.linf_mean) << ','
     << format_double(s.linf_std) << ',' << format_double(s.eta_mean) << ',' << format_double(s.eta_std) << ','
     << format_double(s.converged_fraction);
  return os.str();
}

// ---------------------------------------------------------------------------
// Execution

/// Runs task(0..count-1) on `jobs` threads. Each task writes only its own slot.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct RunOptions {
  std::size_t jobs = 1;
  std::ostream* log = &std::cerr;
};

struct RunResult {
  std::vector<TrialRecord> records;
  std::size_t failures = 0;
  std::size_t nonconverged = 0;
};

namespace detail {

struct TrialContext {
  const ExperimentConfig& cfg;
  BasisSpec basis;
  IndexSet set;
};

inline Rng trial_rng(const ExperimentConfig& cfg, std::size_t m, std::size_t trial) { return Rng(cfg.seed, trial, m); }

inline TargetFunction trial_function(const TrialContext& ctx, const Rng& trial) {
  if (ctx.cfg.function == "planted") {
    Rng r = trial.derive("planted");
    return planted_function(ctx.set, ctx.basis, ctx.cfg.planted_support, r);
  }
  return test_function(ctx.cfg.function, ctx.cfg.d);
}

inline TrialRecord base_record(const TrialContext& ctx, double alpha, std::size_t m, std::size_t trial,
                               const Rng& rng) {
  TrialRecord r;
  r.experiment = to_string(ctx.cfg.kind);
  r.basis = std::string(to_string(ctx.basis.family));
  r.d = ctx.cfg.d;
  r.k = ctx.cfg.k;
  r.n = ctx.set.size();
  r.alpha = alpha;
  r.m = m;
  r.trial = trial;
  r.seed = rng.key();
  r.qu = std::nan("");
  return r;
}

inline void fill_errors(TrialRecord& r, const TargetFunction& f, const TrialContext& ctx, const Vector& coeffs,
                        const Rng& rng) {
  const Surrogate s(ctx.basis, ctx.set, coeffs);
  const ErrorReport e = error_report(f, s, ctx.cfg.mc_points, rng.derive("error"));
  r.l2_error = e.l2_error;
  r.linf_error = e.linf_error;
}

inline TrialRecord solve_record(TrialRecord r, const WeightedBasisPursuit& solver, const Vector& y,
                                const WeightVector& w, double eta, const TargetFunction& f, const TrialContext& ctx,
                                const Rng& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  const SolverResult res = solver.solve(y, w, eta, ctx.cfg.solver_options());
  r.eta = eta;
  r.iterations = res.iterations;
  r.converged = res.converged;
  fill_errors(r, f, ctx, res.coefficients, rng);
  if (ctx.cfg.record_timing)
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline TrialRecord failed_record(TrialRecord r, const std::string& strategy) {
  r.eta_strategy = strategy;
  r.eta = std::nan("");
  r.l2_error = std::nan("");
  r.linf_error = std::nan("");
  r.converged = false;
  return r;
}

inline std::vector<TrialRecord> error_vs_m_trial(const TrialContext& ctx, double alpha, std::size_t m,
                                                 std::size_t trial) {
  const Rng rng = trial_rng(ctx.cfg, m, trial);
  TrialRecord r = base_record(ctx, alpha, m, trial, rng);
  r.eta_strategy = ctx.cfg.eta_strategy;
  const TargetFunction f = trial_function(ctx, rng);
  const MeasurementSystem sys = sample_system(f, ctx.set, ctx.basis, m, ctx.cfg.noise_level, rng);
  const WeightVector w = intrinsic_weights(ctx.set, ctx.basis.family, alpha);
  const auto opts = ctx.cfg.solver_options();
  const auto t0 = std::chrono::steady_clock::now();
  const double eta = resolve_eta(eta_strategy_from_string(ctx.cfg.eta_strategy, ctx.cfg.eta), f, sys, w, rng, opts);
  const WeightedBasisPursuit solver(sys.matrix);
  r = solve_record(r, solver, sys.rhs, w, eta, f, ctx, rng);
  if (ctx.cfg.record_timing)
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {r};
}

inline std::vector<TrialRecord> noise_comparison_trial(const TrialContext& ctx, double alpha, std::size_t m,
                                                       std::size_t trial) {
  const Rng rng = trial_rng(ctx.cfg, m, trial);
  const TrialRecord base = base_record(ctx, alpha, m, trial, rng);
  const TargetFunction f = trial_function(ctx, rng);
  const MeasurementSystem clean = sample_system(f, ctx.set, ctx.basis, m, 0.0, rng);
  const MeasurementSystem noisy = sample_system(f, ctx.set, ctx.basis, m, ctx.cfg.noise_level, rng);
  const WeightVector w = intrinsic_weights(ctx.set, ctx.basis.family, alpha);
  const auto opts = ctx.cfg.solver_options();
  const WeightedBasisPursuit solver(noisy.matrix);
  std::vector<TrialRecord> out;
  auto named = [&](const std::string& s) {
    TrialRecord r = base;
    r.eta_strategy = s;
    return r;
  };
  out.push_back(solve_record(named("noiseless"), solver, clean.rhs, w, 0.0, f, ctx, rng));
  out.push_back(solve_record(named("fixed"), solver, noisy.rhs, w, 0.0, f, ctx, rng));
  Rng oracle_rng = rng.derive("oracle");
  const double eta_oracle = estimate_eta_oracle(f, ctx.set, ctx.basis, noisy.matrix, noisy.rhs, oracle_rng);
  out.push_back(solve_record(named("oracle"), solver, noisy.rhs, w, eta_oracle, f, ctx, rng));
  try {
    Rng cv_rng = rng.derive("cv");
    const auto cv = estimate_eta_cv(noisy.matrix, noisy.rhs, w, std::max(eta_oracle, opts.eta_floor), cv_rng, {}, opts);
    out.push_back(solve_record(named("cv"), solver, noisy.rhs, w, cv.eta, f, ctx, rng));
  } catch (const std::exception&) {
    out.push_back(failed_record(base, "cv"));
  }
  return out;
}

inline std::vector<TrialRecord> eta_sweep_trial(const TrialContext& ctx, double alpha, std::size_t m,
                                                std::size_t trial) {
  const Rng rng = trial_rng(ctx.cfg, m, trial);
  const TrialRecord base = base_record(ctx, alpha, m, trial, rng);
  const TargetFunction f = trial_function(ctx, rng);
  const MeasurementSystem noisy = sample_system(f, ctx.set, ctx.basis, m, ctx.cfg.noise_level, rng);
  const WeightVector w = intrinsic_weights(ctx.set, ctx.basis.family, alpha);
  const auto opts = ctx.cfg.solver_options();
  const WeightedBasisPursuit solver(noisy.matrix);
  std::vector<TrialRecord> out;
  const std::size_t g = ctx.cfg.eta_grid_points;
  for (std::size_t j = 0; j < g; ++j) {
    const double kappa = g == 1 ? ctx.cfg.eta_log10_min
                                : ctx.cfg.eta_log10_min + (ctx.cfg.eta_log10_max - ctx.cfg.eta_log10_min) *
                                                              static_cast<double>(j) / static_cast<double>(g - 1);
    TrialRecord r = base;
    r.eta_strategy = "sweep";
    out.push_back(solve_record(r, solver, noisy.rhs, w, std::pow(10.0, kappa), f, ctx, rng));
  }
  Rng oracle_rng = rng.derive("oracle");
  const double eta_oracle = estimate_eta_oracle(f, ctx.set, ctx.basis, noisy.matrix, noisy.rhs, oracle_rng);
  TrialRecord ro = base;
  ro.eta_strategy = "oracle";
  out.push_back(solve_record(ro, solver, noisy.rhs, w, eta_oracle, f, ctx, rng));
  try {
    Rng cv_rng = rng.derive("cv");
    const auto cv = estimate_eta_cv(noisy.matrix, noisy.rhs, w, std::max(eta_oracle, opts.eta_floor), cv_rng, {}, opts);
    TrialRecord rc = base;
    rc.eta_strategy = "cv";
    out.push_back(solve_record(rc, solver, noisy.rhs, w, cv.eta, f, ctx, rng));
  } catch (const std::exception&) {
    out.push_back(failed_record(base, "cv"));
  }
  return out;
}

inline std::vector<TrialRecord> qu_trial(const TrialContext& ctx, std::size_t m, std::size_t trial) {
  const Rng rng = trial_rng(ctx.cfg, m, trial);
  TrialRecord r = base_record(ctx, 0.0, m, trial, rng);
  const auto t0 = std::chrono::steady_clock::now();
  Rng point_rng = rng.derive("points");
  Matrix a = basis_matrix(ctx.set, ctx.basis, sample_measure(ctx.basis, m, point_rng));
  a /= std::sqrt(static_cast<double>(m));
  r.qu = qu_constant(a, ctx.set, ctx.basis, ctx.cfg.qu_mass);
  r.eta = std::nan("");
  r.l2_error = r.linf_error = std::nan("");
  r.converged = true;
  if (ctx.cfg.record_timing)
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {r};
}

}  // namespace detail

/// Runs every (alpha, m, trial) task of the configured experiment. Records are
/// returned in (alpha, m, trial) order regardless of completion order. A task
/// that throws yields a flagged record and the run continues.
inline RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& ropts = {}) {
  cfg.validate();
  const BasisSpec basis(cfg.family, cfg.d);
  const detail::TrialContext ctx{cfg, basis, hyperbolic_cross(cfg.d, cfg.k)};
  if (cfg.kind == ExperimentKind::qu_table)
    for (auto m : cfg.m_grid)
      if (m > ctx.set.size())
        throw std::invalid_argument("config: qu_table needs m <= n = " + std::to_string(ctx.set.size()));

  struct Task {
    double alpha;
    std::size_t m;
    std::size_t trial;
  };
  std::vector<Task> tasks;
  const std::vector<double> alphas = cfg.kind == ExperimentKind::qu_table ? std::vector<double>{0.0} : cfg.alphas;
  for (double a : alphas)
    for (auto m : cfg.m_grid)
      for (std::size_t t = 0; t < cfg.trials; ++t) tasks.push_back({a, m, t});

  std::vector<std::vector<TrialRecord>> slots(tasks.size());
  std::vector<char> failed(tasks.size(), 0);
  std::mutex log_mutex;
  parallel_for(tasks.size(), ropts.jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    try {
      switch (cfg.kind) {
        case ExperimentKind::error_vs_m: slots[i] = detail::error_vs_m_trial(ctx, t.alpha, t.m, t.trial); break;
        case ExperimentKind::noise_comparison:
          slots[i] = detail::noise_comparison_trial(ctx, t.alpha, t.m, t.trial);
          break;
        case ExperimentKind::eta_sweep: slots[i] = detail::eta_sweep_trial(ctx, t.alpha, t.m, t.trial); break;
        case ExperimentKind::qu_table: slots[i] = detail::qu_trial(ctx, t.m, t.trial); break;
      }
    } catch (const std::exception& e) {
      failed[i] = 1;
      const Rng rng = detail::trial_rng(cfg, t.m, t.trial);
      slots[i] = {detail::failed_record(detail::base_record(ctx, t.alpha, t.m, t.trial, rng), cfg.eta_strategy)};
      if (ropts.log) {
        std::lock_guard lock(log_mutex);
        *ropts.log << "trial failed (alpha=" << t.alpha << ", m=" << t.m << ", trial=" << t.trial << "): " << e.what()
                   << '\n';
      }
    }
  });

  RunResult out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out.failures += failed[i];
    for (auto& r : slots[i]) {
      if (!r.converged) ++out.nonconverged;
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

namespace detail {

inline RunResult run_kind(ExperimentConfig cfg, ExperimentKind kind, const RunOptions& ropts) {
  if (cfg.kind != kind)
    throw std::invalid_argument("config describes " + to_string(cfg.kind) + ", not " + to_string(kind));
  return run_experiment(cfg, ropts);
}

}  // namespace detail

inline RunResult run_error_vs_m(const ExperimentConfig& cfg, const RunOptions& o = {}) {
  return detail::run_kind(cfg, ExperimentKind::error_vs_m, o);
}
inline RunResult run_qu_table(const ExperimentConfig& cfg, const RunOptions& o = {}) {
  return detail::run_kind(cfg, ExperimentKind::qu_table, o);
}
inline RunResult run_noise_comparison(const ExperimentConfig& cfg, const RunOptions& o = {}) {
  return detail::run_kind(cfg, ExperimentKind::noise_comparison, o);
}
inline RunResult run_eta_sweep(const ExperimentConfig& cfg, const RunOptions& o = {}) {
  return detail::run_kind(cfg, ExperimentKind::eta_sweep, o);
}

inline void write_records(const std::vector<TrialRecord>& records, ExperimentKind kind, std::ostream& os) {
  const bool qu = kind == ExperimentKind::qu_table;
  os << (qu ? qu_csv_header() : csv_header()) << '\n';
  for (const auto& r : records) os << (qu ? qu_csv_row(r) : csv_row(r)) << '\n';
}

inline void write_summary(const std::vector<TrialRecord>& records, ExperimentKind kind, std::ostream& os) {
  os << summary_header(kind) << '\n';
  for (const auto& s : summarize(records)) os << summary_row(s, kind) << '\n';
}

/// `<stem>.summary.csv` next to `path`.
inline std::string summary_path(const std::string& path) {
  const auto dot = path.rfind('.');
  const auto slash = path.find_last_of("/\\");
  const std::string stem = dot != std::string::npos && (slash == std::string::npos || dot > slash) ? path.substr(0, dot) : path;
  return stem + ".summary.csv";
}

}  // namespace sparsepce
