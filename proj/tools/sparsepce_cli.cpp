#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sparsepce/sparsepce.hpp"

namespace {

using namespace sparsepce;

constexpr int exit_error = 1;
constexpr int exit_nonconverged = 3;

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scale = "paper";
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  bool allow_nonconverged = false;
  bool timing = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "override the master seed");
  cmd->add_option("--out", f.out, "override the output CSV path");
  cmd->add_option("--scale", f.scale, "preset: paper, desk or smoke")
      ->check(CLI::IsMember({"paper", "desk", "smoke"}));
  cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--allow-nonconverged", f.allow_nonconverged, "exit 0 even if some solves did not converge");
  cmd->add_flag("--timing", f.timing, "fill wall_ms (output is then not byte-reproducible)");
}

int run_configured(const RunFlags& f, ExperimentKind expected) {
  ExperimentConfig cfg = load_config(f.config);
  if (cfg.kind != expected)
    throw std::invalid_argument("config " + f.config + " describes " + to_string(cfg.kind) + ", not " +
                                to_string(expected));
  cfg = apply_scale(cfg, scale_from_string(f.scale));
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.output = f.out;
  if (f.timing) cfg.record_timing = true;
  cfg.validate();

  RunOptions ro;
  ro.jobs = f.jobs;
  const RunResult res = run_experiment(cfg, ro);

  std::ofstream os(cfg.output);
  if (!os) throw std::runtime_error("cannot write " + cfg.output);
  write_records(res.records, cfg.kind, os);
  const std::string spath = summary_path(cfg.output);
  std::ofstream ss(spath);
  if (!ss) throw std::runtime_error("cannot write " + spath);
  write_summary(res.records, cfg.kind, ss);

  std::cerr << to_string(cfg.kind) << ": " << res.records.size() << " rows -> " << cfg.output << " (summary " << spath
            << "), " << res.failures << " failed trials, " << res.nonconverged << " non-converged rows\n";
  if ((res.nonconverged > 0 || res.failures > 0) && !f.allow_nonconverged) return exit_nonconverged;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted l1 sparse polynomial approximation on lower sets"};
  app.require_subcommand(1);

  // index-set
  std::size_t is_d = 2;
  std::uint64_t is_k = 4;
  std::string is_kind = "hc";
  std::string is_basis = "legendre";
  double is_alpha = 1.0;
  std::string is_out;
  auto* index_cmd = app.add_subcommand("index-set", "build a hyperbolic cross or total-degree set");
  index_cmd->add_option("--d", is_d, "dimension")->required()->check(CLI::PositiveNumber);
  index_cmd->add_option("--k", is_k, "order (hc) or degree (td)")->required();
  index_cmd->add_option("--kind", is_kind, "hc or td")->check(CLI::IsMember({"hc", "td"}));
  index_cmd->add_option("--basis", is_basis, "weights family")->check(CLI::IsMember({"legendre", "chebyshev"}));
  index_cmd->add_option("--alpha", is_alpha, "weight exponent");
  index_cmd->add_option("--out", is_out, "write the set and weights as JSON");

  // fit
  std::string fit_function = "f2";
  std::string fit_basis = "legendre";
  std::size_t fit_d = 2, fit_m = 40;
  std::uint64_t fit_k = 6, fit_seed = 1;
  double fit_alpha = 1.0, fit_eta = 0.0, fit_noise = 0.0;
  std::string fit_strategy = "fixed";
  std::string fit_out, fit_dump;
  std::size_t fit_mc = default_mc_points;
  auto* fit_cmd = app.add_subcommand("fit", "one compressed-sensing fit with error estimates");
  fit_cmd->add_option("--function", fit_function, "f1, f2 or f3");
  fit_cmd->add_option("--basis", fit_basis)->check(CLI::IsMember({"legendre", "chebyshev"}));
  fit_cmd->add_option("--d", fit_d)->check(CLI::PositiveNumber);
  fit_cmd->add_option("--k", fit_k, "hyperbolic cross order");
  fit_cmd->add_option("--m", fit_m, "samples")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--alpha", fit_alpha, "weights u^alpha");
  fit_cmd->add_option("--eta-strategy", fit_strategy)->check(CLI::IsMember({"fixed", "oracle", "cv"}));
  fit_cmd->add_option("--eta", fit_eta, "value for the fixed strategy");
  fit_cmd->add_option("--noise", fit_noise, "norm of additive Gaussian noise");
  fit_cmd->add_option("--seed", fit_seed);
  fit_cmd->add_option("--mc-points", fit_mc, "Monte-Carlo points for the error estimates");
  fit_cmd->add_option("--out", fit_out, "write the surrogate as JSON");
  fit_cmd->add_option("--dump", fit_dump, "write A and y to <stem>.bin / <stem>.json");

  RunFlags evm, qut, noc, ets;
  auto* evm_cmd = app.add_subcommand("error-vs-m", "L2 and Linf error against m");
  add_run_flags(evm_cmd, evm);
  auto* qut_cmd = app.add_subcommand("qu-table", "mean Q_u(A) per m");
  add_run_flags(qut_cmd, qut);
  auto* noc_cmd = app.add_subcommand("noise-comparison", "eta strategies under additive noise");
  add_run_flags(noc_cmd, noc);
  auto* ets_cmd = app.add_subcommand("eta-sweep", "error against a log grid of eta");
  add_run_flags(ets_cmd, ets);

  // diagnostics
  std::string dg_basis = "chebyshev";
  std::size_t dg_d = 2, dg_m = 10, dg_trials = 0;
  std::uint64_t dg_k = 4, dg_seed = 1;
  auto* diag_cmd = app.add_subcommand("diagnostics", "Q_u, s(k) and weighted cardinality for one sampled matrix");
  diag_cmd->add_option("--basis", dg_basis)->check(CLI::IsMember({"legendre", "chebyshev"}));
  diag_cmd->add_option("--d", dg_d)->check(CLI::PositiveNumber);
  diag_cmd->add_option("--k", dg_k);
  diag_cmd->add_option("--m", dg_m)->check(CLI::PositiveNumber);
  diag_cmd->add_option("--seed", dg_seed);
  diag_cmd->add_option("--gram-trials", dg_trials, "also average (m/n) A A^T over this many draws");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*index_cmd) {
      const IndexSet s = is_kind == "hc" ? hyperbolic_cross(is_d, is_k) : total_degree(is_d, static_cast<std::uint32_t>(is_k));
      const WeightVector w = intrinsic_weights(s, family_from_string(is_basis), is_alpha);
      std::cout << "n = " << s.size() << "\nweighted cardinality = " << format_double(weighted_cardinality(s, w))
                << "\nmax degree = " << s.max_degree() << '\n';
      if (!is_out.empty()) {
        nlohmann::json j = s;
        j["weights"] = std::vector<double>(w.values().begin(), w.values().end());
        std::ofstream(is_out) << j.dump(1) << '\n';
      }
      return 0;
    }
    if (*fit_cmd) {
      const BasisSpec basis(family_from_string(fit_basis), fit_d);
      const TargetFunction f = test_function(fit_function, fit_d);
      FitOptions opts;
      opts.alpha = fit_alpha;
      opts.eta = eta_strategy_from_string(fit_strategy, fit_eta);
      opts.noise_level = fit_noise;
      const Rng trial(fit_seed);
      const FitResult r = fit_cs(f, hyperbolic_cross(fit_d, fit_k), basis, fit_m, opts, trial);
      const ErrorReport e = error_report(f, r.surrogate, fit_mc, trial.derive("error"));
      std::cout << "n = " << r.surrogate.index_set.size() << "\neta = " << format_double(r.eta)
                << "\nconverged = " << (r.solve.converged ? "yes" : "no") << " (" << r.solve.stop_reason << ", "
                << r.solve.iterations << " iterations)\nresidual = " << format_double(r.solve.residual_norm)
                << "\nl2_error = " << format_double(e.l2_error) << "\nlinf_error = " << format_double(e.linf_error)
                << '\n';
      if (!fit_out.empty()) std::ofstream(fit_out) << nlohmann::json(r.surrogate).dump(1) << '\n';
      if (!fit_dump.empty()) {
        const MeasurementSystem sys = sample_system(f, r.surrogate.index_set, basis, fit_m, fit_noise, trial);
        write_system_dump(sys, fit_dump, fit_seed, fit_function);
      }
      return r.solve.converged ? 0 : exit_nonconverged;
    }
    if (*evm_cmd) return run_configured(evm, ExperimentKind::error_vs_m);
    if (*qut_cmd) return run_configured(qut, ExperimentKind::qu_table);
    if (*noc_cmd) return run_configured(noc, ExperimentKind::noise_comparison);
    if (*ets_cmd) return run_configured(ets, ExperimentKind::eta_sweep);
    if (*diag_cmd) {
      const BasisSpec basis(family_from_string(dg_basis), dg_d);
      const IndexSet s = hyperbolic_cross(dg_d, dg_k);
      Rng rng(dg_seed);
      Matrix a = basis_matrix(s, basis, sample_measure(basis, dg_m, rng));
      a /= std::sqrt(static_cast<double>(dg_m));
      const WeightVector u = intrinsic_weights(s, basis.family, 1.0);
      std::cout << "n = " << s.size() << "\nsum u = " << format_double(u.values().sum())
                << "\nsum u^2 = " << format_double(weighted_cardinality(s, u)) << '\n';
      if (dg_d <= EnumerationGuard{}.max_dim && dg_k <= EnumerationGuard{}.max_size)
        std::cout << "s(k) = " << format_double(max_lower_weighted_cardinality(dg_d, dg_k, basis.family, SkMode::brute_force))
                  << '\n';
      std::cout << "s(k) bound = " << format_double(max_lower_weighted_cardinality(dg_d, dg_k, basis.family, SkMode::upper_bound))
                << '\n';
      if (dg_m <= s.size()) std::cout << "Q_u(A) = " << format_double(qu_constant(a, s, basis)) << '\n';
      if (dg_trials > 0)
        std::cout << "gram min eig = " << format_double(empirical_gram_min_eig(basis, s, dg_m, dg_trials, rng))
                  << " (1 - 1/n = " << format_double(1.0 - 1.0 / static_cast<double>(s.size())) << ")\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_error;
  }
  return 0;
}
