#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "basis_spec.hpp"
#include "measurement.hpp"
#include "multiindex.hpp"
#include "polybasis.hpp"
#include "rng.hpp"
#include "solvers.hpp"

namespace sparsepce {

// ---------------------------------------------------------------------------
// Surrogates

struct Provenance {
  std::string estimator;     // "cs" or "oracle_ls"
  std::string eta_strategy;  // "fixed", "oracle", "cv", or "" for least squares
  double eta = 0;
  double alpha = 0;
  std::uint64_t seed = 0;
  bool converged = true;
};

/// f~ = sum_{i in set} c_i phi_i.
struct Surrogate {
  BasisSpec basis;
  IndexSet index_set;
  Vector coefficients;
  Provenance provenance;

  Surrogate(BasisSpec b, IndexSet s, Vector c, Provenance p = {})
      : basis(b), index_set(std::move(s)), coefficients(std::move(c)), provenance(std::move(p)) {
    if (static_cast<std::size_t>(coefficients.size()) != index_set.size())
      throw std::invalid_argument("Surrogate: coefficient count does not match index set");
    if (index_set.dim() != basis.dim) throw std::invalid_argument("Surrogate: dimension mismatch");
  }
};

inline double evaluate_surrogate(const Surrogate& s, std::span<const double> z) {
  if (z.size() != s.basis.dim) throw std::invalid_argument("evaluate_surrogate: dimension mismatch");
  double v = 0;
  for (std::size_t k = 0; k < s.index_set.size(); ++k) {
    const double c = s.coefficients[static_cast<Eigen::Index>(k)];
    if (c != 0.0) v += c * eval_tensor(s.index_set[k], z, s.basis);
  }
  return v;
}

/// Values at every row of `points`, assembled in row blocks to bound memory.
inline Vector evaluate_surrogate(const Surrogate& s, const PointSet& points, Eigen::Index block_rows = 2048) {
  if (static_cast<std::size_t>(points.cols()) != s.basis.dim)
    throw std::invalid_argument("evaluate_surrogate: dimension mismatch");
  Vector out(points.rows());
  for (Eigen::Index r0 = 0; r0 < points.rows(); r0 += block_rows) {
    const Eigen::Index rows = std::min(block_rows, points.rows() - r0);
    const PointSet block = points.middleRows(r0, rows);
    out.segment(r0, rows) = basis_matrix(s.index_set, s.basis, block) * s.coefficients;
  }
  return out;
}

inline void to_json(nlohmann::json& j, const Surrogate& s) {
  j = nlohmann::json{{"basis", to_string(s.basis.family)},
                     {"d", s.basis.dim},
                     {"index_set", s.index_set},
                     {"coefficients", std::vector<double>(s.coefficients.begin(), s.coefficients.end())},
                     {"provenance",
                      {{"estimator", s.provenance.estimator},
                       {"eta_strategy", s.provenance.eta_strategy},
                       {"eta", s.provenance.eta},
                       {"alpha", s.provenance.alpha},
                       {"converged", s.provenance.converged}}},
                     {"seed", s.provenance.seed}};
}

inline Surrogate surrogate_from_json(const nlohmann::json& j) {
  const BasisSpec basis(family_from_string(j.at("basis").get<std::string>()), j.at("d").get<std::size_t>());
  auto set = j.at("index_set").get<IndexSet>();
  const auto coeffs = j.at("coefficients").get<std::vector<double>>();
  Provenance p;
  if (j.contains("provenance")) {
    const auto& pj = j.at("provenance");
    p.estimator = pj.value("estimator", "");
    p.eta_strategy = pj.value("eta_strategy", "");
    p.eta = pj.value("eta", 0.0);
    p.alpha = pj.value("alpha", 0.0);
    p.converged = pj.value("converged", true);
  }
  p.seed = j.value("seed", std::uint64_t{0});
  return Surrogate(basis, std::move(set), Eigen::Map<const Vector>(coeffs.data(), static_cast<Eigen::Index>(coeffs.size())),
                   p);
}

// ---------------------------------------------------------------------------
// eta strategies

struct FixedEta {
  double value = 0;
};
struct OracleEta {};
struct CrossValidationEta {
  std::size_t grid_points = 11;
  double log10_radius = 3;
  double reconstruction_fraction = 0.75;
};

using EtaStrategy = std::variant<FixedEta, OracleEta, CrossValidationEta>;

inline std::string to_string(const EtaStrategy& s) {
  if (std::holds_alternative<FixedEta>(s)) return "fixed";
  if (std::holds_alternative<OracleEta>(s)) return "oracle";
  return "cv";
}

inline EtaStrategy eta_strategy_from_string(const std::string& name, double fixed_value = 0) {
  if (name == "fixed") return FixedEta{fixed_value};
  if (name == "oracle") return OracleEta{};
  if (name == "cv") return CrossValidationEta{};
  throw std::invalid_argument("unknown eta strategy '" + name + "' (expected fixed, oracle or cv)");
}

// ---------------------------------------------------------------------------
// Sampling and fitting

/// Points from the "points" stream of `trial`, noise from its "noise" stream.
inline MeasurementSystem sample_system(const TargetFunction& f, const IndexSet& set, const BasisSpec& basis,
                                       std::size_t m, double noise_level, const Rng& trial) {
  Rng point_rng = trial.derive("points");
  MeasurementSystem sys = assemble(f, set, basis, sample_measure(basis, m, point_rng));
  if (noise_level > 0) {
    Rng noise_rng = trial.derive("noise");
    sys = add_noise(std::move(sys), noise_level, noise_rng);
  }
  return sys;
}

/// Least-squares fit on the columns of `set` from m fresh samples.
inline Surrogate fit_oracle_ls(const TargetFunction& f, const IndexSet& set, const BasisSpec& basis, std::size_t m,
                               Rng& rng) {
  if (m < set.size())
    throw std::invalid_argument("fit_oracle_ls: need m >= |S| (m=" + std::to_string(m) +
                                ", |S|=" + std::to_string(set.size()) + ")");
  const PointSet pts = sample_measure(basis, m, rng);
  const Matrix a = basis_matrix(set, basis, pts);
  const Vector y = sample_values(f, pts);
  Provenance p{"oracle_ls", "", 0, 0, rng.key(), true};
  return Surrogate(basis, set, solve_least_squares(a, y), p);
}

inline Surrogate fit_oracle_ls(const TargetFunction& f, const IndexSet& set, const BasisSpec& basis, std::size_t m,
                               std::uint64_t seed) {
  Rng rng(seed);
  return fit_oracle_ls(f, set, basis, m, rng);
}

/// eta = ||A c_oracle - y||_2 with c_oracle the least-squares fit on Lambda
/// from 10 n fresh samples.
inline double estimate_eta_oracle(const TargetFunction& f, const IndexSet& set, const BasisSpec& basis,
                                  const Matrix& a, const Vector& y, Rng& rng) {
  if (static_cast<std::size_t>(a.cols()) != set.size() || a.rows() != y.size())
    throw std::invalid_argument("estimate_eta_oracle: dimension mismatch");
  const Surrogate oracle = fit_oracle_ls(f, set, basis, 10 * set.size(), rng);
  return (a * oracle.coefficients - y).norm();
}

struct CrossValidationResult {
  double eta = 0;
  std::vector<double> candidates;
  std::vector<double> scores;  // NaN where the solve failed
};

/// Candidates eta_ref 10^kappa, kappa on an equispaced grid in [-r, r]. Rows
/// split once into reconstruction/validation; the reconstruction system keeps
/// its 1/sqrt(m) row scaling, so its noise level is eta sqrt(m_r / m).
inline CrossValidationResult estimate_eta_cv(const Matrix& a, const Vector& y, const WeightVector& w, double eta_ref,
                                             Rng& rng, const CrossValidationEta& cfg = {},
                                             const SolverOptions& opts = {}) {
  if (!(eta_ref > 0) || !std::isfinite(eta_ref)) throw std::invalid_argument("estimate_eta_cv: eta_ref must be > 0");
  if (cfg.grid_points < 1) throw std::invalid_argument("estimate_eta_cv: empty grid");
  const auto m = static_cast<std::size_t>(a.rows());
  if (m < 2) throw std::invalid_argument("estimate_eta_cv: need at least 2 rows");
  auto m_r = static_cast<std::size_t>(std::floor(cfg.reconstruction_fraction * static_cast<double>(m)));
  m_r = std::clamp<std::size_t>(m_r, 1, m - 1);

  std::vector<Eigen::Index> rows(m);
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  shuffle(rows.begin(), rows.end(), rng);
  std::sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(m_r));
  std::sort(rows.begin() + static_cast<std::ptrdiff_t>(m_r), rows.end());

  Matrix a_r(static_cast<Eigen::Index>(m_r), a.cols()), a_v(static_cast<Eigen::Index>(m - m_r), a.cols());
  Vector y_r(a_r.rows()), y_v(a_v.rows());
  for (std::size_t j = 0; j < m; ++j) {
    const auto src = rows[j];
    if (j < m_r) {
      a_r.row(static_cast<Eigen::Index>(j)) = a.row(src);
      y_r[static_cast<Eigen::Index>(j)] = y[src];
    } else {
      a_v.row(static_cast<Eigen::Index>(j - m_r)) = a.row(src);
      y_v[static_cast<Eigen::Index>(j - m_r)] = y[src];
    }
  }

  const WeightedBasisPursuit solver(a_r);
  const double shrink = std::sqrt(static_cast<double>(m_r) / static_cast<double>(m));
  CrossValidationResult out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < cfg.grid_points; ++g) {
    const double kappa =
        cfg.grid_points == 1
            ? 0.0
            : -cfg.log10_radius + 2.0 * cfg.log10_radius * static_cast<double>(g) / static_cast<double>(cfg.grid_points - 1);
    const double eta = eta_ref * std::pow(10.0, kappa);
    out.candidates.push_back(eta);
    double score = std::numeric_limits<double>::quiet_NaN();
    try {
      const SolverResult r = solver.solve(y_r, w, eta * shrink, opts);
      if (r.coefficients.allFinite()) score = (a_v * r.coefficients - y_v).norm();
    } catch (const std::exception&) {
    }
    out.scores.push_back(score);
    if (std::isfinite(score) && score < best) {
      best = score;
      out.eta = eta;
    }
  }
  if (!std::isfinite(best)) throw std::runtime_error("estimate_eta_cv: every candidate solve failed");
  return out;
}

struct FitOptions {
  double alpha = 1.0;
  EtaStrategy eta = FixedEta{0.0};
  double noise_level = 0.0;
  SolverOptions solver;
};

struct FitResult {
  Surrogate surrogate;
  SolverResult solve;
  double eta = 0;
  std::optional<double> eta_oracle;
  std::optional<CrossValidationResult> cv;
};

/// Resolves eta for `strategy` on an assembled system. The oracle stream is
/// trial.derive("oracle"), the validation split trial.derive("cv").
inline double resolve_eta(const EtaStrategy& strategy, const TargetFunction& f, const MeasurementSystem& sys,
                          const WeightVector& w, const Rng& trial, const SolverOptions& opts,
                          std::optional<double>* eta_oracle = nullptr,
                          std::optional<CrossValidationResult>* cv = nullptr) {
  if (const auto* fixed = std::get_if<FixedEta>(&strategy)) {
    if (!(fixed->value >= 0)) throw std::invalid_argument("fixed eta must be >= 0");
    return fixed->value;
  }
  Rng oracle_rng = trial.derive("oracle");
  const double oracle = estimate_eta_oracle(f, sys.index_set, sys.basis, sys.matrix, sys.rhs, oracle_rng);
  if (eta_oracle) *eta_oracle = oracle;
  if (std::holds_alternative<OracleEta>(strategy)) return oracle;
  Rng cv_rng = trial.derive("cv");
  auto result = estimate_eta_cv(sys.matrix, sys.rhs, w, std::max(oracle, opts.eta_floor), cv_rng,
                                std::get<CrossValidationEta>(strategy), opts);
  const double eta = result.eta;
  if (cv) *cv = std::move(result);
  return eta;
}

/// Compressed-sensing fit on a given index set: sample, resolve eta, solve
/// weighted QCBP with w = u^alpha.
inline FitResult fit_cs(const TargetFunction& f, const IndexSet& set, const BasisSpec& basis, std::size_t m,
                        const FitOptions& opts, const Rng& trial) {
  if (m < 1) throw std::invalid_argument("fit_cs: m must be >= 1");
  if (!(opts.alpha >= 0)) throw std::invalid_argument("fit_cs: alpha must be >= 0");
  const MeasurementSystem sys = sample_system(f, set, basis, m, opts.noise_level, trial);
  const WeightVector w = intrinsic_weights(set, basis.family, opts.alpha);
  std::optional<double> oracle;
  std::optional<CrossValidationResult> cv;
  const double eta = resolve_eta(opts.eta, f, sys, w, trial, opts.solver, &oracle, &cv);
  SolverResult r = solve_wqcbp(sys.matrix, sys.rhs, w, eta, opts.solver);
  Provenance p{"cs", to_string(opts.eta), eta, opts.alpha, trial.key(), r.converged};
  Surrogate s(basis, set, r.coefficients, p);
  return FitResult{std::move(s), std::move(r), eta, oracle, std::move(cv)};
}

/// Convenience form on Lambda = hyperbolic cross of order k.
inline FitResult fit_cs(const TargetFunction& f, std::size_t d, std::uint64_t k, Family family, std::size_t m,
                        double alpha, const EtaStrategy& eta, std::uint64_t seed) {
  FitOptions opts;
  opts.alpha = alpha;
  opts.eta = eta;
  return fit_cs(f, hyperbolic_cross(d, k), BasisSpec(family, d), m, opts, Rng(seed));
}

// ---------------------------------------------------------------------------
// Best k-term approximation in a lower set

enum class KTermMode { exact, greedy };

struct KTermResult {
  IndexSet set;
  double sigma;  // ||c - c_S||_{1,u}
};

/// Chooses a lower set S with |S| <= k maximizing sum_{i in S} u_i |c_i|
/// (coefficients outside Lambda count as zero) and returns S with
/// sigma = sum_{i in Lambda \ S} u_i |c_i|.
inline KTermResult best_lower_kterm(const IndexSet& set, const Vector& c, std::size_t k, const WeightVector& u,
                                    KTermMode mode, EnumerationGuard guard = {}) {
  if (k < 1) throw std::invalid_argument("best_lower_kterm: k must be >= 1");
  if (static_cast<std::size_t>(c.size()) != set.size() || u.size() != set.size())
    throw std::invalid_argument("best_lower_kterm: coefficients and weights must align with the index set");
  const std::size_t d = set.dim();
  std::unordered_map<MultiIndex, double, MultiIndexHash> value;
  double total = 0;
  for (std::size_t j = 0; j < set.size(); ++j) {
    const double v = u[j] * std::abs(c[static_cast<Eigen::Index>(j)]);
    value.emplace(set[j], v);
    total += v;
  }
  auto value_of = [&](const MultiIndex& i) {
    const auto it = value.find(i);
    return it == value.end() ? 0.0 : it->second;
  };

  if (mode == KTermMode::exact) {
    double best = -1;
    std::vector<MultiIndex> best_set;
    enumerate_lower_sets(
        d, k,
        [&](const IndexSet& s) {
          double kept = 0;
          for (const auto& i : s) kept += value_of(i);
          if (kept > best) {
            best = kept;
            best_set = s.indices();
          }
        },
        guard);
    return KTermResult{IndexSet(d, best_set), std::max(0.0, total - best)};
  }

  std::vector<MultiIndex> members{MultiIndex(d)};
  std::unordered_map<MultiIndex, bool, MultiIndexHash> in{{MultiIndex(d), true}};
  double kept = value_of(members.front());
  while (members.size() < k) {
    const auto frontier = detail::lower_frontier(members, in, d);
    double best = -1;
    const MultiIndex* pick = nullptr;
    for (const auto& cand : frontier) {
      const double v = value_of(cand);
      if (v > best) {
        best = v;
        pick = &cand;
      }
    }
    if (!pick) break;
    members.push_back(*pick);
    in.emplace(*pick, true);
    kept += best;
  }
  return KTermResult{IndexSet(d, members), std::max(0.0, total - kept)};
}

}  // namespace sparsepce
