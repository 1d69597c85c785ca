#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "basis_spec.hpp"
#include "multiindex.hpp"
#include "polybasis.hpp"
#include "rng.hpp"

namespace sparsepce {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Known expansion sum_i c_i phi_i used as synthetic ground truth.
struct ReferenceExpansion {
  BasisSpec basis;
  IndexSet index_set;
  Vector coefficients;
};

/// Deterministic map from a point of [-1,1]^d to a real value.
struct TargetFunction {
  std::function<double(std::span<const double>)> evaluator;
  std::optional<ReferenceExpansion> reference;
  std::string name;

  double operator()(std::span<const double> z) const { return evaluator(z); }

  /// f = sum_{i in set} c_i phi_i.
  static TargetFunction from_expansion(BasisSpec basis, IndexSet set, Vector coeffs, std::string name = "expansion") {
    if (static_cast<std::size_t>(coeffs.size()) != set.size())
      throw std::invalid_argument("TargetFunction::from_expansion: coefficient count mismatch");
    ReferenceExpansion ref{basis, std::move(set), std::move(coeffs)};
    auto shared = std::make_shared<const ReferenceExpansion>(ref);
    auto eval = [shared](std::span<const double> z) {
      double s = 0;
      for (std::size_t k = 0; k < shared->index_set.size(); ++k) {
        const double c = shared->coefficients[static_cast<Eigen::Index>(k)];
        if (c != 0.0) s += c * eval_tensor(shared->index_set[k], z, shared->basis);
      }
      return s;
    };
    return TargetFunction{eval, std::move(ref), std::move(name)};
  }
};

/// Scaled sampling system: A_{jk} = phi_{i_k}(z_j) / sqrt(m), y_j = f(z_j) / sqrt(m) (+ noise_j).
struct MeasurementSystem {
  BasisSpec basis;
  IndexSet index_set;
  PointSet points;
  Matrix matrix;
  Vector rhs;
  std::optional<Vector> noise;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(matrix.cols()); }
};

/// f at each point, one value per row (unscaled).
inline Vector sample_values(const TargetFunction& f, const PointSet& points) {
  const auto m = points.rows();
  Vector y(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    std::span<const double> z(points.row(r).data(), static_cast<std::size_t>(points.cols()));
    double v;
    try {
      v = f(z);
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "target function '" << f.name << "' failed at point " << points.row(r) << ": " << e.what();
      throw std::runtime_error(os.str());
    }
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "target function '" << f.name << "' returned non-finite value at point " << points.row(r);
      throw std::runtime_error(os.str());
    }
    y[r] = v;
  }
  return y;
}

inline Matrix basis_matrix(const IndexSet& set, const BasisSpec& basis, const PointSet& points) {
  Matrix a(points.rows(), static_cast<Eigen::Index>(set.size()));
  eval_basis_matrix(set, points, basis, a);
  return a;
}

inline MeasurementSystem assemble(const TargetFunction& f, const IndexSet& set, const BasisSpec& basis,
                                  PointSet points) {
  if (set.empty()) throw std::invalid_argument("assemble: empty index set");
  if (points.rows() == 0) throw std::invalid_argument("assemble: no sample points");
  const double scale = 1.0 / std::sqrt(static_cast<double>(points.rows()));
  Matrix a = basis_matrix(set, basis, points);
  a *= scale;
  Vector y = sample_values(f, points) * scale;
  return MeasurementSystem{basis, set, std::move(points), std::move(a), std::move(y), std::nullopt};
}

/// e_Lambda = (1/sqrt(m)) (sum_{i in ref \ Lambda} c_i phi_i(z_j))_j.
inline Vector truncation_residual(const ReferenceExpansion& ref, const IndexSet& set, const PointSet& points) {
  if (ref.basis.dim != set.dim()) throw std::invalid_argument("truncation_residual: dimension mismatch");
  for (const auto& i : set)
    if (!ref.index_set.contains(i))
      throw std::invalid_argument("truncation_residual: reference set must contain Lambda (missing " + i.to_string() +
                                  ")");
  std::vector<MultiIndex> outside;
  std::vector<double> coeffs;
  for (std::size_t k = 0; k < ref.index_set.size(); ++k)
    if (!set.contains(ref.index_set[k])) {
      outside.push_back(ref.index_set[k]);
      coeffs.push_back(ref.coefficients[static_cast<Eigen::Index>(k)]);
    }
  Vector e = Vector::Zero(points.rows());
  if (outside.empty()) return e;
  const IndexSet rest(set.dim(), outside);
  // IndexSet re-sorts; recover coefficients by lookup.
  Vector c(static_cast<Eigen::Index>(rest.size()));
  for (std::size_t k = 0; k < rest.size(); ++k)
    c[static_cast<Eigen::Index>(k)] = ref.coefficients[static_cast<Eigen::Index>(ref.index_set.find(rest[k]))];
  e = basis_matrix(rest, ref.basis, points) * c;
  return e / std::sqrt(static_cast<double>(points.rows()));
}

/// Gaussian noise vector rescaled to have Euclidean norm exactly `level`.
inline Vector gaussian_noise(std::size_t m, double level, Rng& rng) {
  if (level < 0) throw std::invalid_argument("gaussian_noise: level must be >= 0");
  Vector g(static_cast<Eigen::Index>(m));
  for (Eigen::Index j = 0; j < g.size(); ++j) g[j] = rng.normal();
  if (level == 0) return Vector::Zero(g.size());
  return level * g / g.norm();
}

/// y <- y + n with n = level * g / ||g||_2.
inline MeasurementSystem add_noise(MeasurementSystem sys, double level, Rng& rng) {
  Vector n = gaussian_noise(sys.rows(), level, rng);
  sys.rhs += n;
  sys.noise = sys.noise ? Vector(*sys.noise + n) : n;
  return sys;
}

// ---------------------------------------------------------------------------
// Binary dump: <stem>.bin holds A (row-major) then y as little-endian float64;
// <stem>.json describes it.

namespace detail {

inline void write_le_doubles(std::ostream& os, const double* p, std::size_t count) {
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits;
    std::memcpy(&bits, p + k, sizeof bits);
    char buf[8];
    for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    os.write(buf, 8);
  }
}

inline void read_le_doubles(std::istream& is, double* p, std::size_t count) {
  for (std::size_t k = 0; k < count; ++k) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) throw std::runtime_error("binary dump truncated");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{buf[b]} << (8 * b);
    std::memcpy(p + k, &bits, sizeof bits);
  }
}

}  // namespace detail

inline void write_system_dump(const MeasurementSystem& sys, const std::filesystem::path& stem, std::uint64_t seed,
                              const std::string& config_hash) {
  {
    std::ofstream os(stem.string() + ".bin", std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + stem.string() + ".bin");
    detail::write_le_doubles(os, sys.matrix.data(), static_cast<std::size_t>(sys.matrix.size()));
    detail::write_le_doubles(os, sys.rhs.data(), static_cast<std::size_t>(sys.rhs.size()));
  }
  nlohmann::json meta{{"rows", sys.rows()},
                      {"cols", sys.cols()},
                      {"d", sys.basis.dim},
                      {"basis", to_string(sys.basis.family)},
                      {"layout", "A row-major float64 LE, then y float64 LE"},
                      {"seed", seed},
                      {"config_hash", config_hash},
                      {"noisy", sys.noise.has_value()}};
  std::ofstream js(stem.string() + ".json");
  js << meta.dump(2) << '\n';
}

inline std::pair<Matrix, Vector> read_system_dump(const std::filesystem::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot open " + stem.string() + ".json");
  const auto meta = nlohmann::json::parse(js);
  const auto rows = meta.at("rows").get<Eigen::Index>();
  const auto cols = meta.at("cols").get<Eigen::Index>();
  std::ifstream is(stem.string() + ".bin", std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + stem.string() + ".bin");
  Matrix a(rows, cols);
  Vector y(rows);
  detail::read_le_doubles(is, a.data(), static_cast<std::size_t>(a.size()));
  detail::read_le_doubles(is, y.data(), static_cast<std::size_t>(y.size()));
  return {std::move(a), std::move(y)};
}

}  // namespace sparsepce
