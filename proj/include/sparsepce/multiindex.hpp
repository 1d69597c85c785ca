#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "basis_spec.hpp"

namespace sparsepce {

/// Tuple (i_1, ..., i_d) of nonnegative polynomial degrees.
class MultiIndex {
 public:
  using value_type = std::uint32_t;

  MultiIndex() = default;
  explicit MultiIndex(std::size_t d) : entries_(d, 0) {}
  MultiIndex(std::initializer_list<value_type> entries) : entries_(entries) {}
  explicit MultiIndex(std::vector<value_type> entries) : entries_(std::move(entries)) {}

  static MultiIndex unit(std::size_t d, std::size_t j) {
    MultiIndex e(d);
    e.entries_.at(j) = 1;
    return e;
  }

  std::size_t dim() const noexcept { return entries_.size(); }
  value_type operator[](std::size_t j) const { return entries_[j]; }
  value_type& operator[](std::size_t j) { return entries_[j]; }
  std::span<const value_type> entries() const noexcept { return entries_; }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  /// prod_j (i_j + 1): the cardinality of the box [0, i], saturating.
  std::uint64_t box_size() const noexcept {
    std::uint64_t p = 1;
    for (auto v : entries_) {
      const std::uint64_t f = std::uint64_t{v} + 1;
      if (p > std::numeric_limits<std::uint64_t>::max() / f) return std::numeric_limits<std::uint64_t>::max();
      p *= f;
    }
    return p;
  }

  /// Number of nonzero entries, ||i||_0.
  std::size_t support_size() const noexcept {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](auto v) { return v != 0; }));
  }

  value_type max_degree() const noexcept {
    return entries_.empty() ? 0 : *std::max_element(entries_.begin(), entries_.end());
  }

  bool is_zero() const noexcept {
    return std::all_of(entries_.begin(), entries_.end(), [](auto v) { return v == 0; });
  }

  /// True iff i_j <= other_j for every j.
  bool dominated_by(const MultiIndex& other) const {
    if (dim() != other.dim()) throw std::invalid_argument("MultiIndex: dimension mismatch");
    for (std::size_t j = 0; j < dim(); ++j)
      if (entries_[j] > other.entries_[j]) return false;
    return true;
  }

  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;

  /// Graded lexicographic: by box size prod(i_j + 1), then lexicographically.
  friend std::strong_ordering operator<=>(const MultiIndex& a, const MultiIndex& b) {
    if (auto c = a.box_size() <=> b.box_size(); c != 0) return c;
    return std::lexicographical_compare_three_way(a.entries_.begin(), a.entries_.end(), b.entries_.begin(),
                                                  b.entries_.end());
  }

  std::string to_string() const {
    std::string s = "(";
    for (std::size_t j = 0; j < entries_.size(); ++j) {
      if (j) s += ',';
      s += std::to_string(entries_[j]);
    }
    return s + ")";
  }

 private:
  std::vector<value_type> entries_;
};

struct MultiIndexHash {
  std::size_t operator()(const MultiIndex& i) const noexcept {
    std::uint64_t h = 0x84222325cbf29ce4ULL;
    for (auto v : i) {
      h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

/// Finite set of distinct multi-indices of a common dimension, kept in
/// canonical (graded lexicographic) order. Immutable after construction.
class IndexSet {
 public:
  IndexSet() = default;

  IndexSet(std::size_t d, std::vector<MultiIndex> indices) : dim_(d), indices_(std::move(indices)) {
    if (d == 0) throw std::invalid_argument("IndexSet: dimension must be >= 1");
    for (const auto& i : indices_)
      if (i.dim() != d)
        throw std::invalid_argument("IndexSet: index " + i.to_string() + " does not have dimension " +
                                    std::to_string(d));
    std::sort(indices_.begin(), indices_.end());
    if (auto it = std::adjacent_find(indices_.begin(), indices_.end()); it != indices_.end())
      throw std::invalid_argument("IndexSet: duplicate index " + it->to_string());
    position_.reserve(indices_.size());
    for (std::size_t k = 0; k < indices_.size(); ++k) position_.emplace(indices_[k], k);
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  const MultiIndex& operator[](std::size_t k) const { return indices_[k]; }
  const std::vector<MultiIndex>& indices() const noexcept { return indices_; }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }

  bool contains(const MultiIndex& i) const { return position_.contains(i); }

  /// Position of `i` in canonical order, or size() if absent.
  std::size_t find(const MultiIndex& i) const {
    auto it = position_.find(i);
    return it == position_.end() ? indices_.size() : it->second;
  }

  std::uint32_t max_degree() const noexcept {
    std::uint32_t m = 0;
    for (const auto& i : indices_) m = std::max(m, i.max_degree());
    return m;
  }

  friend bool operator==(const IndexSet& a, const IndexSet& b) { return a.dim_ == b.dim_ && a.indices_ == b.indices_; }

 private:
  std::size_t dim_ = 0;
  std::vector<MultiIndex> indices_;
  std::unordered_map<MultiIndex, std::size_t, MultiIndexHash> position_;
};

inline void to_json(nlohmann::json& j, const IndexSet& s) {
  auto rows = nlohmann::json::array();
  for (const auto& i : s) rows.push_back(std::vector<std::uint32_t>(i.begin(), i.end()));
  j = nlohmann::json{{"d", s.dim()}, {"indices", std::move(rows)}};
}

inline void from_json(const nlohmann::json& j, IndexSet& s) {
  const auto d = j.at("d").get<std::size_t>();
  std::vector<MultiIndex> idx;
  for (const auto& row : j.at("indices")) idx.emplace_back(row.get<std::vector<std::uint32_t>>());
  s = IndexSet(d, std::move(idx));
}

/// Positive weights aligned with an IndexSet ordering; every weight >= 1.
class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(Eigen::VectorXd values) : values_(std::move(values)) {
    for (Eigen::Index k = 0; k < values_.size(); ++k)
      if (!(values_[k] >= 1.0) || !std::isfinite(values_[k]))
        throw std::invalid_argument("WeightVector: weights must be finite and >= 1");
  }
  static WeightVector ones(std::size_t n) { return WeightVector(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n))); }

  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t k) const { return values_[static_cast<Eigen::Index>(k)]; }
  const Eigen::VectorXd& values() const noexcept { return values_; }

 private:
  Eigen::VectorXd values_;
};

// ---------------------------------------------------------------------------
// Lower sets and hyperbolic crosses

/// True iff S is downward closed. Checking the immediate predecessors
/// i - e_j of every member is sufficient by induction on |i|_1.
inline bool is_lower(const IndexSet& s) {
  if (s.empty()) throw std::invalid_argument("is_lower: empty set");
  for (const auto& i : s) {
    MultiIndex pred = i;
    for (std::size_t j = 0; j < s.dim(); ++j) {
      if (pred[j] == 0) continue;
      --pred[j];
      const bool ok = s.contains(pred);
      ++pred[j];
      if (!ok) return false;
    }
  }
  return true;
}

/// Saturating min{2 k^3 4^d, e^2 k^(2 + log2 d)}, rounded up.
inline std::uint64_t hc_cardinality_bound(std::size_t d, std::uint64_t k) {
  if (d == 0 || k == 0) throw std::invalid_argument("hc_cardinality_bound: d and k must be >= 1");
  const double kd = static_cast<double>(k);
  const double log_b1 = std::log(2.0) + 3.0 * std::log(kd) + static_cast<double>(d) * std::log(4.0);
  const double log_b2 = 2.0 + (2.0 + std::log2(static_cast<double>(d))) * std::log(kd);
  const double log_b = std::min(log_b1, log_b2);
  constexpr auto saturated = std::numeric_limits<std::uint64_t>::max();
  if (log_b >= std::log(static_cast<double>(saturated))) return saturated;
  // Guard against exp() landing a hair above an exact integer.
  return static_cast<std::uint64_t>(std::ceil(std::exp(log_b) * (1.0 - 1e-15)));
}

namespace detail {

template <typename Visit>
void visit_hyperbolic_cross(std::size_t d, std::uint64_t k, MultiIndex& cur, std::size_t j, std::uint64_t prod,
                            Visit& visit) {
  if (j == d) {
    visit(cur);
    return;
  }
  for (std::uint64_t v = 0; prod * (v + 1) <= k; ++v) {
    cur[j] = static_cast<MultiIndex::value_type>(v);
    visit_hyperbolic_cross(d, k, cur, j + 1, prod * (v + 1), visit);
    if (visit.stop) break;
  }
  cur[j] = 0;
}

struct CountingVisitor {
  std::uint64_t count = 0;
  std::uint64_t cap;
  bool stop = false;
  void operator()(const MultiIndex&) {
    if (++count > cap) stop = true;
  }
};

}  // namespace detail

/// Exact |{i : prod(i_j + 1) <= k}| without materializing; stops early once
/// the count exceeds `cap` (returns cap + 1 in that case).
inline std::uint64_t hc_count(std::size_t d, std::uint64_t k,
                              std::uint64_t cap = std::numeric_limits<std::uint64_t>::max() - 1) {
  if (d == 0 || k == 0) throw std::invalid_argument("hc_count: d and k must be >= 1");
  MultiIndex cur(d);
  detail::CountingVisitor v{0, cap};
  detail::visit_hyperbolic_cross(d, k, cur, 0, 1, v);
  return v.count;
}

inline constexpr std::uint64_t default_index_set_cap = 10'000'000;

/// Hyperbolic cross {i in N_0^d : prod_j (i_j + 1) <= k} in canonical order.
/// Throws std::length_error if the set would exceed `cap` entries. The closed
/// form bound is tried first; when it is inconclusive an early-exit count
/// decides.
inline IndexSet hyperbolic_cross(std::size_t d, std::uint64_t k, std::uint64_t cap = default_index_set_cap) {
  if (d == 0 || k == 0) throw std::invalid_argument("hyperbolic_cross: d and k must be >= 1");
  if (hc_cardinality_bound(d, k) > cap && hc_count(d, k, cap) > cap)
    throw std::length_error("hyperbolic_cross: cardinality for (d=" + std::to_string(d) + ", k=" + std::to_string(k) +
                            ") exceeds cap " + std::to_string(cap));
  struct Collect {
    std::vector<MultiIndex> out;
    bool stop = false;
    void operator()(const MultiIndex& i) { out.push_back(i); }
  } collect;
  MultiIndex cur(d);
  detail::visit_hyperbolic_cross(d, k, cur, 0, 1, collect);
  return IndexSet(d, std::move(collect.out));
}

/// Total-degree set {i : |i|_1 <= p}.
inline IndexSet total_degree(std::size_t d, std::uint32_t p) {
  std::vector<MultiIndex> out;
  MultiIndex cur(d);
  std::function<void(std::size_t, std::uint32_t)> rec = [&](std::size_t j, std::uint32_t left) {
    if (j == d) {
      out.push_back(cur);
      return;
    }
    for (std::uint32_t v = 0; v <= left; ++v) {
      cur[j] = v;
      rec(j + 1, left - v);
    }
    cur[j] = 0;
  };
  rec(0, p);
  return IndexSet(d, std::move(out));
}

// ---------------------------------------------------------------------------
// Weights

/// u_i = ||phi_i||_inf: 2^{||i||_0 / 2} for Chebyshev, prod_j sqrt(2 i_j + 1) for Legendre.
inline double intrinsic_weight(const MultiIndex& i, Family family) {
  if (family == Family::chebyshev) return std::pow(std::numbers::sqrt2, static_cast<double>(i.support_size()));
  double w = 1.0;
  for (auto v : i) w *= std::sqrt(2.0 * v + 1.0);
  return w;
}

inline double intrinsic_weight(const MultiIndex& i, const BasisSpec& basis) {
  if (i.dim() != basis.dim) throw std::invalid_argument("intrinsic_weight: dimension mismatch");
  return intrinsic_weight(i, basis.family);
}

/// w_i = u_i^alpha over the index set; alpha = 0 gives the unweighted problem.
inline WeightVector intrinsic_weights(const IndexSet& s, Family family, double alpha = 1.0) {
  if (alpha < 0) throw std::invalid_argument("intrinsic_weights: alpha must be >= 0");
  Eigen::VectorXd w(static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) w[static_cast<Eigen::Index>(k)] = std::pow(intrinsic_weight(s[k], family), alpha);
  return WeightVector(std::move(w));
}

/// |S|_w = sum_i w_i^2.
inline double weighted_cardinality(const IndexSet& s, const WeightVector& w) {
  if (s.size() != w.size()) throw std::invalid_argument("weighted_cardinality: weights not aligned with set");
  return w.values().squaredNorm();
}

// ---------------------------------------------------------------------------
// Lower set enumeration

struct EnumerationGuard {
  std::size_t max_dim = 4;
  std::size_t max_size = 10;
};

namespace detail {

// Indices i not in `members` such that members + {i} is still lower.
inline std::vector<MultiIndex> lower_frontier(const std::vector<MultiIndex>& members,
                                              const std::unordered_map<MultiIndex, bool, MultiIndexHash>& in,
                                              std::size_t d) {
  std::vector<MultiIndex> out;
  for (const auto& m : members) {
    for (std::size_t j = 0; j < d; ++j) {
      MultiIndex c = m;
      ++c[j];
      if (in.contains(c)) continue;
      bool admissible = true;
      for (std::size_t l = 0; l < d && admissible; ++l) {
        if (c[l] == 0) continue;
        MultiIndex p = c;
        --p[l];
        admissible = in.contains(p);
      }
      if (admissible) out.push_back(std::move(c));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

/// Calls `visit(const IndexSet&)` once for every lower set S in N_0^d with
/// |S| <= max_size. Each set is built by adding frontier indices in strictly
/// increasing canonical order; any lower set admits exactly one such build
/// sequence (its members sorted canonically), so no set is produced twice.
template <typename Visit>
void enumerate_lower_sets(std::size_t d, std::size_t max_size, Visit&& visit, EnumerationGuard guard = {}) {
  if (d == 0 || max_size == 0) throw std::invalid_argument("enumerate_lower_sets: d and size must be >= 1");
  if (d > guard.max_dim || max_size > guard.max_size)
    throw std::length_error("enumerate_lower_sets: (d=" + std::to_string(d) + ", k=" + std::to_string(max_size) +
                            ") exceeds enumeration guard");
  std::vector<MultiIndex> members{MultiIndex(d)};
  std::unordered_map<MultiIndex, bool, MultiIndexHash> in{{MultiIndex(d), true}};

  std::function<void()> rec = [&]() {
    visit(IndexSet(d, members));
    if (members.size() == max_size) return;
    const MultiIndex last = members.back();
    for (auto& c : detail::lower_frontier(members, in, d)) {
      // Canonical growth: a set sorted in graded-lex order is lower at every
      // prefix, because every predecessor of i has a strictly smaller box size.
      if (!(last < c)) continue;
      members.push_back(c);
      in.emplace(c, true);
      rec();
      in.erase(c);
      members.pop_back();
    }
  };
  rec();
}

enum class SkMode { brute_force, upper_bound };

/// s(k) = max{|S|_u : S lower, |S| <= k}. Brute force enumerates lower sets
/// in N_0^d; the upper bound is k^gamma with gamma = log 3 / log 2 (Chebyshev)
/// or 2 (Legendre).
inline double max_lower_weighted_cardinality(std::size_t d, std::size_t k, Family family, SkMode mode,
                                             EnumerationGuard guard = {}) {
  if (k == 0) throw std::invalid_argument("max_lower_weighted_cardinality: k must be >= 1");
  if (mode == SkMode::upper_bound) {
    const double gamma = family == Family::chebyshev ? std::log(3.0) / std::log(2.0) : 2.0;
    return std::pow(static_cast<double>(k), gamma);
  }
  double best = 0;
  enumerate_lower_sets(
      d, k,
      [&](const IndexSet& s) {
        double sum = 0;
        for (const auto& i : s) sum += std::pow(intrinsic_weight(i, family), 2);
        best = std::max(best, sum);
      },
      guard);
  return best;
}

}  // namespace sparsepce
