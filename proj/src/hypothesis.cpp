#include "gaitlab/hypothesis.hpp"

#include <cmath>
#include <json.hpp>
#include <limits>
#include <set>

#include "gaitlab/errors.hpp"

namespace gaitlab {

double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw GaitError(ErrorKind::kShapeMismatch, "points differ in dimension");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

IntraInter intra_inter(const Point& x, std::span<const Point> same_class, std::span<const Point> other_class) {
  if (same_class.empty() || other_class.empty()) {
    throw GaitError(ErrorKind::kEmptySet, "intra/inter distance needs non-empty sets");
  }
  IntraInter r{0.0, std::numeric_limits<double>::infinity()};
  for (const auto& p : same_class) r.d_plus = std::max(r.d_plus, euclidean(x, p));
  for (const auto& p : other_class) r.d_minus = std::min(r.d_minus, euclidean(x, p));
  return r;
}

SubsetBound verify_subset_bound(const Point& x, std::span<const Point> universe, std::span<const int> pi,
                                std::span<const int> big_pi) {
  const int n = static_cast<int>(universe.size());
  std::set<int> small(pi.begin(), pi.end());
  std::set<int> large(big_pi.begin(), big_pi.end());
  for (int i : large) {
    if (i < 0 || i >= n) throw GaitError(ErrorKind::kSubsetViolation, "index " + std::to_string(i) + " outside universe");
  }
  for (int i : small) {
    if (!large.count(i)) {
      throw GaitError(ErrorKind::kSubsetViolation, "index " + std::to_string(i) + " is in pi but not in Pi");
    }
  }
  const double inf = std::numeric_limits<double>::infinity();
  SubsetBound r{inf, inf, false};
  for (int i = 0; i < n; ++i) {
    const double d = euclidean(x, universe[i]);
    if (!small.count(i)) r.d_minus_small = std::min(r.d_minus_small, d);
    if (!large.count(i)) r.d_minus_large = std::min(r.d_minus_large, d);
  }
  r.holds = r.d_minus_small <= r.d_minus_large;
  return r;
}

std::vector<Point> build_chain(const Point& x, const std::function<std::vector<Point>(const Point&)>& pi, int n) {
  std::vector<Point> chain{x};
  for (int i = 0; i < n; ++i) {
    const auto options = pi(chain.back());
    if (options.empty()) throw GaitError(ErrorKind::kEmptyAugSet, "augmentation set is empty at step " + std::to_string(i));
    size_t best = 0;
    double best_d = -1.0;
    for (size_t j = 0; j < options.size(); ++j) {
      const double d = euclidean(chain.back(), options[j]);
      if (d > best_d) {
        best_d = d;
        best = j;
      }
    }
    chain.push_back(options[best]);
  }
  return chain;
}

Transitivity verify_transitivity(std::span<const Point> chain) {
  if (chain.size() < 2) throw GaitError(ErrorKind::kEmptySet, "chain needs at least one step");
  Transitivity t{euclidean(chain.front(), chain.back()), 0.0, false};
  for (size_t i = 1; i < chain.size(); ++i) t.rhs += euclidean(chain[i - 1], chain[i]);
  t.holds = t.lhs <= t.rhs + 1e-9;
  return t;
}

BoundsReport bounds_report(std::span<const Point> points, std::span<const int> labels, double pi_radius, int chain_len) {
  if (points.size() != labels.size()) throw GaitError(ErrorKind::kShapeMismatch, "one label per point");
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw GaitError(ErrorKind::kEmptySet, "bounds report needs at least two classes");
  }
  if (chain_len < 1) throw GaitError(ErrorKind::kRangeError, "chain length must be >= 1");
  BoundsReport r;
  r.n = chain_len;
  r.b = std::numeric_limits<double>::infinity();
  int separated = 0;
  for (size_t i = 0; i < points.size(); ++i) {
    double own_plus = 0.0;
    double own_minus = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < points.size(); ++j) {
      const double d = euclidean(points[i], points[j]);
      if (labels[i] == labels[j]) {
        own_plus = std::max(own_plus, d);
        if (d <= pi_radius) r.a = std::max(r.a, d);
      } else {
        own_minus = std::min(own_minus, d);
      }
    }
    r.d_plus = std::max(r.d_plus, own_plus);
    r.b = std::min(r.b, own_minus);
    if (own_plus < own_minus) ++separated;
  }
  r.d_minus = r.b;
  r.verdict = r.n * r.a < r.b;
  r.separated = r.d_plus < r.d_minus;
  r.separated_fraction = static_cast<double>(separated) / static_cast<double>(points.size());
  return r;
}

std::string to_json(const BoundsReport& r) {
  nlohmann::json j;
  j["a"] = r.a;
  j["b"] = r.b;
  j["N"] = r.n;
  j["d_plus"] = r.d_plus;
  j["d_minus"] = r.d_minus;
  j["N_a_below_b"] = r.verdict;
  j["separated"] = r.separated;
  j["separated_fraction"] = r.separated_fraction;
  return j.dump(2);
}

}  // namespace gaitlab
