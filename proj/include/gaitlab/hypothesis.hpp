#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gaitlab {

using Point = std::vector<double>;

double euclidean(std::span<const double> a, std::span<const double> b);

struct IntraInter {
  double d_plus = 0.0;   // max distance to the same-class set
  double d_minus = 0.0;  // min distance to the other-class set
};

/// Throws EmptySet if either set is empty.
IntraInter intra_inter(const Point& x, std::span<const Point> same_class, std::span<const Point> other_class);

struct SubsetBound {
  double d_minus_small;  // min distance from x to universe \ pi
  double d_minus_large;  // min distance from x to universe \ Pi (inf if empty)
  bool holds;
};

/// pi and Pi are index sets into `universe`. Throws SubsetViolation unless
/// pi is a subset of Pi and every index is valid.
SubsetBound verify_subset_bound(const Point& x, std::span<const Point> universe, std::span<const int> pi,
                                std::span<const int> big_pi);

/// x_0 = x, x_i = the member of pi(x_{i-1}) farthest from x_{i-1} (first on
/// ties). Returns N+1 points. Throws EmptyAugSet.
std::vector<Point> build_chain(const Point& x, const std::function<std::vector<Point>(const Point&)>& pi, int n);

struct Transitivity {
  double lhs;  // |x_0 - x_N|
  double rhs;  // sum of step lengths
  bool holds;  // lhs <= rhs + 1e-9
};

Transitivity verify_transitivity(std::span<const Point> chain);

struct BoundsReport {
  double a = 0.0;        // max same-class distance inside the pi radius
  double b = 0.0;        // min inter-class distance
  int n = 1;             // chain length
  double d_plus = 0.0;   // max same-class distance over the whole set
  double d_minus = 0.0;  // min inter-class distance (equals b)
  bool verdict = false;  // n * a < b
  bool separated = false;                 // d_plus < d_minus
  double separated_fraction = 0.0;        // samples whose own d+ < d-
};

/// Neighbourhood pi(x) = same-class points within `pi_radius` of x.
/// Throws EmptySet with fewer than two classes.
BoundsReport bounds_report(std::span<const Point> points, std::span<const int> labels, double pi_radius, int chain_len);

std::string to_json(const BoundsReport& report);

}  // namespace gaitlab
