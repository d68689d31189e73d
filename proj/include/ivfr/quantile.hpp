#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "ivfr/errors.hpp"

namespace ivfr {

//! Fixed quantile grid on [a,b] subset of (0,1). Immutable after construction
//! and shared by reference between curves.
struct QuantileGrid {
  std::vector<double> points;  // strictly increasing, in (0,1)
  double a = 0;                // lower bound, 0 < a <= points.front()
  double b = 0;                // upper bound, points.back() <= b < 1

  std::size_t size() const { return points.size(); }

  bool operator==(const QuantileGrid& o) const {
    return a == o.a && b == o.b && points == o.points;
  }
};

using GridPtr = std::shared_ptr<const QuantileGrid>;

//! Q equally spaced quantile indices from a to b inclusive.
inline GridPtr build_grid(double a, double b, std::size_t Q) {
  if (!(a > 0.0) || !(b < 1.0) || !(a <= b))
    throw validation_error("invalid-grid: need 0 < a <= b < 1, got a=" + std::to_string(a) +
                           " b=" + std::to_string(b));
  if (Q < 2) throw validation_error("invalid-grid: need at least 2 grid points");
  if (a == b) throw validation_error("invalid-grid: a == b gives duplicate points");
  auto g = std::make_shared<QuantileGrid>();
  g->a = a;
  g->b = b;
  g->points.resize(Q);
  for (std::size_t i = 0; i < Q; ++i)
    g->points[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(Q - 1);
  g->points.back() = b;
  return g;
}

inline bool same_grid(const GridPtr& g1, const GridPtr& g2) {
  return g1 == g2 || (g1 && g2 && *g1 == *g2);
}

//! trapezoid quadrature weights over the grid points; used for every
//! discretized L^2 quantity (W_2^2, IMSE, isotonic projection weights)
inline Eigen::VectorXd trapezoid_weights(const QuantileGrid& g) {
  const auto Q = g.size();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(Q));
  for (std::size_t i = 0; i + 1 < Q; ++i) {
    const double h = g.points[i + 1] - g.points[i];
    w[static_cast<Eigen::Index>(i)] += 0.5 * h;
    w[static_cast<Eigen::Index>(i + 1)] += 0.5 * h;
  }
  return w;
}

//! A real-valued function on a quantile grid. Values are stored raw;
//! monotonicity is a queryable predicate, not an enforced invariant, since
//! unprojected fitted curves are legitimately non-monotone.
struct QuantileCurve {
  GridPtr grid;
  Eigen::VectorXd values;

  QuantileCurve() = default;
  QuantileCurve(GridPtr g, Eigen::VectorXd v) : grid(std::move(g)), values(std::move(v)) {
    if (!grid) throw validation_error("curve: null grid");
    if (static_cast<std::size_t>(values.size()) != grid->size())
      throw validation_error("curve: value/grid length mismatch");
  }

  bool is_monotone() const {
    for (Eigen::Index i = 0; i + 1 < values.size(); ++i)
      if (values[i] > values[i + 1]) return false;
    return true;
  }
};

//! Raw within-group observations V_{jk}.
struct GroupSample {
  std::vector<double> observations;

  std::size_t size() const { return observations.size(); }
};

//! Left-continuous empirical quantile function (inf form): the smallest order
//! statistic y with empirical CDF >= u. No interpolation between order
//! statistics. Output is monotone by construction.
inline QuantileCurve empirical_quantile(const GroupSample& sample, const GridPtr& grid) {
  const std::size_t m = sample.size();
  if (m == 0) throw validation_error("empty-group: cannot compute empirical quantiles");
  for (double v : sample.observations)
    if (!std::isfinite(v)) throw validation_error("empty-group: non-finite observation");
  std::vector<double> sorted = sample.observations;
  std::sort(sorted.begin(), sorted.end());
  Eigen::VectorXd vals(static_cast<Eigen::Index>(grid->size()));
  for (std::size_t q = 0; q < grid->size(); ++q) {
    const double u = grid->points[q];
    // F(x_(k)) = k/m >= u  <=>  k >= ceil(u*m)
    auto k = static_cast<std::size_t>(std::ceil(u * static_cast<double>(m) - 1e-12));
    k = std::clamp<std::size_t>(k, 1, m);
    vals[static_cast<Eigen::Index>(q)] = sorted[k - 1];
  }
  return {grid, std::move(vals)};
}

//! squared 2-Wasserstein distance between the distributions with quantile
//! curves c1, c2: trapezoid approximation of  int_a^b (c1-c2)^2 du
inline double w2_squared(const QuantileCurve& c1, const QuantileCurve& c2) {
  if (!same_grid(c1.grid, c2.grid)) throw validation_error("grid-mismatch in w2_squared");
  const Eigen::VectorXd w = trapezoid_weights(*c1.grid);
  const Eigen::VectorXd d = c1.values - c2.values;
  return (w.array() * d.array().square()).sum();
}

//! trapezoid L^2 norm-squared of a vector of values on a grid
inline double l2_norm_sq(const QuantileGrid& g, const Eigen::VectorXd& v) {
  return (trapezoid_weights(g).array() * v.array().square()).sum();
}

}  // namespace ivfr
