#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ivfr/errors.hpp"
#include "ivfr/quantile.hpp"

namespace ivfr {

//! Result of projecting a curve onto the cone of non-decreasing functions.
struct ProjectionResult {
  QuantileCurve projected;
  double correction_sup_norm = 0;  // sup_u |projected(u) - input(u)|
  bool was_active = false;         // true iff the input was non-monotone
};

//! Weighted pool-adjacent-violators on raw vectors. Minimizes
//! sum_i w_i (y_i - h_i)^2 over non-decreasing h. Ties pool by exact
//! equality; already-monotone input is returned unchanged.
inline Eigen::VectorXd pava(const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const Eigen::Index n = y.size();
  if (w.size() != n) throw validation_error("invalid-weight: length mismatch in pava");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) throw validation_error("pava: non-finite value in input");
    if (!(w[i] > 0) || !std::isfinite(w[i]))
      throw validation_error("invalid-weight: weights must be strictly positive and finite");
  }
  // block stack: (level, weight, end-index)
  std::vector<double> level(n), weight(n);
  std::vector<Eigen::Index> end(n);
  Eigen::Index top = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    ++top;
    level[top] = y[i];
    weight[top] = w[i];
    end[top] = i;
    while (top > 0 && level[top - 1] > level[top]) {
      const double tw = weight[top - 1] + weight[top];
      level[top - 1] = (weight[top - 1] * level[top - 1] + weight[top] * level[top]) / tw;
      weight[top - 1] = tw;
      end[top - 1] = end[top];
      --top;
    }
  }
  Eigen::VectorXd out(n);
  Eigen::Index start = 0;
  for (Eigen::Index b = 0; b <= top; ++b) {
    for (Eigen::Index i = start; i <= end[b]; ++i) out[i] = level[b];
    start = end[b] + 1;
  }
  return out;
}

//! L^2 projection of a curve onto the monotone cone via PAVA. Default weights
//! are the trapezoid quadrature weights of the grid, so the discrete problem
//! approximates the L^2[a,b] projection.
inline ProjectionResult project_monotone(const QuantileCurve& curve,
                                         const Eigen::VectorXd* weights = nullptr) {
  Eigen::VectorXd w = weights ? *weights : trapezoid_weights(*curve.grid);
  if (static_cast<std::size_t>(w.size()) != curve.grid->size())
    throw validation_error("invalid-weight: weight/grid length mismatch");
  ProjectionResult res;
  res.projected = QuantileCurve(curve.grid, pava(curve.values, w));
  res.correction_sup_norm = (res.projected.values - curve.values).cwiseAbs().maxCoeff();
  res.was_active = res.correction_sup_norm > 0;
  return res;
}

//! Exhaustive-search isotonic QP solver: enumerates all ordered partitions of
//! the index set into contiguous level blocks, sets each block to its weighted
//! mean, and returns the feasible candidate with the smallest weighted SSE.
//! Exact minimizer; test oracle only, so limited to short curves.
inline QuantileCurve qp_oracle_project(const QuantileCurve& curve,
                                       const Eigen::VectorXd* weights = nullptr) {
  const Eigen::Index n = curve.values.size();
  if (n > 16) throw validation_error("oracle-scale: qp_oracle_project limited to length <= 16");
  Eigen::VectorXd w = weights ? *weights : trapezoid_weights(*curve.grid);
  if (w.size() != n) throw validation_error("invalid-weight: weight/grid length mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(w[i] > 0)) throw validation_error("invalid-weight: weights must be strictly positive");

  const Eigen::VectorXd& y = curve.values;
  double best_obj = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best(n);
  // bit i of mask set => block boundary between positions i and i+1
  const std::uint32_t masks = n > 1 ? (1u << (n - 1)) : 1u;
  Eigen::VectorXd cand(n);
  for (std::uint32_t mask = 0; mask < masks; ++mask) {
    Eigen::Index start = 0;
    double prev_mean = -std::numeric_limits<double>::infinity();
    bool feasible = true;
    double obj = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool boundary = (i == n - 1) || (mask & (1u << i));
      if (!boundary) continue;
      double sw = 0, swy = 0;
      for (Eigen::Index k = start; k <= i; ++k) {
        sw += w[k];
        swy += w[k] * y[k];
      }
      const double mean = swy / sw;
      if (mean < prev_mean) {
        feasible = false;
        break;
      }
      for (Eigen::Index k = start; k <= i; ++k) {
        cand[k] = mean;
        obj += w[k] * (y[k] - mean) * (y[k] - mean);
      }
      prev_mean = mean;
      start = i + 1;
    }
    if (feasible && obj < best_obj) {
      best_obj = obj;
      best = cand;
    }
  }
  return {curve.grid, best};
}

}  // namespace ivfr
