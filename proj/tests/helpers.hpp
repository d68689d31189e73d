#pragma once

// Shared fixtures for the test binaries: random grouped designs, designs with
// a constructed monotone reference, and small closed-form oracles.

#include <Eigen/Dense>
#include <random>

#include "ivfr/estimator.hpp"
#include "ivfr/quantile.hpp"

namespace test_helpers {

//! Random grouped design. Outcomes are noisy affine functions of X so fits
//! are well-posed; instruments correlate with X through a shared shock.
inline ivfr::GroupedDesign random_design(std::mt19937_64& rng, Eigen::Index n, Eigen::Index p,
                                         Eigen::Index l, const ivfr::GridPtr& grid,
                                         bool with_weights = false, double noise = 0.3) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  ivfr::GroupedDesign d;
  d.grid = grid;
  d.X.resize(n, p);
  d.Z.resize(n, l);
  const auto Q = static_cast<Eigen::Index>(grid->size());
  d.outcomes.resize(n, Q);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index c = 0; c < l; ++c) d.Z(j, c) = normal(rng);
    for (Eigen::Index c = 0; c < p; ++c)
      d.X(j, c) = 0.8 * d.Z(j, c % l) + 0.6 * normal(rng);
    for (Eigen::Index q = 0; q < Q; ++q) {
      const double u = grid->points[static_cast<std::size_t>(q)];
      double y = 3.0 * u + noise * normal(rng);
      for (Eigen::Index c = 0; c < p; ++c) y += d.X(j, c) * (0.5 * u + 0.1);
      d.outcomes(j, q) = y;
    }
  }
  if (with_weights) {
    d.obs_weight.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) d.obs_weight[j] = unif(rng);
  }
  return d;
}

//! Monotone reference coefficients b on the design grid: a steep increasing
//! intercept dominating bounded random slopes, so q_b(X_j, .) is monotone at
//! every design point (same construction idea as the simulation sigma rule).
inline ivfr::CoefficientCurves monotone_reference(std::mt19937_64& rng,
                                                  const ivfr::GroupedDesign& design,
                                                  const ivfr::MomentSet& m) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const auto Q = static_cast<Eigen::Index>(design.grid->size());
  const Eigen::Index p = design.p();
  ivfr::CoefficientCurves b;
  b.grid = design.grid;
  b.variant = ivfr::CoefficientVariant::unprojected;
  b.mu_X_reference = m.mu_X;
  b.beta1.resize(p, Q);
  for (Eigen::Index k = 0; k < p; ++k)
    for (Eigen::Index q = 0; q < Q; ++q)
      b.beta1(k, q) = 0.5 * unif(rng);
  // steep enough that the intercept increment beats the worst slope swing:
  // slope values lie in [-0.5, 0.5], so per-step slope change is at most
  // p * xmax; the intercept gains steep * du_min per step
  const double xmax = (design.X.rowwise() - m.mu_X.transpose()).cwiseAbs().maxCoeff();
  double du_min = 1.0;
  for (std::size_t i = 0; i + 1 < design.grid->size(); ++i)
    du_min = std::min(du_min, design.grid->points[i + 1] - design.grid->points[i]);
  const double steep = 1.1 * (1.0 + xmax * static_cast<double>(p)) / du_min;
  b.beta0.resize(Q);
  for (Eigen::Index q = 0; q < Q; ++q)
    b.beta0[q] = steep * design.grid->points[static_cast<std::size_t>(q)];
  return b;
}

//! independent per-quantile (weighted) OLS of the outcomes on (1, X) —
//! oracle for the exogenous reduction Z == X
inline ivfr::CoefficientCurves per_quantile_ols(const ivfr::GroupedDesign& d) {
  const Eigen::Index n = d.n(), p = d.p();
  const Eigen::VectorXd w = d.normalized_weights();
  Eigen::MatrixXd R(n, p + 1);
  R.col(0).setOnes();
  R.rightCols(p) = d.X;
  ivfr::CoefficientCurves c;
  c.grid = d.grid;
  c.variant = ivfr::CoefficientVariant::unprojected;
  const auto Q = d.q();
  c.beta0.resize(Q);
  c.beta1.resize(p, Q);
  const Eigen::MatrixXd RtWR = R.transpose() * w.asDiagonal() * R;
  const Eigen::VectorXd mu_x = d.X.transpose() * w / static_cast<double>(n);
  c.mu_X_reference = mu_x;
  for (Eigen::Index q = 0; q < Q; ++q) {
    const Eigen::VectorXd coef =
        RtWR.ldlt().solve(R.transpose() * w.asDiagonal() * d.outcomes.col(q));
    c.beta1.col(q) = coef.tail(p);
    // re-center the intercept at mu_x so it is comparable with the library fits
    c.beta0[q] = coef[0] + coef.tail(p).dot(mu_x);
  }
  return c;
}

}  // namespace test_helpers
