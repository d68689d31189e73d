#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

#include "ivfr/estimator.hpp"

namespace ivfr {

//! Deliberately naive second stage: one full 2SLS regression per quantile
//! grid point, each recomputing its own means, cross-moments and solve with
//! scalar loops. Baseline for the relative-speed benchmark; must agree with
//! unconstrained_fit to rounding.
inline CoefficientCurves per_quantile_loop_fit(const GroupedDesign& design) {
  const Eigen::Index n = design.n(), p = design.p(), l = design.l(), Q = design.q();
  const Eigen::VectorXd wv = design.normalized_weights();
  CoefficientCurves c;
  c.variant = CoefficientVariant::unprojected;
  c.grid = design.grid;
  c.beta0.resize(Q);
  c.beta1.resize(p, Q);

  for (Eigen::Index q = 0; q < Q; ++q) {
    // means
    std::vector<double> mu_x(static_cast<std::size_t>(p), 0.0);
    std::vector<double> mu_z(static_cast<std::size_t>(l), 0.0);
    double mu_y = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = wv[j];
      for (Eigen::Index k = 0; k < p; ++k) mu_x[static_cast<std::size_t>(k)] += w * design.X(j, k);
      for (Eigen::Index k = 0; k < l; ++k) mu_z[static_cast<std::size_t>(k)] += w * design.Z(j, k);
      mu_y += w * design.outcomes(j, q);
    }
    const double dn = static_cast<double>(n);
    for (auto& v : mu_x) v /= dn;
    for (auto& v : mu_z) v /= dn;
    mu_y /= dn;

    // centered cross moments
    Eigen::MatrixXd szz = Eigen::MatrixXd::Zero(l, l);
    Eigen::MatrixXd szx = Eigen::MatrixXd::Zero(l, p);
    Eigen::VectorXd szy = Eigen::VectorXd::Zero(l);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = wv[j];
      for (Eigen::Index a = 0; a < l; ++a) {
        const double za = design.Z(j, a) - mu_z[static_cast<std::size_t>(a)];
        for (Eigen::Index b = 0; b < l; ++b)
          szz(a, b) += w * za * (design.Z(j, b) - mu_z[static_cast<std::size_t>(b)]);
        for (Eigen::Index b = 0; b < p; ++b)
          szx(a, b) += w * za * (design.X(j, b) - mu_x[static_cast<std::size_t>(b)]);
        szy[a] += w * za * (design.outcomes(j, q) - mu_y);
      }
    }
    szz /= dn;
    szx /= dn;
    szy /= dn;

    const Eigen::MatrixXd zz_inv_zx = szz.llt().solve(szx);
    const Eigen::MatrixXd A = szx.transpose() * zz_inv_zx;
    c.beta1.col(q) = A.llt().solve(zz_inv_zx.transpose() * szy);
    c.beta0[q] = mu_y;
  }
  c.mu_X_reference.resize(p);
  {
    const Eigen::VectorXd w = design.normalized_weights();
    c.mu_X_reference = design.X.transpose() * w / static_cast<double>(n);
  }
  return c;
}

struct BenchReport {
  Eigen::Index n = 0, N = 0, Q = 0;
  int runs = 0;
  double vectorized_ms = 0;  // median over runs
  double naive_ms = 0;
  double ratio = 0;              // naive / vectorized
  double max_coef_diff = 0;      // correctness gate
  std::string machine;
};

//! median wall time of fn over `runs` calls, in milliseconds
template <typename F>
double median_time_ms(int runs, F&& fn) {
  std::vector<double> times(static_cast<std::size_t>(runs));
  for (int r = 0; r < runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times[static_cast<std::size_t>(r)] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

inline BenchReport run_bench(const GroupedDesign& design, int runs) {
  BenchReport rep;
  rep.n = design.n();
  rep.Q = design.q();
  rep.runs = runs;

  const MomentSet m = compute_moments(design);
  const CoefficientCurves fast = unconstrained_fit(design, m);
  const CoefficientCurves slow = per_quantile_loop_fit(design);
  rep.max_coef_diff =
      std::max((fast.beta0 - slow.beta0).cwiseAbs().maxCoeff(),
               (fast.beta1 - slow.beta1).cwiseAbs().maxCoeff());

  volatile double sink = 0;
  rep.vectorized_ms = median_time_ms(runs, [&] {
    const MomentSet mm = compute_moments(design);
    sink = sink + unconstrained_fit(design, mm).beta1(0, 0);
  });
  rep.naive_ms = median_time_ms(runs, [&] { sink = sink + per_quantile_loop_fit(design).beta1(0, 0); });
  rep.ratio = rep.naive_ms / rep.vectorized_ms;
  return rep;
}

}  // namespace ivfr
