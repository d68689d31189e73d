#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ivfr/errors.hpp"
#include "ivfr/isotonic.hpp"
#include "ivfr/quantile.hpp"

namespace ivfr {

inline constexpr double kRankTol = 1e-10;  // relative singularity tolerance

//! Grouped IV data: n groups with covariates, instruments and an outcome
//! quantile curve each. The intercept is never stored as a column; all fits
//! work in demeaned coordinates with the centering point kept on the result.
struct GroupedDesign {
  Eigen::MatrixXd X;         // n x p covariates
  Eigen::MatrixXd Z;         // n x l instruments, l >= p
  Eigen::MatrixXd outcomes;  // n x Q, row j = Q_{Y_j} on `grid`
  GridPtr grid;
  Eigen::VectorXd obs_weight;        // empty, or n strictly positive weights
  std::vector<std::string> cluster;  // empty, or n cluster ids

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
  Eigen::Index l() const { return Z.cols(); }
  Eigen::Index q() const { return outcomes.cols(); }

  bool has_weights() const { return obs_weight.size() > 0; }

  //! weights normalized to mean one (all-ones when absent)
  Eigen::VectorXd normalized_weights() const {
    if (!has_weights()) return Eigen::VectorXd::Ones(n());
    return obs_weight * (static_cast<double>(n()) / obs_weight.sum());
  }

  QuantileCurve outcome_curve(Eigen::Index j) const {
    return {grid, outcomes.row(j).transpose()};
  }

  void validate() const {
    if (!grid) throw validation_error("design: missing grid");
    if (Z.rows() != n() || outcomes.rows() != n())
      throw validation_error("design: row-count mismatch between X, Z, outcomes");
    if (outcomes.cols() != static_cast<Eigen::Index>(grid->size()))
      throw validation_error("design: outcome columns do not match the grid");
    if (p() < 1 || l() < p()) throw validation_error("design: need l >= p >= 1");
    if (n() < p() + 2) throw validation_error("design: need n >= p + 2 groups");
    if (has_weights()) {
      if (obs_weight.size() != n()) throw validation_error("design: weight length mismatch");
      if ((obs_weight.array() <= 0).any())
        throw validation_error("design: observation weights must be strictly positive");
    }
    if (!cluster.empty() && static_cast<Eigen::Index>(cluster.size()) != n())
      throw validation_error("design: cluster length mismatch");
    if (!X.allFinite() || !Z.allFinite() || !outcomes.allFinite())
      throw validation_error("design: non-finite entries");
  }
};

//! Weighted centered moments and the sample 2SLS operator.
struct MomentSet {
  Eigen::VectorXd mu_X;      // p
  Eigen::VectorXd mu_Z;      // l
  Eigen::MatrixXd Sigma_XX;  // p x p
  Eigen::MatrixXd Sigma_ZX;  // l x p
  Eigen::MatrixXd Sigma_ZZ;  // l x l
  Eigen::MatrixXd S_2sls;    // p x l,  (Szx' Szz^-1 Szx)^-1 Szx' Szz^-1
  double cond_Sigma_ZZ = 0;
  double min_rel_singular_ZX = 0;  // smallest/largest singular value of whitened Sigma_ZX
};

inline MomentSet compute_moments(const GroupedDesign& design) {
  design.validate();
  const double n = static_cast<double>(design.n());
  const Eigen::VectorXd w = design.normalized_weights();

  MomentSet m;
  m.mu_X = design.X.transpose() * w / n;
  m.mu_Z = design.Z.transpose() * w / n;
  const Eigen::MatrixXd Xc = design.X.rowwise() - m.mu_X.transpose();
  const Eigen::MatrixXd Zc = design.Z.rowwise() - m.mu_Z.transpose();
  m.Sigma_XX = Xc.transpose() * w.asDiagonal() * Xc / n;
  m.Sigma_ZX = Zc.transpose() * w.asDiagonal() * Xc / n;
  m.Sigma_ZZ = Zc.transpose() * w.asDiagonal() * Zc / n;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.Sigma_ZZ);
  const double emax = es.eigenvalues().maxCoeff();
  const double emin = es.eigenvalues().minCoeff();
  if (!(emin > kRankTol * std::max(emax, 1.0)))
    throw numeric_error("singular-instruments: Sigma_ZZ eigenvalue ratio " +
                        std::to_string(emin / std::max(emax, 1e-300)) +
                        " below tolerance (condition number " +
                        std::to_string(emax / std::max(emin, 1e-300)) + ")");
  m.cond_Sigma_ZZ = emax / emin;

  // whiten: Szz^{-1/2} Szx must have full column rank p
  const Eigen::MatrixXd zz_isqrt =
      es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
      es.eigenvectors().transpose();
  const Eigen::MatrixXd white_ZX = zz_isqrt * m.Sigma_ZX;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(white_ZX);
  const double smax = svd.singularValues().maxCoeff();
  const double smin = svd.singularValues().minCoeff();
  if (!(smin > kRankTol * std::max(smax, 1.0)))
    throw numeric_error("weak-rank: Sigma_ZX numerically rank deficient (relative singular value " +
                        std::to_string(smin / std::max(smax, 1e-300)) + ")");
  m.min_rel_singular_ZX = smin / smax;

  const Eigen::MatrixXd zz_inv_zx = m.Sigma_ZZ.llt().solve(m.Sigma_ZX);  // l x p
  const Eigen::MatrixXd A = m.Sigma_ZX.transpose() * zz_inv_zx;          // p x p
  m.S_2sls = A.llt().solve(zz_inv_zx.transpose());                       // p x l
  return m;
}

//! plug-in IV weight s_j(z_j, x) = 1 + (x - mu_X)' S_2sls (z_j - mu_Z);
//! may be negative
inline double iv_weight(const MomentSet& m, const Eigen::VectorXd& z_j,
                        const Eigen::VectorXd& x) {
  return 1.0 + (x - m.mu_X).dot(m.S_2sls * (z_j - m.mu_Z));
}

enum class CoefficientVariant { unprojected, projected };

//! Intercept and slope coefficient functions on a shared grid, stored in
//! demeaned-X coordinates with the centering point attached.
struct CoefficientCurves {
  Eigen::VectorXd beta0;  // Q
  Eigen::MatrixXd beta1;  // p x Q
  CoefficientVariant variant = CoefficientVariant::unprojected;
  Eigen::VectorXd mu_X_reference;  // p
  GridPtr grid;

  Eigen::Index p() const { return beta1.rows(); }

  //! fitted curve psi_x(u) = beta0(u) + beta1(u)'(x - mu_X); exactly affine in x
  QuantileCurve at(const Eigen::VectorXd& x) const {
    Eigen::VectorXd v = beta0 + beta1.transpose() * (x - mu_X_reference);
    return {grid, std::move(v)};
  }

  //! n x Q matrix of fitted curves at every design point
  Eigen::MatrixXd fitted_matrix(const Eigen::MatrixXd& X) const {
    const Eigen::MatrixXd Xc = X.rowwise() - mu_X_reference.transpose();
    return (Eigen::VectorXd::Ones(X.rows()) * beta0.transpose()) + Xc * beta1;
  }
};

//! IV-weighted average quantile curve at x, computed from the weight
//! representation psi_x(u) = n^-1 sum_j w_j s_j(Z_j,x) Q_{Y_j}(u).
//! Algebraically identical to CoefficientCurves::at; kept as a second route.
inline QuantileCurve fitted_curve(const GroupedDesign& design, const MomentSet& m,
                                  const Eigen::VectorXd& x) {
  const double n = static_cast<double>(design.n());
  const Eigen::VectorXd w = design.normalized_weights();
  Eigen::VectorXd s(design.n());
  for (Eigen::Index j = 0; j < design.n(); ++j)
    s[j] = iv_weight(m, design.Z.row(j).transpose(), x);
  Eigen::VectorXd vals = design.outcomes.transpose() * (w.cwiseProduct(s)) / n;
  return {design.grid, std::move(vals)};
}

//! Quantile-by-quantile 2SLS, computed as one matrix solve across all grid
//! points simultaneously.
inline CoefficientCurves unconstrained_fit(const GroupedDesign& design, const MomentSet& m) {
  const double n = static_cast<double>(design.n());
  const Eigen::VectorXd w = design.normalized_weights();
  const Eigen::MatrixXd Zc = design.Z.rowwise() - m.mu_Z.transpose();

  CoefficientCurves c;
  c.variant = CoefficientVariant::unprojected;
  c.grid = design.grid;
  c.mu_X_reference = m.mu_X;
  c.beta0 = design.outcomes.transpose() * w / n;                       // weighted mean curve
  c.beta1 = m.S_2sls * (Zc.transpose() * w.asDiagonal() * design.outcomes) / n;  // p x Q
  return c;
}

inline CoefficientCurves unconstrained_fit(const GroupedDesign& design) {
  return unconstrained_fit(design, compute_moments(design));
}

//! Projected IVFR fit: per-group projected fitted curves plus the OLS
//! recovery of the coefficient functions.
struct IvfrFit {
  CoefficientCurves coeffs;                   // variant = projected
  std::vector<ProjectionResult> corrections;  // one per group
  double invalid_rate = 0;                    // fraction of groups with was_active
};

//! Eq-8 estimator: evaluate psi_hat at every observed X_j, project each curve
//! onto the monotone cone, recover coefficients by (weighted) OLS on
//! (1, X_j - mu_X).
inline IvfrFit ivfr_fit(const GroupedDesign& design, const MomentSet& m,
                        const CoefficientCurves& unproj) {
  const Eigen::Index n = design.n();
  const Eigen::VectorXd w = design.normalized_weights();
  const Eigen::VectorXd quad = trapezoid_weights(*design.grid);

  const Eigen::MatrixXd psi = unproj.fitted_matrix(design.X);  // n x Q
  Eigen::MatrixXd proj(n, psi.cols());
  IvfrFit fit;
  fit.corrections.reserve(n);
  Eigen::Index active = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    QuantileCurve row{design.grid, psi.row(j).transpose()};
    ProjectionResult r = project_monotone(row, &quad);
    proj.row(j) = r.projected.values.transpose();
    if (r.was_active) ++active;
    fit.corrections.push_back(std::move(r));
  }
  fit.invalid_rate = static_cast<double>(active) / static_cast<double>(n);

  // OLS recovery of (beta0, beta1) from the projected curves
  const Eigen::MatrixXd Xc = design.X.rowwise() - m.mu_X.transpose();
  Eigen::MatrixXd Xhat(n, design.p() + 1);
  Xhat.col(0).setOnes();
  Xhat.rightCols(design.p()) = Xc;
  const Eigen::MatrixXd XtWX = Xhat.transpose() * w.asDiagonal() * Xhat;
  const Eigen::MatrixXd B = XtWX.ldlt().solve(Xhat.transpose() * w.asDiagonal() * proj);

  fit.coeffs.variant = CoefficientVariant::projected;
  fit.coeffs.grid = design.grid;
  fit.coeffs.mu_X_reference = m.mu_X;
  fit.coeffs.beta0 = B.row(0).transpose();
  fit.coeffs.beta1 = B.bottomRows(design.p());
  return fit;
}

inline IvfrFit ivfr_fit(const GroupedDesign& design) {
  const MomentSet m = compute_moments(design);
  return ivfr_fit(design, m, unconstrained_fit(design, m));
}

//! FWL residual diagnostics for one coordinate: projection gain, nuisance
//! cross-term and the resulting coefficient-wise error bound.
struct FWLDiagnostics {
  Eigen::Index k = 0;             // coordinate (0-based into beta1)
  Eigen::VectorXd r_k;            // n FWL residuals
  double v_hat_k = 0;             // weighted mean of r_k^2
  std::vector<Eigen::Index> J_k;  // indices with nonzero residual
  double projection_gain = 0;     // (1/(n v_k)) sum_{J_k} w_j ||D_j||^2_{L2}
  double cross_term = 0;          // (1/(n v_k)) sum_{J_k} w_j <D_j, e_jk>_{L2}
  double bound_rhs = 0;           // ||tilde err||^2 - gain - 2*cross_term
  double unproj_err_sq = 0;       // ||tilde_beta_1k - b_1k||^2_{L2}
  double proj_err_sq = 0;         // ||hat_beta_1k - b_1k||^2_{L2}
  bool reference_monotone_on_J = true;  // q_b(X_j,.) monotone for all j in J_k
  bool feasibility_holds = true;        // q_b + e_jk monotone for all j in J_k
};

inline FWLDiagnostics fwl_decomposition(const GroupedDesign& design, const MomentSet& m,
                                        const CoefficientCurves& unproj,
                                        const CoefficientCurves& proj,
                                        const std::vector<ProjectionResult>& corrections,
                                        Eigen::Index k, const CoefficientCurves& reference_b) {
  const Eigen::Index n = design.n();
  const Eigen::Index p = design.p();
  if (k < 0 || k >= p) throw validation_error("fwl: coordinate index out of range");
  const Eigen::VectorXd w = design.normalized_weights();
  const Eigen::VectorXd quad = trapezoid_weights(*design.grid);
  const Eigen::MatrixXd Xc = design.X.rowwise() - m.mu_X.transpose();

  FWLDiagnostics d;
  d.k = k;
  const Eigen::VectorXd c_k = Xc.col(k);
  Eigen::VectorXd pi_k;  // p-1 nuisance projection coefficients
  if (p > 1) {
    Eigen::MatrixXd C_mk(n, p - 1);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < p; ++j)
      if (j != k) C_mk.col(c++) = Xc.col(j);
    pi_k = (C_mk.transpose() * w.asDiagonal() * C_mk)
               .ldlt()
               .solve(C_mk.transpose() * w.asDiagonal() * c_k);
    d.r_k = c_k - C_mk * pi_k;
  } else {
    d.r_k = c_k;  // no partialling out for p = 1
  }
  d.v_hat_k = w.dot(d.r_k.cwiseProduct(d.r_k)) / static_cast<double>(n);
  if (!(d.v_hat_k > 0))
    throw numeric_error("degenerate-coordinate: all FWL residuals are zero for coordinate " +
                        std::to_string(k));
  for (Eigen::Index j = 0; j < n; ++j)
    if (d.r_k[j] != 0) d.J_k.push_back(j);

  // errors of the unprojected fit against the reference
  const Eigen::VectorXd err0 = unproj.beta0 - reference_b.beta0;      // Q
  const Eigen::MatrixXd err1 = unproj.beta1 - reference_b.beta1;      // p x Q
  const Eigen::MatrixXd qb = reference_b.fitted_matrix(design.X);     // n x Q
  const Eigen::MatrixXd psi = unproj.fitted_matrix(design.X);         // n x Q

  double gain = 0, cross = 0;
  for (Eigen::Index j : d.J_k) {
    // e_jk(u): intercept error + nuisance slope errors along c_{j,-k}
    Eigen::VectorXd e = err0;
    Eigen::Index c = 0;
    for (Eigen::Index jj = 0; jj < p; ++jj) {
      if (jj == k) continue;
      e += Xc(j, jj) * (err1.row(jj).transpose() + pi_k[c] * err1.row(k).transpose());
      ++c;
    }
    const Eigen::VectorXd D = corrections[static_cast<std::size_t>(j)].projected.values -
                              psi.row(j).transpose();
    gain += w[j] * (quad.array() * D.array().square()).sum();
    cross += w[j] * (quad.array() * D.array() * e.array()).sum();

    QuantileCurve qbj{design.grid, qb.row(j).transpose()};
    if (!qbj.is_monotone()) d.reference_monotone_on_J = false;
    QuantileCurve feas{design.grid, (qb.row(j).transpose() + e).eval()};
    if (!feas.is_monotone()) d.feasibility_holds = false;
  }
  const double nv = static_cast<double>(n) * d.v_hat_k;
  d.projection_gain = gain / nv;
  d.cross_term = cross / nv;
  d.unproj_err_sq = (quad.array() * err1.row(k).transpose().array().square()).sum();
  d.proj_err_sq =
      (quad.array() *
       (proj.beta1.row(k) - reference_b.beta1.row(k)).transpose().array().square())
          .sum();
  d.bound_rhs = d.unproj_err_sq - d.projection_gain - 2.0 * d.cross_term;
  return d;
}

//! Both sides of the joint improvement inequality (intercept in L^2 plus
//! slopes in the Sigma_XX-weighted L^2 norm) for a monotone reference b.
struct JointImprovement {
  double projected_err = 0;
  double unprojected_err = 0;
};

inline JointImprovement joint_improvement(const GroupedDesign& design, const MomentSet& m,
                                          const CoefficientCurves& unproj,
                                          const CoefficientCurves& proj,
                                          const CoefficientCurves& reference_b) {
  const Eigen::VectorXd quad = trapezoid_weights(*design.grid);
  auto joint_err = [&](const CoefficientCurves& est) {
    const Eigen::VectorXd e0 = est.beta0 - reference_b.beta0;
    const Eigen::MatrixXd e1 = est.beta1 - reference_b.beta1;  // p x Q
    double total = (quad.array() * e0.array().square()).sum();
    for (Eigen::Index q = 0; q < quad.size(); ++q)
      total += quad[q] * e1.col(q).dot(m.Sigma_XX * e1.col(q));
    return total;
  };
  return {joint_err(proj), joint_err(unproj)};
}

}  // namespace ivfr
