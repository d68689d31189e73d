#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "ivfr/errors.hpp"
#include "ivfr/estimator.hpp"
#include "ivfr/stats.hpp"

namespace ivfr {

inline constexpr double kSigmaFloor = 1e-12;  // grid points with smaller sigma leave the sup

//! Score evaluations Phi_j(u) and residuals xi_j(u) for whichever coefficient
//! variant was supplied. Scores are stored unweighted; observation weights
//! are applied where the scores enter sums.
struct ScoreMatrix {
  std::vector<Eigen::MatrixXd> components;  // 1+l matrices, each n x Q
  Eigen::MatrixXd residuals;                // n x Q, xi_j(u)
  Eigen::VectorXd weights;                  // normalized observation weights
  CoefficientVariant variant = CoefficientVariant::unprojected;
};

inline ScoreMatrix score_matrix(const GroupedDesign& design, const MomentSet& m,
                                const CoefficientCurves& coeffs) {
  if (!same_grid(design.grid, coeffs.grid))
    throw validation_error("score: coefficient grid does not match design grid");
  const Eigen::Index n = design.n();
  const Eigen::Index l = design.l();
  const double dn = static_cast<double>(n);

  ScoreMatrix s;
  s.variant = coeffs.variant;
  s.weights = design.normalized_weights();
  const Eigen::VectorXd qbar = design.outcomes.transpose() * s.weights / dn;  // weighted mean curve
  s.residuals = design.outcomes - coeffs.fitted_matrix(design.X);
  s.components.resize(static_cast<std::size_t>(1 + l));
  s.components[0] = design.outcomes.rowwise() - qbar.transpose();
  const Eigen::VectorXd zbar = design.Z.transpose() * s.weights / dn;
  for (Eigen::Index c = 0; c < l; ++c) {
    const Eigen::VectorXd zc = design.Z.col(c).array() - zbar[c];
    s.components[static_cast<std::size_t>(1 + c)] = zc.asDiagonal() * s.residuals;
  }
  return s;
}

//! T_hat = diag(1, S_2sls): maps the (1+l)-dim score to the (1+p)-dim
//! coefficient space
inline Eigen::MatrixXd score_transform(const MomentSet& m) {
  const Eigen::Index p = m.S_2sls.rows();
  const Eigen::Index l = m.S_2sls.cols();
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(1 + p, 1 + l);
  T(0, 0) = 1.0;
  T.block(1, 1, p, l) = m.S_2sls;
  return T;
}

//! Pointwise sandwich variance: Omega(u,u) = T (n^-1 sum (w_j Phi_j)(w_j Phi_j)') T'
struct VarianceKernel {
  std::vector<Eigen::MatrixXd> omega_diag;  // Q matrices, (p+1) x (p+1)
  Eigen::MatrixXd sigma;                    // (p+1) x Q, sqrt of diagonal
};

inline VarianceKernel sandwich_variance(const ScoreMatrix& score, const MomentSet& m) {
  const Eigen::Index ncomp = static_cast<Eigen::Index>(score.components.size());
  const Eigen::Index n = score.components[0].rows();
  const Eigen::Index Q = score.components[0].cols();
  const Eigen::MatrixXd T = score_transform(m);
  const double dn = static_cast<double>(n);

  VarianceKernel k;
  k.omega_diag.resize(static_cast<std::size_t>(Q));
  k.sigma.resize(T.rows(), Q);
  Eigen::MatrixXd phi(n, ncomp);
  for (Eigen::Index q = 0; q < Q; ++q) {
    for (Eigen::Index c = 0; c < ncomp; ++c)
      phi.col(c) = score.weights.cwiseProduct(score.components[static_cast<std::size_t>(c)].col(q));
    const Eigen::MatrixXd meat = phi.transpose() * phi / dn;
    Eigen::MatrixXd omega = T * meat * T.transpose();
    omega = 0.5 * (omega + omega.transpose());  // enforce exact symmetry
    k.sigma.col(q) = omega.diagonal().cwiseMax(0.0).cwiseSqrt();
    k.omega_diag[static_cast<std::size_t>(q)] = std::move(omega);
  }
  return k;
}

//! Off-diagonal kernel Omega(u,u'); test oracle only, not used by the bands.
inline Eigen::MatrixXd sandwich_kernel_at(const ScoreMatrix& score, const MomentSet& m,
                                          Eigen::Index q1, Eigen::Index q2) {
  const Eigen::Index ncomp = static_cast<Eigen::Index>(score.components.size());
  const Eigen::Index n = score.components[0].rows();
  const Eigen::MatrixXd T = score_transform(m);
  Eigen::MatrixXd p1(n, ncomp), p2(n, ncomp);
  for (Eigen::Index c = 0; c < ncomp; ++c) {
    p1.col(c) = score.weights.cwiseProduct(score.components[static_cast<std::size_t>(c)].col(q1));
    p2.col(c) = score.weights.cwiseProduct(score.components[static_cast<std::size_t>(c)].col(q2));
  }
  return T * (p1.transpose() * p2 / static_cast<double>(n)) * T.transpose();
}

enum class BandKind { pointwise, uniform };
enum class BandMethod { sandwich, boot_unprojected, boot_projected };

struct ConfidenceBands {
  double level = 0;               // 1 - alpha
  Eigen::MatrixXd lower;          // (p+1) x Q
  Eigen::MatrixXd upper;          // (p+1) x Q
  Eigen::VectorXd critical_values;  // per coefficient (uniform bands only)
  BandKind kind = BandKind::pointwise;
  BandMethod method = BandMethod::sandwich;
  CoefficientVariant estimator = CoefficientVariant::unprojected;  // which fit is banded
};

//! sandwich pointwise (1-alpha) CI: beta_k(u) +- z_{1-alpha/2} sigma_k(u)/sqrt(n)
inline ConfidenceBands pointwise_band(const CoefficientCurves& fit, const VarianceKernel& kernel,
                                      double alpha, Eigen::Index n) {
  if (!(alpha > 0 && alpha < 1)) throw validation_error("pointwise_band: alpha must be in (0,1)");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  Eigen::MatrixXd est(fit.p() + 1, fit.beta0.size());
  est.row(0) = fit.beta0.transpose();
  est.bottomRows(fit.p()) = fit.beta1;
  ConfidenceBands b;
  b.level = 1.0 - alpha;
  b.kind = BandKind::pointwise;
  b.method = BandMethod::sandwich;
  b.estimator = fit.variant;
  const Eigen::MatrixXd half = z / std::sqrt(static_cast<double>(n)) * kernel.sigma;
  b.lower = est - half;
  b.upper = est + half;
  return b;
}

//! B realizations of the (p+1) x Q bootstrap coefficient process.
struct BootstrapDraws {
  std::vector<Eigen::MatrixXd> draws;  // B matrices, (p+1) x Q
  std::uint64_t master_seed = 0;
  bool clustered = false;
};

enum class BootstrapVariant { unprojected, projected };

namespace detail {

//! cluster index per group, in order of first appearance; identity when no
//! clusters are given (so the all-singleton case is bit-identical to the
//! unclustered one)
inline std::vector<Eigen::Index> cluster_indices(const GroupedDesign& design,
                                                 Eigen::Index& n_clusters) {
  const Eigen::Index n = design.n();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  if (design.cluster.empty()) {
    for (Eigen::Index j = 0; j < n; ++j) idx[static_cast<std::size_t>(j)] = j;
    n_clusters = n;
    return idx;
  }
  std::unordered_map<std::string, Eigen::Index> seen;
  Eigen::Index next = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    auto [it, inserted] = seen.emplace(design.cluster[static_cast<std::size_t>(j)], next);
    if (inserted) ++next;
    idx[static_cast<std::size_t>(j)] = it->second;
  }
  n_clusters = next;
  return idx;
}

//! one multiplier per cluster, expanded to groups
inline Eigen::VectorXd draw_multipliers(const std::vector<Eigen::Index>& cluster_idx,
                                        Eigen::Index n_clusters, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd per_cluster(n_clusters);
  for (Eigen::Index c = 0; c < n_clusters; ++c) per_cluster[c] = normal(rng);
  Eigen::VectorXd omega(static_cast<Eigen::Index>(cluster_idx.size()));
  for (std::size_t j = 0; j < cluster_idx.size(); ++j)
    omega[static_cast<Eigen::Index>(j)] = per_cluster[cluster_idx[j]];
  return omega;
}

}  // namespace detail

//! Bootstrap process for one vector of multipliers.
//! unprojected: G*(u) = T n^{-1/2} sum_j omega_j w_j Phi_j(u).
//! projected:   perturb to beta_tilde* = beta_tilde + G*/sqrt(n), evaluate the
//! fitted curves at every X_j, project each, OLS-recover beta_hat*, and return
//! sqrt(n)(beta_hat* - beta_hat^IVFR).
inline Eigen::MatrixXd bootstrap_draw(const GroupedDesign& design, const MomentSet& m,
                                      const ScoreMatrix& score,
                                      const CoefficientCurves& fit_unproj,
                                      const CoefficientCurves* fit_proj,
                                      BootstrapVariant variant, const Eigen::VectorXd& omega) {
  const Eigen::Index n = design.n();
  const Eigen::Index Q = design.q();
  const Eigen::Index l = design.l();
  const double sqrtn = std::sqrt(static_cast<double>(n));

  const Eigen::VectorXd ww = omega.cwiseProduct(score.weights);
  Eigen::MatrixXd raw(1 + l, Q);
  for (Eigen::Index c = 0; c <= l; ++c)
    raw.row(c) = (ww.transpose() * score.components[static_cast<std::size_t>(c)]) / sqrtn;
  const Eigen::MatrixXd g_unproj = score_transform(m) * raw;  // (1+p) x Q

  if (variant == BootstrapVariant::unprojected) return g_unproj;

  // projected: rerun the projection + OLS recovery on the perturbed fit
  CoefficientCurves star = fit_unproj;
  star.beta0 += g_unproj.row(0).transpose() / sqrtn;
  star.beta1 += g_unproj.bottomRows(design.p()) / sqrtn;
  const IvfrFit refit = ivfr_fit(design, m, star);
  Eigen::MatrixXd g(1 + design.p(), Q);
  g.row(0) = sqrtn * (refit.coeffs.beta0 - fit_proj->beta0).transpose();
  g.bottomRows(design.p()) = sqrtn * (refit.coeffs.beta1 - fit_proj->beta1);
  return g;
}

//! ceiling-order-statistic empirical quantile of the per-coefficient sup
//! statistic sup_u |G_k(u)| / sigma_k(u); grid points with sigma below the
//! floor are excluded from the sup
inline Eigen::VectorXd empirical_quantile_of_sup(const BootstrapDraws& draws,
                                                 const Eigen::MatrixXd& sigma, double alpha,
                                                 bool* sigma_floor_hit = nullptr) {
  if (draws.draws.empty()) throw validation_error("empirical_quantile_of_sup: no draws");
  const Eigen::Index ncoef = sigma.rows();
  const Eigen::Index Q = sigma.cols();
  const std::size_t B = draws.draws.size();
  if (sigma_floor_hit) *sigma_floor_hit = false;

  Eigen::VectorXd crit(ncoef);
  std::vector<double> sups(B);
  for (Eigen::Index k = 0; k < ncoef; ++k) {
    for (std::size_t b = 0; b < B; ++b) {
      double sup = 0;
      for (Eigen::Index q = 0; q < Q; ++q) {
        if (sigma(k, q) < kSigmaFloor) {
          if (sigma_floor_hit) *sigma_floor_hit = true;
          continue;
        }
        sup = std::max(sup, std::abs(draws.draws[b](k, q)) / sigma(k, q));
      }
      sups[b] = sup;
    }
    std::sort(sups.begin(), sups.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil((1.0 - alpha) * static_cast<double>(B) - 1e-12));
    crit[k] = sups[std::clamp<std::size_t>(rank, 1, B) - 1];
  }
  return crit;
}

struct BootstrapResult {
  BootstrapDraws draws;
  ConfidenceBands uniform;
  bool degenerate_warning = false;  // singleton-only clusters with tiny n
  bool sigma_floor_hit = false;
};

//! Multiplier bootstrap uniform band. The sigma used for studentization and
//! the band matches the variant (sandwich from unprojected vs projected
//! residuals). The optional multiplier_hook replaces the N(0,1) multipliers
//! (test hook); it receives the draw index.
inline BootstrapResult multiplier_bootstrap(
    const GroupedDesign& design, const MomentSet& m, const CoefficientCurves& fit_unproj,
    const CoefficientCurves* fit_proj, Eigen::Index B, double alpha, BootstrapVariant variant,
    std::uint64_t master_seed,
    const std::function<Eigen::VectorXd(Eigen::Index)>* multiplier_hook = nullptr) {
  if (B < 1) throw validation_error("bootstrap: B must be >= 1");
  if (!(alpha > 0 && alpha < 1)) throw validation_error("bootstrap: alpha must be in (0,1)");
  if (variant == BootstrapVariant::projected && !fit_proj)
    throw validation_error("bootstrap: projected variant requires the projected fit");

  const CoefficientCurves& center =
      variant == BootstrapVariant::projected ? *fit_proj : fit_unproj;
  const ScoreMatrix score = score_matrix(design, m, fit_unproj);
  const ScoreMatrix score_var = variant == BootstrapVariant::projected
                                    ? score_matrix(design, m, *fit_proj)
                                    : score;
  const VarianceKernel kernel = sandwich_variance(score_var, m);

  Eigen::Index n_clusters = 0;
  const auto cluster_idx = detail::cluster_indices(design, n_clusters);

  BootstrapResult res;
  res.degenerate_warning = !design.cluster.empty() && n_clusters == design.n() && design.n() < 10;
  res.draws.master_seed = master_seed;
  res.draws.clustered = !design.cluster.empty();
  res.draws.draws.resize(static_cast<std::size_t>(B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const Eigen::VectorXd omega =
        multiplier_hook ? (*multiplier_hook)(b)
                        : detail::draw_multipliers(cluster_idx, n_clusters,
                                                   derive_seed(master_seed, static_cast<std::uint64_t>(b)));
    res.draws.draws[static_cast<std::size_t>(b)] =
        bootstrap_draw(design, m, score, fit_unproj, fit_proj, variant, omega);
  }

  const Eigen::VectorXd crit =
      empirical_quantile_of_sup(res.draws, kernel.sigma, alpha, &res.sigma_floor_hit);

  Eigen::MatrixXd est(center.p() + 1, center.beta0.size());
  est.row(0) = center.beta0.transpose();
  est.bottomRows(center.p()) = center.beta1;
  res.uniform.level = 1.0 - alpha;
  res.uniform.kind = BandKind::uniform;
  res.uniform.method = variant == BootstrapVariant::projected ? BandMethod::boot_projected
                                                              : BandMethod::boot_unprojected;
  res.uniform.estimator = center.variant;
  res.uniform.critical_values = crit;
  const double sqrtn = std::sqrt(static_cast<double>(design.n()));
  res.uniform.lower = est - crit.asDiagonal() * kernel.sigma / sqrtn;
  res.uniform.upper = est + crit.asDiagonal() * kernel.sigma / sqrtn;
  return res;
}

}  // namespace ivfr
