#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ivfr/errors.hpp"
#include "ivfr/estimator.hpp"
#include "ivfr/inference.hpp"
#include "ivfr/parallel.hpp"
#include "ivfr/quantile.hpp"
#include "ivfr/stats.hpp"

namespace ivfr {

enum class Panel { A, B, C, D };

inline std::string panel_name(Panel p) {
  switch (p) {
    case Panel::A: return "A";
    case Panel::B: return "B";
    case Panel::C: return "C";
    default: return "D";
  }
}

inline Panel panel_from_string(const std::string& s) {
  if (s == "A" || s == "a") return Panel::A;
  if (s == "B" || s == "b") return Panel::B;
  if (s == "C" || s == "c") return Panel::C;
  if (s == "D" || s == "d") return Panel::D;
  throw validation_error("unknown panel '" + s + "' (expected A, B, C or D)");
}

//! Full parameterization of the Monte Carlo designs.
struct DgpConfig {
  Panel panel = Panel::D;
  Eigen::Index n = 50;   // groups
  Eigen::Index N = 50;   // observations per group
  Eigen::Index p = 1;    // treatment + p-1 controls
  double delta = 0.0;    // first-stage heterogeneity
  double pi_Z = 1.0;     // first-stage strength
  double beta_slope = 0.0;  // treatment curvature
  double B_X = 1.5;      // tanh bound for the treatment
  double B_W = 1.5;      // tanh bound for the controls
  std::optional<double> explicit_sigma;  // overrides the analytic sigma rule
  GridPtr grid;
  std::uint64_t master_seed = 1;

  void validate() const {
    if (n < 5) throw validation_error("dgp: need n >= 5");
    if (N < 2) throw validation_error("dgp: need N >= 2");
    if (p < 1) throw validation_error("dgp: need p >= 1");
    if (!(B_X > 0) || !(B_W > 0)) throw validation_error("dgp: tanh bounds must be positive");
    if (!grid) throw validation_error("dgp: missing grid");
    if ((panel == Panel::A || panel == Panel::D) && p != 1)
      throw validation_error("dgp: panel " + panel_name(panel) + " requires p = 1");
  }

  bool lognormal_base() const { return panel != Panel::D; }

  double gamma(double u) const {
    return std::sqrt(u) + beta_slope * std::sin(2.0 * M_PI * u);
  }
  double gamma_prime(double u) const {
    return 0.5 / std::sqrt(u) + beta_slope * 2.0 * M_PI * std::cos(2.0 * M_PI * u);
  }
  //! control effect h_k, k = 1..p-1 (zero in Panel B)
  double h(Eigen::Index k, double u) const {
    if (panel != Panel::C) return 0.0;
    if (k % 2 == 1) return u;  // odd controls
    return 0.1 * std::sin(static_cast<double>(k) * M_PI * u);
  }
  double h_prime_sup(Eigen::Index k) const {
    if (panel != Panel::C) return 0.0;
    if (k % 2 == 1) return 1.0;
    return 0.1 * static_cast<double>(k) * M_PI;
  }

  //! sigma from the analytic monotonicity rule sigma*m0 > B_X*L_gamma + B_W*sum L_k,
  //! with the infima/suprema evaluated on a 1000-point grid over [a,b] and a
  //! 5% safety margin
  double sigma() const {
    if (explicit_sigma) return *explicit_sigma;
    if (!lognormal_base()) return 0.0;
    const double a = grid->a, b = grid->b;
    double m0 = std::numeric_limits<double>::infinity();
    double L_gamma = 0;
    for (int i = 0; i < 1000; ++i) {
      const double u = a + (b - a) * (static_cast<double>(i) + 0.5) / 1000.0;
      const double z = normal_quantile(u);
      m0 = std::min(m0, std::exp(z) / normal_pdf(z));  // q0'(u) for q0 = exp(Phi^-1)
      L_gamma = std::max(L_gamma, std::abs(gamma_prime(u)));
    }
    double sum_Lk = 0;
    for (Eigen::Index k = 1; k < p; ++k) sum_Lk += h_prime_sup(k);
    return 1.05 * (B_X * L_gamma + B_W * sum_Lk) / m0;
  }

  double base(double u) const {
    return lognormal_base() ? sigma() * lognormal_quantile(u) : 0.0;
  }
  //! true population intercept curve b0(u) + u/2
  double intercept_truth(double u) const { return base(u) + 0.5 * u; }
};

//! True coefficient curves on the config grid.
struct TruthCurves {
  QuantileCurve intercept;
  QuantileCurve gamma;                        // treatment coefficient
  std::vector<QuantileCurve> control_effects; // p-1 curves

  //! structural conditional quantile curve q(x, .) at raw covariates x
  QuantileCurve at(const Eigen::VectorXd& x) const {
    Eigen::VectorXd v = intercept.values + x[0] * gamma.values;
    for (std::size_t k = 0; k < control_effects.size(); ++k)
      v += x[static_cast<Eigen::Index>(k) + 1] * control_effects[k].values;
    return {intercept.grid, std::move(v)};
  }
};

inline TruthCurves make_truth(const DgpConfig& cfg) {
  const auto Q = static_cast<Eigen::Index>(cfg.grid->size());
  Eigen::VectorXd ic(Q), ga(Q);
  for (Eigen::Index q = 0; q < Q; ++q) {
    const double u = cfg.grid->points[static_cast<std::size_t>(q)];
    ic[q] = cfg.intercept_truth(u);
    ga[q] = cfg.gamma(u);
  }
  TruthCurves t;
  t.intercept = {cfg.grid, std::move(ic)};
  t.gamma = {cfg.grid, std::move(ga)};
  for (Eigen::Index k = 1; k < cfg.p; ++k) {
    Eigen::VectorXd hv(Q);
    for (Eigen::Index q = 0; q < Q; ++q)
      hv[q] = cfg.h(k, cfg.grid->points[static_cast<std::size_t>(q)]);
    t.control_effects.push_back({cfg.grid, std::move(hv)});
  }
  return t;
}

//! One Monte Carlo draw of the grouped design. Group-level randomness and the
//! per-group individual streams are seeded separately from (master_seed,
//! rep_index), so enlarging N extends each group's sample as a prefix.
inline std::pair<GroupedDesign, TruthCurves> generate_dgp(const DgpConfig& cfg,
                                                          std::uint64_t rep_index) {
  cfg.validate();
  const Eigen::Index n = cfg.n, p = cfg.p;
  std::mt19937_64 grng(derive_seed(cfg.master_seed, rep_index, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::VectorXd Zx(n), nu(n), zeta(n), x0(n);
  Eigen::MatrixXd W(n, p - 1);
  for (Eigen::Index j = 0; j < n; ++j) {
    Zx[j] = std::exp(0.25 * normal(grng));
    nu[j] = std::exp(0.25 * normal(grng));
    zeta[j] = unif(grng);
    for (Eigen::Index k = 0; k < p - 1; ++k) W(j, k) = normal(grng);
    x0[j] = (cfg.pi_Z + cfg.delta * (zeta[j] - 0.5)) * Zx[j] + zeta[j] + nu[j];
  }

  Eigen::VectorXd x(n);
  if (cfg.panel == Panel::D) {
    x = x0;  // exact CLP benchmark: no standardization or bounding
  } else {
    const double mean = x0.mean();
    const double sd = std::sqrt((x0.array() - mean).square().sum() /
                                static_cast<double>(n - 1));
    for (Eigen::Index j = 0; j < n; ++j)
      x[j] = cfg.B_X * std::tanh(((x0[j] - mean) / sd) / cfg.B_X);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index k = 0; k < p - 1; ++k)
        W(j, k) = cfg.B_W * std::tanh(W(j, k) / cfg.B_W);
  }

  const double sig = cfg.sigma();
  GroupedDesign d;
  d.grid = cfg.grid;
  d.X.resize(n, p);
  d.Z.resize(n, p);  // just-identified: excluded instrument + included controls
  d.X.col(0) = x;
  d.Z.col(0) = Zx;
  if (p > 1) {
    d.X.rightCols(p - 1) = W;
    d.Z.rightCols(p - 1) = W;
  }
  d.outcomes.resize(n, static_cast<Eigen::Index>(cfg.grid->size()));
  for (Eigen::Index j = 0; j < n; ++j) {
    std::mt19937_64 irng(derive_seed(cfg.master_seed, rep_index, static_cast<std::uint64_t>(j) + 1));
    GroupSample sample;
    sample.observations.resize(static_cast<std::size_t>(cfg.N));
    for (Eigen::Index i = 0; i < cfg.N; ++i) {
      const double u = unif(irng);
      double y = (cfg.lognormal_base() ? sig * lognormal_quantile(u) : 0.0) + 0.5 * u +
                 x[j] * cfg.gamma(u) + (zeta[j] - 0.5) * u;
      for (Eigen::Index k = 1; k < p; ++k) y += W(j, k - 1) * cfg.h(k, u);
      sample.observations[static_cast<std::size_t>(i)] = y;
    }
    d.outcomes.row(j) = empirical_quantile(sample, cfg.grid).values.transpose();
  }
  return {std::move(d), make_truth(cfg)};
}

//! First-stage F of the treatment on the instruments: partial F of the
//! excluded instrument in the regression of X_1 on (1, Z_excl, controls),
//! homoskedasticity-naive formula.
inline double first_stage_F(const GroupedDesign& design) {
  const Eigen::Index n = design.n();
  const Eigen::VectorXd y = design.X.col(0);
  auto ssr = [&](const Eigen::MatrixXd& R) {
    const Eigen::VectorXd coef =
        (R.transpose() * R).ldlt().solve(R.transpose() * y);
    return (y - R * coef).squaredNorm();
  };
  Eigen::MatrixXd full(n, design.l() + 1);
  full.col(0).setOnes();
  full.rightCols(design.l()) = design.Z;
  Eigen::MatrixXd restricted(n, design.l());  // drop the excluded instrument
  restricted.col(0).setOnes();
  if (design.l() > 1) restricted.rightCols(design.l() - 1) = design.Z.rightCols(design.l() - 1);
  const double ssr_f = ssr(full);
  const double ssr_r = ssr(restricted);
  const double dof = static_cast<double>(n - (design.l() + 1));
  return (ssr_r - ssr_f) / (ssr_f / dof);
}

//! Bisection on pi_Z so the median first-stage F over pilot replications
//! lands within +-10% of target_F.
inline double calibrate_pi_z(DgpConfig cfg, double target_F, int reps) {
  if (!(target_F > 0)) throw validation_error("calibrate: target_F must be positive");
  if (reps < 1) throw validation_error("calibrate: need at least one pilot replication");
  auto median_F = [&](double pi) {
    DgpConfig c = cfg;
    c.pi_Z = pi;
    std::vector<double> fs(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r)
      fs[static_cast<std::size_t>(r)] =
          first_stage_F(generate_dgp(c, 0x9A11B000ULL + static_cast<std::uint64_t>(r)).first);
    std::nth_element(fs.begin(), fs.begin() + reps / 2, fs.end());
    return fs[static_cast<std::size_t>(reps / 2)];
  };
  double lo = 0.01, hi = 50.0;
  const double f_lo = median_F(lo), f_hi = median_F(hi);
  if (target_F > f_hi || target_F < f_lo)
    throw validation_error("calibration error: target F " + std::to_string(target_F) +
                           " unreachable within pi_Z in [0.01, 50] (range " +
                           std::to_string(f_lo) + " to " + std::to_string(f_hi) + ")");
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 60; ++it) {
    mid = 0.5 * (lo + hi);
    const double f = median_F(mid);
    if (f >= 0.9 * target_F && f <= 1.1 * target_F) return mid;
    if (f < target_F)
      lo = mid;
    else
      hi = mid;
  }
  throw validation_error("calibration error: bisection failed to land within 10% of target F");
}

//! Per-replication outcomes for both estimators.
struct ReplicationMetrics {
  double imse_unproj = 0, imse_proj = 0;
  double w2_unproj = 0, w2_proj = 0;
  double invalid_rate = 0;
  double first_stage_F = 0;
  bool truth_monotone = true;  // q(truth, X_j, .) monotone at every X_j
  // treatment-coefficient inference (when bands were computed)
  bool has_bands = false;
  double pw_cover_unproj = 0, pw_cover_proj = 0;  // fraction of grid points covered
  bool unif_cover_unproj = false, unif_cover_proj = false;
  double unif_width_unproj = 0, unif_width_proj = 0;  // mean band width over u
  bool failed = false;
  std::string failure;
};

inline double imse_slope(const CoefficientCurves& fit, const TruthCurves& truth) {
  const Eigen::VectorXd quad = trapezoid_weights(*fit.grid);
  Eigen::MatrixXd err = fit.beta1;
  err.row(0) -= truth.gamma.values.transpose();
  for (std::size_t k = 0; k < truth.control_effects.size(); ++k)
    err.row(static_cast<Eigen::Index>(k) + 1) -= truth.control_effects[k].values.transpose();
  double total = 0;
  for (Eigen::Index q = 0; q < quad.size(); ++q) total += quad[q] * err.col(q).squaredNorm();
  return total;
}

inline ReplicationMetrics compute_metrics(const GroupedDesign& design, const MomentSet& m,
                                          const CoefficientCurves& unproj, const IvfrFit& proj,
                                          const TruthCurves& truth) {
  ReplicationMetrics r;
  r.imse_unproj = imse_slope(unproj, truth);
  r.imse_proj = imse_slope(proj.coeffs, truth);
  r.invalid_rate = proj.invalid_rate;
  r.first_stage_F = first_stage_F(design);

  const Eigen::MatrixXd psi = unproj.fitted_matrix(design.X);
  double w2u = 0, w2p = 0;
  for (Eigen::Index j = 0; j < design.n(); ++j) {
    const QuantileCurve q_true = truth.at(design.X.row(j).transpose());
    if (!q_true.is_monotone()) r.truth_monotone = false;
    w2u += w2_squared(QuantileCurve{design.grid, psi.row(j).transpose()}, q_true);
    w2p += w2_squared(proj.corrections[static_cast<std::size_t>(j)].projected, q_true);
  }
  r.w2_unproj = w2u / static_cast<double>(design.n());
  r.w2_proj = w2p / static_cast<double>(design.n());
  return r;
}

//! coverage of the treatment coefficient (row 1 of the band matrices)
inline void band_coverage(const ConfidenceBands& band, const TruthCurves& truth, double& frac,
                          bool& all, double& mean_width) {
  const Eigen::Index Q = truth.gamma.values.size();
  Eigen::Index covered = 0;
  double width = 0;
  for (Eigen::Index q = 0; q < Q; ++q) {
    const double t = truth.gamma.values[q];
    if (band.lower(1, q) <= t && t <= band.upper(1, q)) ++covered;
    width += band.upper(1, q) - band.lower(1, q);
  }
  frac = static_cast<double>(covered) / static_cast<double>(Q);
  all = covered == Q;
  mean_width = width / static_cast<double>(Q);
}

//! Table-1/Table-2-shaped aggregate of a replication batch.
struct MonteCarloSummary {
  DgpConfig config;
  int R = 0;
  Eigen::Index bootstrap_B = 0;
  double alpha = 0.05;
  int failed_replications = 0;
  // Table 1 columns
  double imse_unproj = 0, imse_proj = 0, imse_gain_pct = 0;
  double w2_unproj = 0, w2_proj = 0, w2_gain_pct = 0;
  double invalid_pct = 0;
  double median_F = 0;
  int truth_monotone_violations = 0;
  int proj_imse_not_better = 0;  // reps with monotone truth where projection did not improve
  // Table 2 columns (when inference was on)
  bool has_bands = false;
  double pw_coverage_unproj = 0, pw_coverage_proj = 0;
  double ub_coverage_unproj = 0, ub_coverage_proj = 0;
  double ub_width_unproj = 0, ub_width_proj = 0;  // medians across replications
  double width_delta_pct = 0;
  double frac_proj_width_leq = 0;  // share of reps with projected width <= unprojected
  std::vector<ReplicationMetrics> replications;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline ReplicationMetrics run_one_replication(const DgpConfig& cfg, std::uint64_t rep,
                                              Eigen::Index B, double alpha, bool inference_on) {
  ReplicationMetrics r;
  try {
    auto [design, truth] = generate_dgp(cfg, rep);
    const MomentSet m = compute_moments(design);
    const CoefficientCurves unproj = unconstrained_fit(design, m);
    const IvfrFit proj = ivfr_fit(design, m, unproj);
    r = compute_metrics(design, m, unproj, proj, truth);
    if (inference_on && B > 0) {
      const std::uint64_t boot_seed = derive_seed(cfg.master_seed, rep, 0xB007ULL);
      const BootstrapResult bu =
          multiplier_bootstrap(design, m, unproj, nullptr, B, alpha,
                               BootstrapVariant::unprojected, boot_seed);
      const BootstrapResult bp =
          multiplier_bootstrap(design, m, unproj, &proj.coeffs, B, alpha,
                               BootstrapVariant::projected, boot_seed);
      const ScoreMatrix su = score_matrix(design, m, unproj);
      const ScoreMatrix sp = score_matrix(design, m, proj.coeffs);
      const ConfidenceBands pwu =
          pointwise_band(unproj, sandwich_variance(su, m), alpha, design.n());
      const ConfidenceBands pwp =
          pointwise_band(proj.coeffs, sandwich_variance(sp, m), alpha, design.n());
      bool dummy;
      double dummyw;
      band_coverage(pwu, truth, r.pw_cover_unproj, dummy, dummyw);
      band_coverage(pwp, truth, r.pw_cover_proj, dummy, dummyw);
      double frac;
      band_coverage(bu.uniform, truth, frac, r.unif_cover_unproj, r.unif_width_unproj);
      band_coverage(bp.uniform, truth, frac, r.unif_cover_proj, r.unif_width_proj);
      r.has_bands = true;
    }
  } catch (const std::exception& e) {
    r.failed = true;
    r.failure = e.what();
  }
  return r;
}

inline MonteCarloSummary run_replications(const DgpConfig& cfg, int R, Eigen::Index B,
                                          bool inference_on, double alpha = 0.05,
                                          int workers = 1) {
  if (R < 1) throw validation_error("run_replications: need R >= 1");
  cfg.validate();
  std::vector<ReplicationMetrics> reps(static_cast<std::size_t>(R));
  parallel_for(static_cast<std::size_t>(R), workers, [&](std::size_t i) {
    reps[i] = run_one_replication(cfg, static_cast<std::uint64_t>(i), B, alpha, inference_on);
  });

  MonteCarloSummary s;
  s.config = cfg;
  s.R = R;
  s.bootstrap_B = B;
  s.alpha = alpha;
  std::vector<double> fs, wu, wp;
  int ok = 0, ub_u = 0, ub_p = 0, width_le = 0;
  double imse_u = 0, imse_p = 0, w2_u = 0, w2_p = 0, inv = 0, pw_u = 0, pw_p = 0;
  for (const auto& r : reps) {
    if (r.failed) {
      ++s.failed_replications;
      continue;
    }
    ++ok;
    imse_u += r.imse_unproj;
    imse_p += r.imse_proj;
    w2_u += r.w2_unproj;
    w2_p += r.w2_proj;
    inv += r.invalid_rate;
    fs.push_back(r.first_stage_F);
    if (!r.truth_monotone)
      ++s.truth_monotone_violations;
    else if (r.imse_proj > r.imse_unproj + 1e-10)
      ++s.proj_imse_not_better;
    if (r.has_bands) {
      s.has_bands = true;
      pw_u += r.pw_cover_unproj;
      pw_p += r.pw_cover_proj;
      if (r.unif_cover_unproj) ++ub_u;
      if (r.unif_cover_proj) ++ub_p;
      wu.push_back(r.unif_width_unproj);
      wp.push_back(r.unif_width_proj);
      if (r.unif_width_proj <= r.unif_width_unproj) ++width_le;
    }
  }
  if (ok == 0) throw numeric_error("run_replications: every replication failed");
  const double dok = static_cast<double>(ok);
  s.imse_unproj = imse_u / dok;
  s.imse_proj = imse_p / dok;
  s.imse_gain_pct = 100.0 * (1.0 - s.imse_proj / s.imse_unproj);
  s.w2_unproj = w2_u / dok;
  s.w2_proj = w2_p / dok;
  s.w2_gain_pct = 100.0 * (1.0 - s.w2_proj / s.w2_unproj);
  s.invalid_pct = 100.0 * inv / dok;
  s.median_F = median_of(fs);
  if (s.has_bands) {
    s.pw_coverage_unproj = pw_u / dok;
    s.pw_coverage_proj = pw_p / dok;
    s.ub_coverage_unproj = static_cast<double>(ub_u) / dok;
    s.ub_coverage_proj = static_cast<double>(ub_p) / dok;
    s.ub_width_unproj = median_of(wu);
    s.ub_width_proj = median_of(wp);
    s.width_delta_pct = 100.0 * (1.0 - s.ub_width_proj / s.ub_width_unproj);
    s.frac_proj_width_leq = static_cast<double>(width_le) / dok;
  }
  s.replications = std::move(reps);
  return s;
}

}  // namespace ivfr
