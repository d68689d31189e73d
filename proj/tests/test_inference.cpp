#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ivfr/inference.hpp"
#include "ivfr/stats.hpp"

using namespace ivfr;
using test_helpers::random_design;

namespace {

GroupedDesign noisy_design(std::uint64_t seed, Eigen::Index n = 30, Eigen::Index p = 1,
                           Eigen::Index l = 1, double noise = 1.0, bool weights = false) {
  std::mt19937_64 rng(seed);
  return random_design(rng, n, p, l, build_grid(0.05, 0.95, 19), weights, noise);
}

}  // namespace

TEST_CASE("score matrix structure") {
  const GroupedDesign d = noisy_design(5, 25, 2, 3, 1.0, true);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves c = unconstrained_fit(d, m);
  const ScoreMatrix s = score_matrix(d, m, c);
  REQUIRE(s.components.size() == 4);  // 1 + l

  // first component columns have zero weighted mean
  const Eigen::VectorXd col_means =
      s.components[0].transpose() * s.weights / static_cast<double>(d.n());
  CHECK(col_means.cwiseAbs().maxCoeff() < 1e-12);

  // grid mismatch rejected
  CoefficientCurves wrong = c;
  wrong.grid = build_grid(0.1, 0.9, 19);
  CHECK_THROWS_AS(score_matrix(d, m, wrong), validation_error);
}

TEST_CASE("exact-fit design has zero slope scores") {
  std::mt19937_64 rng(7);
  GroupedDesign d = random_design(rng, 20, 1, 1, build_grid(0.05, 0.95, 9), false, /*noise=*/0.0);
  d.Z = d.X;
  const MomentSet m = compute_moments(d);
  const ScoreMatrix s = score_matrix(d, m, unconstrained_fit(d, m));
  CHECK(s.residuals.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(s.components[1].cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("hand-built n = 3 scalar design scores") {
  const GridPtr g = build_grid(0.5, 0.5 + 1e-9, 2);
  GroupedDesign d;
  d.grid = g;
  d.X.resize(3, 1);
  d.X << 0, 1, 2;
  d.Z.resize(3, 1);
  d.Z << 0, 2, 4;
  d.outcomes.resize(3, 2);
  d.outcomes << 1, 1, 2, 2, 6, 6;
  const MomentSet m = compute_moments(d);
  const CoefficientCurves c = unconstrained_fit(d, m);
  // closed form: ztilde = (-2,0,2), beta1 = (−2·1+2·6)/(−2·0+2·2·? ) -> use dot products
  const double beta1 = (-2.0 * 1 + 0 + 2.0 * 6) / (-2.0 * (-1) * 1 + 0 + 2.0 * 1 * 1);
  CHECK(c.beta1(0, 0) == doctest::Approx(beta1).epsilon(1e-12));
  const ScoreMatrix s = score_matrix(d, m, c);
  const double qbar = 3.0;
  for (Eigen::Index j = 0; j < 3; ++j) {
    CHECK(s.components[0](j, 0) == doctest::Approx(d.outcomes(j, 0) - qbar).epsilon(1e-12));
    const double xi = d.outcomes(j, 0) - (c.beta0[0] + beta1 * (d.X(j, 0) - 1.0));
    CHECK(s.components[1](j, 0) == doctest::Approx((d.Z(j, 0) - 2.0) * xi).epsilon(1e-12));
  }
}

TEST_CASE("sandwich variance matches a direct loop oracle and is symmetric PSD") {
  const GroupedDesign d = noisy_design(11, 30, 2, 3, 1.2, true);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves c = unconstrained_fit(d, m);
  const ScoreMatrix s = score_matrix(d, m, c);
  const VarianceKernel k = sandwich_variance(s, m);
  const Eigen::MatrixXd T = score_transform(m);

  for (Eigen::Index q = 0; q < d.q(); q += 6) {
    // direct oracle: explicit sums over groups
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(4, 4);
    for (Eigen::Index j = 0; j < d.n(); ++j) {
      Eigen::VectorXd phi(4);
      for (Eigen::Index comp = 0; comp < 4; ++comp)
        phi[comp] = s.weights[j] * s.components[static_cast<std::size_t>(comp)](j, q);
      meat += phi * phi.transpose();
    }
    meat /= static_cast<double>(d.n());
    const Eigen::MatrixXd oracle = T * meat * T.transpose();
    const Eigen::MatrixXd& omega = k.omega_diag[static_cast<std::size_t>(q)];
    CHECK((omega - oracle).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((omega - omega.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
    for (Eigen::Index r = 0; r < 3; ++r)
      CHECK(k.sigma(r, q) == doctest::Approx(std::sqrt(std::max(0.0, omega(r, r)))).epsilon(1e-12));
  }

  // off-diagonal oracle consistency at (q, q)
  const Eigen::MatrixXd diag_via_kernel = sandwich_kernel_at(s, m, 3, 3);
  CHECK((diag_via_kernel - k.omega_diag[3]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero-residual design: slope blocks vanish") {
  std::mt19937_64 rng(13);
  GroupedDesign d = random_design(rng, 20, 1, 1, build_grid(0.05, 0.95, 9), false, 0.0);
  d.Z = d.X;
  const MomentSet m = compute_moments(d);
  const ScoreMatrix s = score_matrix(d, m, unconstrained_fit(d, m));
  const VarianceKernel k = sandwich_variance(s, m);
  for (const auto& omega : k.omega_diag) {
    CHECK(std::abs(omega(1, 1)) < 1e-12);
    CHECK(std::abs(omega(0, 1)) < 1e-12);
  }
}

TEST_CASE("pointwise band arithmetic") {
  const GroupedDesign d = noisy_design(17);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves c = unconstrained_fit(d, m);
  VarianceKernel k;
  k.sigma = Eigen::MatrixXd::Constant(2, d.q(), 2.0);

  // alpha = 0.05, sigma = 2, n = 100 -> half-width 2 * 1.959964 / 10
  {
    CoefficientCurves c100 = c;
    const ConfidenceBands b = pointwise_band(c100, k, 0.05, 100);
    CHECK(b.level == doctest::Approx(0.95));
    const double half = (b.upper(0, 0) - b.lower(0, 0)) / 2.0;
    CHECK(half == doctest::Approx(0.3919928).epsilon(1e-6));
  }
  // alpha = 0.317310507862914 (z = 1), sigma = 1, n = 1 -> half-width 1
  {
    k.sigma.setOnes();
    const ConfidenceBands b = pointwise_band(c, k, 0.317310507862914, 1);
    CHECK((b.upper(1, 3) - b.lower(1, 3)) / 2.0 == doctest::Approx(1.0).epsilon(1e-9));
  }
  // sigma = 0 collapses onto the estimate
  {
    k.sigma.setZero();
    const ConfidenceBands b = pointwise_band(c, k, 0.05, 50);
    CHECK((b.upper.row(0) - c.beta0.transpose()).cwiseAbs().maxCoeff() == 0);
    CHECK((b.lower.bottomRows(1) - c.beta1).cwiseAbs().maxCoeff() == 0);
  }
  CHECK_THROWS_AS(pointwise_band(c, k, 0.0, 10), validation_error);
  CHECK_THROWS_AS(pointwise_band(c, k, 1.0, 10), validation_error);
}

TEST_CASE("empirical quantile of the sup statistic") {
  // craft draws with a single coefficient, single grid point and sigma = 1
  auto make_draws = [](std::vector<double> vals) {
    BootstrapDraws d;
    for (double v : vals) d.draws.push_back(Eigen::MatrixXd::Constant(1, 1, v));
    return d;
  };
  const Eigen::MatrixXd sigma = Eigen::MatrixXd::Ones(1, 1);

  // {1,2,3,4}, alpha = 0.25 -> ceil(0.75*4) = 3rd order statistic = 3
  CHECK(empirical_quantile_of_sup(make_draws({1, 2, 3, 4}), sigma, 0.25)[0] == 3);
  // B = 1 -> the single sup for any alpha
  CHECK(empirical_quantile_of_sup(make_draws({2.5}), sigma, 0.05)[0] == 2.5);
  CHECK(empirical_quantile_of_sup(make_draws({2.5}), sigma, 0.5)[0] == 2.5);
  // all equal
  CHECK(empirical_quantile_of_sup(make_draws({7, 7, 7}), sigma, 0.1)[0] == 7);
  // monotone in the level 1 - alpha
  const BootstrapDraws d20 = make_draws({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  double prev = 0;
  for (double alpha : {0.9, 0.5, 0.25, 0.1, 0.05}) {
    const double c = empirical_quantile_of_sup(d20, sigma, alpha)[0];
    CHECK(c >= prev);
    prev = c;
  }
  CHECK_THROWS_AS(empirical_quantile_of_sup(BootstrapDraws{}, sigma, 0.1), validation_error);

  // sigma below the floor excludes the point from the sup
  Eigen::MatrixXd sig2(1, 2);
  sig2 << 1.0, 0.0;
  BootstrapDraws dd;
  Eigen::MatrixXd draw(1, 2);
  draw << 1.0, 99.0;
  dd.draws.push_back(draw);
  bool floor_hit = false;
  CHECK(empirical_quantile_of_sup(dd, sig2, 0.05, &floor_hit)[0] == 1.0);
  CHECK(floor_hit);
}

TEST_CASE("zero multipliers collapse the uniform band (test hook)") {
  const GroupedDesign d = noisy_design(19);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  const IvfrFit proj = ivfr_fit(d, m, unproj);
  const std::function<Eigen::VectorXd(Eigen::Index)> zeros =
      [&](Eigen::Index) { return Eigen::VectorXd::Zero(d.n()); };
  for (BootstrapVariant v : {BootstrapVariant::unprojected, BootstrapVariant::projected}) {
    const BootstrapResult r =
        multiplier_bootstrap(d, m, unproj, &proj.coeffs, 20, 0.05, v, 1, &zeros);
    for (const auto& g : r.draws.draws) CHECK(g.cwiseAbs().maxCoeff() < 1e-11);
    CHECK(r.uniform.critical_values.cwiseAbs().maxCoeff() < 1e-11);
    const Eigen::MatrixXd est = v == BootstrapVariant::projected
                                    ? (Eigen::MatrixXd(2, d.q()) << proj.coeffs.beta0.transpose(),
                                       proj.coeffs.beta1)
                                          .finished()
                                    : (Eigen::MatrixXd(2, d.q()) << unproj.beta0.transpose(),
                                       unproj.beta1)
                                          .finished();
    CHECK((r.uniform.upper - est).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((r.uniform.lower - est).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("bootstrap determinism and cluster reduction") {
  GroupedDesign d = noisy_design(23, 40, 1, 2);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  const IvfrFit proj = ivfr_fit(d, m, unproj);

  const BootstrapResult a =
      multiplier_bootstrap(d, m, unproj, &proj.coeffs, 50, 0.05, BootstrapVariant::unprojected, 99);
  const BootstrapResult b =
      multiplier_bootstrap(d, m, unproj, &proj.coeffs, 50, 0.05, BootstrapVariant::unprojected, 99);
  for (std::size_t i = 0; i < 50; ++i) CHECK(a.draws.draws[i] == b.draws.draws[i]);

  // every group its own cluster == unclustered, bit-exact
  GroupedDesign dc = d;
  for (Eigen::Index j = 0; j < d.n(); ++j) dc.cluster.push_back("g" + std::to_string(j));
  const BootstrapResult c = multiplier_bootstrap(dc, compute_moments(dc), unproj, &proj.coeffs, 50,
                                                 0.05, BootstrapVariant::unprojected, 99);
  for (std::size_t i = 0; i < 50; ++i) CHECK(a.draws.draws[i] == c.draws.draws[i]);
  CHECK(c.draws.clustered);

  // different seeds give different draws
  const BootstrapResult e =
      multiplier_bootstrap(d, m, unproj, &proj.coeffs, 50, 0.05, BootstrapVariant::unprojected, 100);
  CHECK(a.draws.draws[0] != e.draws.draws[0]);
}

TEST_CASE("clustered multipliers are shared within clusters") {
  GroupedDesign d = noisy_design(29, 12, 1, 1);
  d.cluster = {"a", "a", "a", "b", "b", "b", "c", "c", "c", "d", "d", "d"};
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  // capture the multipliers through the hook contract: replicate what the
  // library derives and verify the draw equals the hand-computed sum
  const ScoreMatrix s = score_matrix(d, m, unproj);
  const BootstrapResult r =
      multiplier_bootstrap(d, m, unproj, nullptr, 3, 0.05, BootstrapVariant::unprojected, 7);
  for (Eigen::Index b = 0; b < 3; ++b) {
    std::mt19937_64 rng(derive_seed(7, static_cast<std::uint64_t>(b)));
    std::normal_distribution<double> normal;
    Eigen::VectorXd per_cluster(4);
    for (int cidx = 0; cidx < 4; ++cidx) per_cluster[cidx] = normal(rng);
    Eigen::VectorXd omega(12);
    for (Eigen::Index j = 0; j < 12; ++j) omega[j] = per_cluster[j / 3];
    const Eigen::MatrixXd expect = bootstrap_draw(d, m, s, unproj, nullptr,
                                                  BootstrapVariant::unprojected, omega);
    CHECK((r.draws.draws[static_cast<std::size_t>(b)] - expect).cwiseAbs().maxCoeff() == 0);
  }
}

TEST_CASE("projected and unprojected draws coincide when projection never binds") {
  std::mt19937_64 rng(31);
  GroupedDesign d = random_design(rng, 25, 1, 1, build_grid(0.05, 0.95, 19), false, 0.02);
  for (Eigen::Index q = 0; q < d.q(); ++q)
    d.outcomes.col(q).array() += 100.0 * d.grid->points[static_cast<std::size_t>(q)];
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  const IvfrFit proj = ivfr_fit(d, m, unproj);
  REQUIRE(proj.invalid_rate == 0);
  // tiny multipliers keep every perturbed curve monotone
  std::mt19937_64 hrng(77);
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> omegas;
  for (int b = 0; b < 20; ++b) {
    Eigen::VectorXd o(d.n());
    for (Eigen::Index j = 0; j < d.n(); ++j) o[j] = 1e-3 * normal(hrng);
    omegas.push_back(o);
  }
  const std::function<Eigen::VectorXd(Eigen::Index)> hook =
      [&](Eigen::Index b) { return omegas[static_cast<std::size_t>(b)]; };
  const BootstrapResult ru = multiplier_bootstrap(d, m, unproj, &proj.coeffs, 20, 0.05,
                                                  BootstrapVariant::unprojected, 1, &hook);
  const BootstrapResult rp = multiplier_bootstrap(d, m, unproj, &proj.coeffs, 20, 0.05,
                                                  BootstrapVariant::projected, 1, &hook);
  for (std::size_t b = 0; b < 20; ++b)
    CHECK((ru.draws.draws[b] - rp.draws.draws[b]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("draw means vanish at the Monte Carlo rate and SEs match the sandwich") {
  const GroupedDesign d = noisy_design(37, 40, 1, 1, 0.8);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  const VarianceKernel k = sandwich_variance(score_matrix(d, m, unproj), m);
  const Eigen::Index B = 4000;
  const BootstrapResult r =
      multiplier_bootstrap(d, m, unproj, nullptr, B, 0.05, BootstrapVariant::unprojected, 1234);

  for (Eigen::Index coef = 0; coef < 2; ++coef) {
    for (Eigen::Index q = 0; q < d.q(); q += 4) {
      double mean = 0, sq = 0;
      for (const auto& g : r.draws.draws) {
        mean += g(coef, q);
        sq += g(coef, q) * g(coef, q);
      }
      mean /= static_cast<double>(B);
      const double sd = std::sqrt(sq / static_cast<double>(B) - mean * mean);
      CHECK(std::abs(mean) <= 3.0 * sd / std::sqrt(static_cast<double>(B)) + 1e-12);
      // bootstrap SE within 5% of the sandwich sigma
      CHECK(sd == doctest::Approx(k.sigma(coef, q)).epsilon(0.05));
    }
  }
}

TEST_CASE("uniform band contains the pointwise band when c >= z") {
  const GroupedDesign d = noisy_design(41, 35, 1, 1, 1.0);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  const VarianceKernel k = sandwich_variance(score_matrix(d, m, unproj), m);
  const ConfidenceBands pw = pointwise_band(unproj, k, 0.05, d.n());
  const BootstrapResult r =
      multiplier_bootstrap(d, m, unproj, nullptr, 500, 0.05, BootstrapVariant::unprojected, 5);
  const double z = normal_quantile(0.975);
  for (Eigen::Index coef = 0; coef < 2; ++coef) {
    if (r.uniform.critical_values[coef] < z) continue;
    for (Eigen::Index q = 0; q < d.q(); ++q) {
      CHECK(r.uniform.lower(coef, q) <= pw.lower(coef, q) + 1e-12);
      CHECK(r.uniform.upper(coef, q) >= pw.upper(coef, q) - 1e-12);
    }
  }
}

TEST_CASE("bootstrap input validation and degenerate warning") {
  GroupedDesign d = noisy_design(43, 8, 1, 1);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  CHECK_THROWS_AS(multiplier_bootstrap(d, m, unproj, nullptr, 0, 0.05,
                                       BootstrapVariant::unprojected, 1),
                  validation_error);
  CHECK_THROWS_AS(multiplier_bootstrap(d, m, unproj, nullptr, 10, 0.05,
                                       BootstrapVariant::projected, 1),
                  validation_error);
  CHECK_THROWS_AS(multiplier_bootstrap(d, m, unproj, nullptr, 10, 1.5,
                                       BootstrapVariant::unprojected, 1),
                  validation_error);
  // singleton-only clusters on a tiny design
  for (Eigen::Index j = 0; j < d.n(); ++j) d.cluster.push_back("c" + std::to_string(j));
  const BootstrapResult r = multiplier_bootstrap(d, compute_moments(d), unproj, nullptr, 10, 0.05,
                                                 BootstrapVariant::unprojected, 1);
  CHECK(r.degenerate_warning);
}
