// Command line front end: fit / simulate / bench.
//
// Exit codes: 0 success, 2 validation error, 3 numerical error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "ivfr/bench.hpp"
#include "ivfr/io.hpp"
#include "ivfr/simulation.hpp"

namespace {

struct GridSpec {
  double a = 0.05, b = 0.95;
  std::size_t q = 19;
};

GridSpec parse_grid_flag(const std::string& s) {
  GridSpec g;
  if (s.empty()) return g;
  if (std::sscanf(s.c_str(), "%lf,%lf,%zu", &g.a, &g.b, &g.q) != 3)
    throw ivfr::validation_error("--grid expects a,b,Q (e.g. 0.05,0.95,19)");
  return g;
}

ivfr::json error_object(const std::string& kind, const std::string& what) {
  return ivfr::json{{"error", kind}, {"message", what}};
}

int run_fit(const std::string& group_file, const std::string& micro_file,
            const std::string& config_file, const GridSpec& grid, std::optional<double> alpha,
            std::optional<long long> bootstrap_B, const std::string& variant,
            const std::string& cluster_col, const std::string& weight_col,
            std::optional<unsigned long long> seed, const std::string& out_dir) {
  ivfr::RunConfig cfg;
  if (!config_file.empty()) cfg = ivfr::parse_config_file(config_file);
  cfg.grid_a = grid.a;
  cfg.grid_b = grid.b;
  cfg.grid_q = grid.q;
  if (alpha)
    cfg.alpha = *alpha;
  else if (config_file.empty())
    std::cerr << "note: alpha not given, defaulting to " << cfg.alpha << "\n";
  if (bootstrap_B) cfg.bootstrap_B = static_cast<Eigen::Index>(*bootstrap_B);
  if (!variant.empty()) cfg.bootstrap_variant = variant;
  if (!cluster_col.empty()) cfg.cluster_column = cluster_col;
  if (!weight_col.empty()) cfg.weight_column = weight_col;
  if (seed) cfg.seed = *seed;
  if (!out_dir.empty()) cfg.output_path = out_dir;
  cfg.validate();

  ivfr::DatasetFiles files;
  files.group_file = group_file;
  if (!micro_file.empty()) files.micro_file = micro_file;

  ivfr::ParseReport report;
  const ivfr::GroupedDesign design = ivfr::parse_dataset(files, cfg, &report);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";

  const ivfr::MomentSet m = ivfr::compute_moments(design);
  const ivfr::CoefficientCurves unproj = ivfr::unconstrained_fit(design, m);
  const ivfr::IvfrFit proj = ivfr::ivfr_fit(design, m, unproj);

  ivfr::ResultBundle bundle;
  bundle.grid = design.grid;
  bundle.unprojected = unproj;
  bundle.projected = proj.coeffs;
  bundle.invalid_rate = proj.invalid_rate;
  bundle.cond_Sigma_ZZ = m.cond_Sigma_ZZ;
  bundle.min_rel_singular_ZX = m.min_rel_singular_ZX;
  bundle.warnings = report.warnings;
  if (design.l() > design.p() || true) bundle.first_stage_F = ivfr::first_stage_F(design);

  const ivfr::ScoreMatrix score_u = ivfr::score_matrix(design, m, unproj);
  const ivfr::ScoreMatrix score_p = ivfr::score_matrix(design, m, proj.coeffs);
  bundle.bands.push_back(
      ivfr::pointwise_band(unproj, ivfr::sandwich_variance(score_u, m), cfg.alpha, design.n()));
  bundle.bands.push_back(ivfr::pointwise_band(proj.coeffs, ivfr::sandwich_variance(score_p, m),
                                              cfg.alpha, design.n()));
  if (cfg.bootstrap_variant == "unprojected" || cfg.bootstrap_variant == "both") {
    auto b = ivfr::multiplier_bootstrap(design, m, unproj, nullptr, cfg.bootstrap_B, cfg.alpha,
                                        ivfr::BootstrapVariant::unprojected, cfg.seed);
    bundle.bands.push_back(std::move(b.uniform));
  }
  if (cfg.bootstrap_variant == "projected" || cfg.bootstrap_variant == "both") {
    auto b = ivfr::multiplier_bootstrap(design, m, unproj, &proj.coeffs, cfg.bootstrap_B,
                                        cfg.alpha, ivfr::BootstrapVariant::projected, cfg.seed);
    bundle.bands.push_back(std::move(b.uniform));
  }

  ivfr::json echo{{"grid_a", cfg.grid_a},          {"grid_b", cfg.grid_b},
                  {"grid_q", cfg.grid_q},          {"alpha", cfg.alpha},
                  {"bootstrap_B", cfg.bootstrap_B}, {"bootstrap_variant", cfg.bootstrap_variant},
                  {"cluster_column", cfg.cluster_column},
                  {"weight_column", cfg.weight_column},
                  {"seed", cfg.seed}};
  bundle.config_echo = std::move(echo);

  namespace fs = std::filesystem;
  const fs::path out(cfg.output_path);
  ivfr::write_file_atomic((out / "result.json").string(), ivfr::to_json(bundle).dump(2) + "\n");
  ivfr::write_file_atomic((out / "bands.csv").string(), ivfr::plot_csv(bundle));
  std::cout << "wrote " << (out / "result.json").string() << " and " << (out / "bands.csv").string()
            << "\n";
  return 0;
}

int run_simulate(const std::string& panel, long long n, long long N, long long p, double delta,
                 std::optional<double> pi_z, std::optional<double> target_F, double beta_slope,
                 int R, long long B, double alpha, unsigned long long seed,
                 const GridSpec& grid, const std::string& out_dir, int workers) {
  ivfr::DgpConfig cfg;
  cfg.panel = ivfr::panel_from_string(panel);
  cfg.n = n;
  cfg.N = N;
  cfg.p = p;
  cfg.delta = delta;
  cfg.beta_slope = beta_slope;
  cfg.grid = ivfr::build_grid(grid.a, grid.b, grid.q);
  cfg.master_seed = seed;
  if (pi_z) cfg.pi_Z = *pi_z;
  if (target_F) {
    cfg.pi_Z = ivfr::calibrate_pi_z(cfg, *target_F, 60);
    std::cerr << "calibrated pi_Z = " << cfg.pi_Z << " for target F = " << *target_F << "\n";
  }
  const ivfr::MonteCarloSummary s =
      ivfr::run_replications(cfg, R, static_cast<Eigen::Index>(B), B > 0, alpha, workers);

  namespace fs = std::filesystem;
  const fs::path out(out_dir);
  ivfr::write_file_atomic((out / "summary.json").string(), ivfr::to_json(s).dump(2) + "\n");
  ivfr::write_file_atomic((out / "summary.csv").string(), ivfr::summary_csv(s));
  std::cout << "IMSE " << s.imse_unproj << " -> " << s.imse_proj << " (gain " << s.imse_gain_pct
            << "%), W2^2 " << s.w2_unproj << " -> " << s.w2_proj << " (gain " << s.w2_gain_pct
            << "%), invalid " << s.invalid_pct << "%, median F " << s.median_F << "\n";
  std::cout << "wrote " << (out / "summary.json").string() << "\n";
  return 0;
}

int run_bench(long long n, long long N, const GridSpec& grid, int runs,
              unsigned long long seed) {
  ivfr::DgpConfig cfg;
  cfg.panel = ivfr::Panel::D;
  cfg.n = n;
  cfg.N = N;
  cfg.p = 1;
  cfg.grid = ivfr::build_grid(grid.a, grid.b, grid.q);
  cfg.master_seed = seed;
  auto [design, truth] = ivfr::generate_dgp(cfg, 0);
  (void)truth;
  const ivfr::BenchReport rep = ivfr::run_bench(design, runs);
  std::cout << "n=" << rep.n << " Q=" << rep.Q << " runs=" << rep.runs << "\n"
            << "correctness gate: max coefficient diff = " << rep.max_coef_diff << "\n"
            << "vectorized second stage: " << rep.vectorized_ms << " ms (median)\n"
            << "per-quantile loop baseline: " << rep.naive_ms << " ms (median)\n"
            << "speedup: " << rep.ratio << "x\n"
            << "machine: " << std::thread::hardware_concurrency() << " hardware threads\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IV Frechet regression for distribution-valued outcomes"};
  app.require_subcommand(1);

  std::string grid_flag = "0.05,0.95,19";
  std::string out_dir = ".";
  double alpha = 0.05;
  unsigned long long seed = 1;

  // fit
  auto* fit = app.add_subcommand("fit", "fit IVFR on CSV data");
  std::string group_file, micro_file, config_file, variant, cluster_col, weight_col;
  long long bootstrap_B = 500;
  bool alpha_set = false, b_set = false, seed_set = false;
  fit->add_option("--groups", group_file, "group-level CSV")->required();
  fit->add_option("--micro", micro_file, "individual-level CSV (micro mode)");
  fit->add_option("--config", config_file, "flat key=value config file");
  fit->add_option("--grid", grid_flag, "a,b,Q");
  fit->add_option("--alpha", alpha, "band level alpha")->each([&](const std::string&) { alpha_set = true; });
  fit->add_option("--bootstrap", bootstrap_B, "bootstrap draws B")->each([&](const std::string&) { b_set = true; });
  fit->add_option("--variant", variant, "unprojected | projected | both");
  fit->add_option("--cluster", cluster_col, "cluster column name");
  fit->add_option("--weight", weight_col, "weight column name");
  fit->add_option("--seed", seed, "bootstrap master seed")->each([&](const std::string&) { seed_set = true; });
  fit->add_option("--out", out_dir, "output directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "run the Monte Carlo harness");
  std::string panel = "D";
  long long sim_n = 50, sim_N = 50, sim_p = 1, sim_B = 0;
  double delta = 0, beta_slope = 0, pi_z_val = 0, target_f_val = 0;
  bool pi_z_set = false, target_f_set = false;
  int R = 100, workers = 1;
  sim->add_option("--panel", panel, "A | B | C | D");
  sim->add_option("--n", sim_n, "groups");
  sim->add_option("--N", sim_N, "observations per group");
  sim->add_option("--p", sim_p, "covariate count");
  sim->add_option("--delta", delta, "first-stage heterogeneity");
  sim->add_option("--pi-z", pi_z_val, "first-stage strength")->each([&](const std::string&) { pi_z_set = true; });
  sim->add_option("--target-F", target_f_val, "calibrate pi_Z to this median first-stage F")
      ->each([&](const std::string&) { target_f_set = true; });
  sim->add_option("--beta-slope", beta_slope, "treatment curvature");
  sim->add_option("--R", R, "replications");
  sim->add_option("--bootstrap", sim_B, "bootstrap draws B (0 = no inference)");
  sim->add_option("--alpha", alpha, "band level alpha");
  sim->add_option("--seed", seed, "master seed");
  sim->add_option("--grid", grid_flag, "a,b,Q");
  sim->add_option("--out", out_dir, "output directory");
  sim->add_option("--workers", workers, "worker threads");

  // bench
  auto* bench = app.add_subcommand("bench", "relative-speed benchmark of the second stage");
  long long bench_n = 500, bench_N = 1000;
  int bench_runs = 10;
  bench->add_option("--n", bench_n, "groups");
  bench->add_option("--N", bench_N, "observations per group");
  bench->add_option("--runs", bench_runs, "timing repetitions (median reported)");
  bench->add_option("--grid", grid_flag, "a,b,Q");
  bench->add_option("--seed", seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    const GridSpec grid = parse_grid_flag(grid_flag);
    if (*fit)
      return run_fit(group_file, micro_file, config_file, grid,
                     alpha_set ? std::optional<double>(alpha) : std::nullopt,
                     b_set ? std::optional<long long>(bootstrap_B) : std::nullopt, variant,
                     cluster_col, weight_col,
                     seed_set ? std::optional<unsigned long long>(seed) : std::nullopt, out_dir);
    if (*sim)
      return run_simulate(panel, sim_n, sim_N, sim_p, delta,
                          pi_z_set ? std::optional<double>(pi_z_val) : std::nullopt,
                          target_f_set ? std::optional<double>(target_f_val) : std::nullopt,
                          beta_slope, R, sim_B, alpha, seed, grid, out_dir, workers);
    return run_bench(bench_n, bench_N, grid, bench_runs, seed);
  } catch (const ivfr::validation_error& e) {
    std::cerr << error_object("validation", e.what()).dump() << "\n";
    return 2;
  } catch (const ivfr::numeric_error& e) {
    std::cerr << error_object("numeric", e.what()).dump() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << error_object("internal", e.what()).dump() << "\n";
    return 1;
  }
}
