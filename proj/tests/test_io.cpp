#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "ivfr/io.hpp"

using namespace ivfr;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ivfr_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    const fs::path p = path / name;
    std::ofstream out(p);
    out << content;
    return p.string();
  }
};

RunConfig small_grid_config() {
  RunConfig c;
  c.grid_a = 0.25;
  c.grid_b = 0.75;
  c.grid_q = 3;
  return c;
}

}  // namespace

TEST_CASE("config file parsing") {
  TempDir t;
  const std::string path = t.file("run.cfg",
                                  "# comment\n"
                                  "alpha = 0.1\n"
                                  "bootstrap_B = 250\n"
                                  "bootstrap_variant = projected\n"
                                  "grid_a = 0.1\n"
                                  "grid_b = 0.9\n"
                                  "grid_q = 9\n"
                                  "seed = 77\n");
  const RunConfig c = parse_config_file(path);
  CHECK(c.alpha == 0.1);
  CHECK(c.bootstrap_B == 250);
  CHECK(c.bootstrap_variant == "projected");
  CHECK(c.grid_q == 9);
  CHECK(c.seed == 77);

  CHECK_THROWS_AS(parse_config_file(t.file("bad.cfg", "no_such_key = 3\n")), validation_error);
  CHECK_THROWS_AS(parse_config_file(t.file("bad2.cfg", "alpha 0.1\n")), validation_error);
  CHECK_THROWS_AS(parse_config_file(t.file("bad3.cfg", "alpha = 2\n")), validation_error);
  CHECK_THROWS_AS(parse_config_file((t.path / "missing.cfg").string()), validation_error);
}

TEST_CASE("prequantiled ingestion") {
  TempDir t;
  const std::string groups = t.file("g.csv",
                                    "group_id,x1,z1,q_0.25,q_0.5,q_0.75\n"
                                    "a,1,0.5,1,2,3\n"
                                    "b,2,1.5,2,3,4\n"
                                    "c,3,2.5,3,4,5\n"
                                    "d,4,3.5,4,5,6\n");
  const RunConfig cfg = small_grid_config();
  const GroupedDesign d = parse_dataset({groups, std::nullopt}, cfg);
  CHECK(d.n() == 4);
  CHECK(d.p() == 1);
  CHECK(d.l() == 1);
  CHECK(d.q() == 3);
  CHECK(d.outcomes(1, 2) == 4);
  CHECK(d.X(3, 0) == 4);

  // non-monotone prequantiled row is a hard error naming the group
  const std::string bad = t.file("bad.csv",
                                 "group_id,x1,z1,q_0.25,q_0.5,q_0.75\n"
                                 "a,1,0.5,1,2,3\n"
                                 "b,2,1.5,2,3,4\n"
                                 "c,3,2.5,3,4,5\n"
                                 "e,4,3.5,5,4,6\n");
  try {
    parse_dataset({bad, std::nullopt}, cfg);
    FAIL("expected monotonicity error");
  } catch (const validation_error& e) {
    CHECK(std::string(e.what()).find("'e'") != std::string::npos);
  }

  // duplicate group rows rejected
  const std::string dup = t.file("dup.csv",
                                 "group_id,x1,z1,q_0.25,q_0.5,q_0.75\n"
                                 "a,1,0.5,1,2,3\n"
                                 "a,2,1.5,2,3,4\n");
  CHECK_THROWS_AS(parse_dataset({dup, std::nullopt}, cfg), validation_error);

  // q_* columns must match the configured grid
  RunConfig other = cfg;
  other.grid_b = 0.8;
  CHECK_THROWS_AS(parse_dataset({groups, std::nullopt}, other), validation_error);

  // non-numeric cell
  const std::string nonnum = t.file("nn.csv",
                                    "group_id,x1,z1,q_0.25,q_0.5,q_0.75\n"
                                    "a,one,0.5,1,2,3\n");
  CHECK_THROWS_AS(parse_dataset({nonnum, std::nullopt}, cfg), validation_error);
}

TEST_CASE("micro-mode ingestion, drops and growth warning") {
  TempDir t;
  std::ostringstream micro;
  micro << "group_id,y\n";
  auto add_obs = [&](const std::string& id, int count, double base) {
    for (int i = 0; i < count; ++i) micro << id << "," << base + i << "\n";
  };
  add_obs("a", 25, 0);
  add_obs("b", 50, 10);
  add_obs("c", 100, 20);
  add_obs("d", 30, 30);
  add_obs("e", 2, 40);  // below the minimum group size
  const std::string groups = t.file("g.csv",
                                    "group_id,x1,z1,w,cl\n"
                                    "a,1,0.5,1,u\n"
                                    "b,2,1.5,2,u\n"
                                    "c,3,2.5,1,v\n"
                                    "d,4,3.5,1,v\n"
                                    "e,5,4.5,1,w\n");
  const std::string micro_path = t.file("m.csv", micro.str());

  RunConfig cfg = small_grid_config();
  cfg.min_group_size = 5;
  cfg.weight_column = "w";
  cfg.cluster_column = "cl";
  ParseReport report;
  const GroupedDesign d = parse_dataset({groups, micro_path}, cfg, &report);
  CHECK(d.n() == 4);  // group e dropped
  CHECK(report.dropped_groups == 1);
  CHECK(report.min_group_obs == 25);
  CHECK(d.obs_weight[1] == 2);
  CHECK(d.cluster == std::vector<std::string>{"u", "u", "v", "v"});
  // empirical quantile of group a = {0..24} at u = 0.25: k = ceil(6.25) = 7 -> 6
  CHECK(d.outcomes(0, 0) == 6);
  // n / min m = 4 / 25 = 0.16: no warning at ratio 1.0
  CHECK(!report.growth_warning);

  cfg.growth_warning_ratio = 0.1;
  ParseReport report2;
  parse_dataset({groups, micro_path}, cfg, &report2);
  CHECK(report2.growth_warning);

  // unknown group id in the micro file
  const std::string stray = t.file("stray.csv", "group_id,y\nzz,1\n");
  CHECK_THROWS_AS(parse_dataset({groups, stray}, cfg), validation_error);

  // missing weight column
  RunConfig nf = small_grid_config();
  nf.weight_column = "nope";
  CHECK_THROWS_AS(parse_dataset({groups, micro_path}, nf), validation_error);

  // both micro file and q_* columns (or neither) rejected
  const std::string both = t.file("both.csv",
                                  "group_id,x1,z1,q_0.25,q_0.5,q_0.75\n"
                                  "a,1,0.5,1,2,3\n");
  CHECK_THROWS_AS(parse_dataset({both, micro_path}, small_grid_config()), validation_error);
  const std::string neither = t.file("neither.csv", "group_id,x1,z1\na,1,0.5\n");
  CHECK_THROWS_AS(parse_dataset({neither, std::nullopt}, small_grid_config()), validation_error);
}

TEST_CASE("result bundle round-trips byte-identically") {
  std::mt19937_64 rng(9);
  const GridPtr g = build_grid(0.05, 0.95, 9);
  const GroupedDesign d = test_helpers::random_design(rng, 20, 1, 1, g, false, 1.0);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  const IvfrFit proj = ivfr_fit(d, m, unproj);

  ResultBundle r;
  r.grid = g;
  r.unprojected = unproj;
  r.projected = proj.coeffs;
  r.invalid_rate = proj.invalid_rate;
  r.cond_Sigma_ZZ = m.cond_Sigma_ZZ;
  r.min_rel_singular_ZX = m.min_rel_singular_ZX;
  r.first_stage_F = 12.5;
  r.warnings = {"example warning"};
  r.config_echo = json{{"alpha", 0.05}};
  const VarianceKernel k = sandwich_variance(score_matrix(d, m, unproj), m);
  r.bands.push_back(pointwise_band(unproj, k, 0.05, d.n()));
  r.bands.push_back(multiplier_bootstrap(d, m, unproj, &proj.coeffs, 25, 0.05,
                                         BootstrapVariant::projected, 3)
                        .uniform);

  const std::string once = to_json(r).dump(2);
  const ResultBundle back = result_bundle_from_json(json::parse(once));
  const std::string twice = to_json(back).dump(2);
  CHECK(once == twice);
  CHECK(back.bands.size() == 2);
  CHECK(back.bands[1].method == BandMethod::boot_projected);
  CHECK(back.bands[1].estimator == CoefficientVariant::projected);
  CHECK(back.unprojected.beta1 == unproj.beta1);
  CHECK(*back.first_stage_F == 12.5);
}

TEST_CASE("plot CSV covers every coefficient and grid point") {
  std::mt19937_64 rng(10);
  const GridPtr g = build_grid(0.05, 0.95, 9);
  const GroupedDesign d = test_helpers::random_design(rng, 20, 2, 2, g, false, 1.0);
  const MomentSet m = compute_moments(d);
  const CoefficientCurves unproj = unconstrained_fit(d, m);
  const IvfrFit proj = ivfr_fit(d, m, unproj);
  ResultBundle r;
  r.grid = g;
  r.unprojected = unproj;
  r.projected = proj.coeffs;
  const std::string csv = plot_csv(r);
  std::istringstream in(csv);
  std::string line;
  int rows = -1;  // skip header
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2 * 3 * 9);  // variants x (p + 1) x Q
  CHECK(csv.rfind("coefficient,variant,u,estimate,pw_lo,pw_hi,unif_lo,unif_hi\n", 0) == 0);
}

TEST_CASE("atomic writes land complete files") {
  TempDir t;
  const std::string target = (t.path / "nested" / "out.json").string();
  write_file_atomic(target, "{\"ok\":true}\n");
  std::ifstream in(target);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "{\"ok\":true}\n");
  CHECK(!fs::exists(target + ".tmp"));
}

TEST_CASE("monte carlo summary serialization carries the table columns") {
  DgpConfig c;
  c.panel = Panel::D;
  c.n = 25;
  c.N = 25;
  c.grid = build_grid(0.05, 0.95, 19);
  const MonteCarloSummary s = run_replications(c, 3, 5, true);
  const json j = to_json(s);
  CHECK(j.at("imse").contains("gain_pct"));
  CHECK(j.at("w2_sq").contains("gain_pct"));
  CHECK(j.contains("invalid_pct"));
  CHECK(j.at("coverage").at("uniform").contains("projected"));
  CHECK(j.at("uniform_band_width").contains("delta_pct"));
  CHECK(j.at("config").at("panel") == "D");
  const std::string csv = summary_csv(s);
  CHECK(csv.find("imse_gain_pct") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one row
}
