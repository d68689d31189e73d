#pragma once

#include <json.hpp>

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ivfr/errors.hpp"
#include "ivfr/estimator.hpp"
#include "ivfr/inference.hpp"
#include "ivfr/quantile.hpp"
#include "ivfr/simulation.hpp"

namespace ivfr {

using json = nlohmann::ordered_json;

inline constexpr const char* kLibraryVersion = "0.1.0";

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open CSV file: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw validation_error("CSV file has no header row: " + path);
  return t;
}

inline double parse_number(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw validation_error("non-numeric cell '" + s + "' in " + context);
  }
}

//! atomic file write: temp-then-rename
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw validation_error("cannot write file: " + tmp.string());
    out << content;
  }
  fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  double grid_a = 0.05, grid_b = 0.95;
  std::size_t grid_q = 19;
  double alpha = 0.05;
  Eigen::Index bootstrap_B = 500;
  std::string bootstrap_variant = "both";  // unprojected | projected | both
  std::string cluster_column;
  std::string weight_column;
  std::uint64_t seed = 1;
  std::string output_path = ".";
  double growth_warning_ratio = 1.0;  // warn when n / min_j m_j exceeds this
  Eigen::Index min_group_size = 1;    // micro-mode groups below this are dropped

  void validate() const {
    if (!(alpha > 0 && alpha < 1)) throw validation_error("config: alpha must be in (0,1)");
    if (bootstrap_B < 1) throw validation_error("config: bootstrap_B must be >= 1");
    if (bootstrap_variant != "unprojected" && bootstrap_variant != "projected" &&
        bootstrap_variant != "both")
      throw validation_error("config: bootstrap_variant must be unprojected, projected or both");
  }

  GridPtr grid() const { return build_grid(grid_a, grid_b, grid_q); }
};

//! flat key=value config file; unknown keys are an error
inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open config file: " + path);
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw validation_error("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    const std::string ctx = "config key " + key;
    if (key == "grid_a") c.grid_a = parse_number(val, ctx);
    else if (key == "grid_b") c.grid_b = parse_number(val, ctx);
    else if (key == "grid_q") c.grid_q = static_cast<std::size_t>(parse_number(val, ctx));
    else if (key == "alpha") c.alpha = parse_number(val, ctx);
    else if (key == "bootstrap_B") c.bootstrap_B = static_cast<Eigen::Index>(parse_number(val, ctx));
    else if (key == "bootstrap_variant") c.bootstrap_variant = val;
    else if (key == "cluster_column") c.cluster_column = val;
    else if (key == "weight_column") c.weight_column = val;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_number(val, ctx));
    else if (key == "output_path") c.output_path = val;
    else if (key == "growth_warning_ratio") c.growth_warning_ratio = parse_number(val, ctx);
    else if (key == "min_group_size") c.min_group_size = static_cast<Eigen::Index>(parse_number(val, ctx));
    else throw validation_error("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

struct DatasetFiles {
  std::string group_file;
  std::optional<std::string> micro_file;
};

struct ParseReport {
  std::vector<std::string> warnings;
  Eigen::Index dropped_groups = 0;
  Eigen::Index min_group_obs = 0;  // smallest m_j in micro mode
  bool growth_warning = false;
};

//! Validated GroupedDesign from CSV files. Micro mode applies the empirical
//! quantile function per group; prequantiled rows must already be monotone.
inline GroupedDesign parse_dataset(const DatasetFiles& files, const RunConfig& config,
                                   ParseReport* report = nullptr) {
  const CsvTable groups = read_csv(files.group_file);
  const auto gid_col = groups.column("group_id");
  if (!gid_col) throw validation_error("group file: missing group_id column");

  // covariate / instrument columns x1..xp, z1..zl
  std::vector<std::size_t> x_cols, z_cols;
  for (Eigen::Index k = 1;; ++k) {
    const auto c = groups.column("x" + std::to_string(k));
    if (!c) break;
    x_cols.push_back(*c);
  }
  for (Eigen::Index k = 1;; ++k) {
    const auto c = groups.column("z" + std::to_string(k));
    if (!c) break;
    z_cols.push_back(*c);
  }
  if (x_cols.empty()) throw validation_error("group file: no covariate columns x1..xp found");
  if (z_cols.empty()) throw validation_error("group file: no instrument columns z1..zl found");

  std::optional<std::size_t> w_col, c_col;
  if (!config.weight_column.empty()) {
    w_col = groups.column(config.weight_column);
    if (!w_col) throw validation_error("group file: weight column '" + config.weight_column +
                                       "' not found");
  }
  if (!config.cluster_column.empty()) {
    c_col = groups.column(config.cluster_column);
    if (!c_col) throw validation_error("group file: cluster column '" + config.cluster_column +
                                       "' not found");
  }

  const GridPtr grid = config.grid();

  // prequantiled columns: q_<level> matched to grid points by value
  std::vector<std::size_t> q_cols;
  {
    std::vector<std::pair<double, std::size_t>> found;
    for (std::size_t i = 0; i < groups.header.size(); ++i) {
      const auto& h = groups.header[i];
      if (h.rfind("q_", 0) == 0)
        found.emplace_back(parse_number(h.substr(2), "quantile column name " + h), i);
    }
    if (!found.empty()) {
      if (found.size() != grid->size())
        throw validation_error("group file: found " + std::to_string(found.size()) +
                               " q_* columns but the grid has " + std::to_string(grid->size()) +
                               " points");
      std::sort(found.begin(), found.end());
      for (std::size_t q = 0; q < grid->size(); ++q) {
        if (std::abs(found[q].first - grid->points[q]) > 1e-9)
          throw validation_error("group file: q_* columns do not match the configured grid");
        q_cols.push_back(found[q].second);
      }
    }
  }

  const bool micro_mode = files.micro_file.has_value();
  if (micro_mode == !q_cols.empty())
    throw validation_error("dataset: exactly one of micro file / embedded q_* columns required");

  const Eigen::Index p = static_cast<Eigen::Index>(x_cols.size());
  const Eigen::Index l = static_cast<Eigen::Index>(z_cols.size());

  struct Row {
    std::string id;
    Eigen::VectorXd x, z;
    double weight = 1;
    std::string cluster;
    Eigen::VectorXd quantiles;
  };
  std::vector<Row> parsed;
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t r = 0; r < groups.rows.size(); ++r) {
    const auto& cells = groups.rows[r];
    if (cells.size() != groups.header.size())
      throw validation_error("group file row " + std::to_string(r + 2) + ": wrong cell count");
    Row row;
    row.id = cells[*gid_col];
    if (by_id.count(row.id))
      throw validation_error("group file: duplicate group row for group_id '" + row.id + "'");
    const std::string ctx = "group row " + std::to_string(r + 2);
    row.x.resize(p);
    for (Eigen::Index k = 0; k < p; ++k)
      row.x[k] = parse_number(cells[x_cols[static_cast<std::size_t>(k)]], ctx);
    row.z.resize(l);
    for (Eigen::Index k = 0; k < l; ++k)
      row.z[k] = parse_number(cells[z_cols[static_cast<std::size_t>(k)]], ctx);
    if (w_col) row.weight = parse_number(cells[*w_col], ctx);
    if (c_col) row.cluster = cells[*c_col];
    if (!q_cols.empty()) {
      row.quantiles.resize(static_cast<Eigen::Index>(grid->size()));
      for (std::size_t q = 0; q < q_cols.size(); ++q)
        row.quantiles[static_cast<Eigen::Index>(q)] = parse_number(cells[q_cols[q]], ctx);
      for (Eigen::Index q = 0; q + 1 < row.quantiles.size(); ++q)
        if (row.quantiles[q] > row.quantiles[q + 1])
          throw validation_error("group file: non-monotone quantiles in row for group_id '" +
                                 row.id + "'");
    }
    by_id.emplace(row.id, parsed.size());
    parsed.push_back(std::move(row));
  }

  std::vector<Eigen::VectorXd> curves(parsed.size());
  Eigen::Index min_m = 0;
  std::vector<bool> keep(parsed.size(), true);
  if (micro_mode) {
    const CsvTable micro = read_csv(*files.micro_file);
    const auto m_gid = micro.column("group_id");
    const auto m_y = micro.column("y");
    if (!m_gid || !m_y) throw validation_error("micro file: need columns group_id and y");
    std::vector<GroupSample> samples(parsed.size());
    for (std::size_t r = 0; r < micro.rows.size(); ++r) {
      const auto& cells = micro.rows[r];
      const auto it = by_id.find(cells[*m_gid]);
      if (it == by_id.end())
        throw validation_error("micro file: unknown group_id '" + cells[*m_gid] + "'");
      samples[it->second].observations.push_back(
          parse_number(cells[*m_y], "micro row " + std::to_string(r + 2)));
    }
    Eigen::Index dropped = 0;
    min_m = std::numeric_limits<Eigen::Index>::max();
    for (std::size_t j = 0; j < parsed.size(); ++j) {
      const auto m_j = static_cast<Eigen::Index>(samples[j].size());
      if (m_j < config.min_group_size || m_j == 0) {
        keep[j] = false;
        ++dropped;
        continue;
      }
      min_m = std::min(min_m, m_j);
      curves[j] = empirical_quantile(samples[j], grid).values;
    }
    if (report) {
      report->dropped_groups = dropped;
      report->min_group_obs = min_m;
      if (dropped > 0)
        report->warnings.push_back("dropped " + std::to_string(dropped) +
                                   " groups below the minimum group size");
    }
  } else {
    for (std::size_t j = 0; j < parsed.size(); ++j) curves[j] = parsed[j].quantiles;
  }

  Eigen::Index n = 0;
  for (bool k : keep)
    if (k) ++n;
  GroupedDesign d;
  d.grid = grid;
  d.X.resize(n, p);
  d.Z.resize(n, l);
  d.outcomes.resize(n, static_cast<Eigen::Index>(grid->size()));
  const bool any_weight = w_col.has_value();
  if (any_weight) d.obs_weight.resize(n);
  Eigen::Index out = 0;
  for (std::size_t j = 0; j < parsed.size(); ++j) {
    if (!keep[j]) continue;
    d.X.row(out) = parsed[j].x.transpose();
    d.Z.row(out) = parsed[j].z.transpose();
    d.outcomes.row(out) = curves[j].transpose();
    if (any_weight) d.obs_weight[out] = parsed[j].weight;
    if (c_col) d.cluster.push_back(parsed[j].cluster);
    ++out;
  }
  d.validate();

  if (micro_mode && report && min_m > 0) {
    const double ratio = static_cast<double>(n) / static_cast<double>(min_m);
    if (ratio > config.growth_warning_ratio) {
      report->growth_warning = true;
      report->warnings.push_back(
          "growth-condition warning: n / min_j m_j = " + std::to_string(ratio) +
          " exceeds " + std::to_string(config.growth_warning_ratio) +
          "; within-group quantile noise may not be negligible");
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const QuantileGrid& g) {
  return json{{"a", g.a}, {"b", g.b}, {"points", g.points}};
}

inline GridPtr grid_from_json(const json& j) {
  auto g = std::make_shared<QuantileGrid>();
  g->a = j.at("a").get<double>();
  g->b = j.at("b").get<double>();
  g->points = j.at("points").get<std::vector<double>>();
  return g;
}

inline json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.size();
  if (rows == 0) return {};
  const auto cols = j.at(0).size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j.at(r).at(c).get<double>();
  return m;
}

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

inline json to_json(const CoefficientCurves& c) {
  return json{{"variant", c.variant == CoefficientVariant::projected ? "projected" : "unprojected"},
              {"beta0", to_json(c.beta0)},
              {"beta1", to_json(c.beta1)},
              {"mu_x", to_json(c.mu_X_reference)}};
}

inline CoefficientCurves coefficients_from_json(const json& j, GridPtr grid) {
  CoefficientCurves c;
  c.variant = j.at("variant").get<std::string>() == "projected" ? CoefficientVariant::projected
                                                                : CoefficientVariant::unprojected;
  c.beta0 = vector_from_json(j.at("beta0"));
  c.beta1 = matrix_from_json(j.at("beta1"));
  c.mu_X_reference = vector_from_json(j.at("mu_x"));
  c.grid = std::move(grid);
  return c;
}

inline std::string band_method_name(BandMethod m) {
  switch (m) {
    case BandMethod::sandwich: return "sandwich";
    case BandMethod::boot_unprojected: return "boot_unprojected";
    default: return "boot_projected";
  }
}

inline json to_json(const ConfidenceBands& b) {
  return json{{"level", b.level},
              {"kind", b.kind == BandKind::uniform ? "uniform" : "pointwise"},
              {"method", band_method_name(b.method)},
              {"estimator",
               b.estimator == CoefficientVariant::projected ? "projected" : "unprojected"},
              {"lower", to_json(b.lower)},
              {"upper", to_json(b.upper)},
              {"critical_values", to_json(b.critical_values)}};
}

inline ConfidenceBands bands_from_json(const json& j) {
  ConfidenceBands b;
  b.level = j.at("level").get<double>();
  b.kind = j.at("kind").get<std::string>() == "uniform" ? BandKind::uniform : BandKind::pointwise;
  const std::string m = j.at("method").get<std::string>();
  b.method = m == "sandwich" ? BandMethod::sandwich
             : m == "boot_unprojected" ? BandMethod::boot_unprojected
                                       : BandMethod::boot_projected;
  b.estimator = j.at("estimator").get<std::string>() == "projected"
                    ? CoefficientVariant::projected
                    : CoefficientVariant::unprojected;
  b.lower = matrix_from_json(j.at("lower"));
  b.upper = matrix_from_json(j.at("upper"));
  b.critical_values = vector_from_json(j.at("critical_values"));
  return b;
}

//! Self-describing fit result: both coefficient variants, all requested
//! bands, and run diagnostics. Round-trips losslessly through JSON.
struct ResultBundle {
  GridPtr grid;
  CoefficientCurves unprojected;
  CoefficientCurves projected;
  std::vector<ConfidenceBands> bands;
  double invalid_rate = 0;
  double cond_Sigma_ZZ = 0;
  double min_rel_singular_ZX = 0;
  std::optional<double> first_stage_F;
  std::vector<std::string> warnings;
  json config_echo;
  std::string version = kLibraryVersion;
};

inline json to_json(const ResultBundle& r) {
  json bands = json::array();
  for (const auto& b : r.bands) bands.push_back(to_json(b));
  json j{{"version", r.version},
         {"grid", to_json(*r.grid)},
         {"unprojected", to_json(r.unprojected)},
         {"projected", to_json(r.projected)},
         {"bands", std::move(bands)},
         {"invalid_rate", r.invalid_rate},
         {"diagnostics",
          json{{"cond_sigma_zz", r.cond_Sigma_ZZ},
               {"min_rel_singular_zx", r.min_rel_singular_ZX}}},
         {"warnings", r.warnings},
         {"config", r.config_echo}};
  if (r.first_stage_F) j["diagnostics"]["first_stage_F"] = *r.first_stage_F;
  return j;
}

inline ResultBundle result_bundle_from_json(const json& j) {
  ResultBundle r;
  r.version = j.at("version").get<std::string>();
  r.grid = grid_from_json(j.at("grid"));
  r.unprojected = coefficients_from_json(j.at("unprojected"), r.grid);
  r.projected = coefficients_from_json(j.at("projected"), r.grid);
  for (const auto& b : j.at("bands")) r.bands.push_back(bands_from_json(b));
  r.invalid_rate = j.at("invalid_rate").get<double>();
  const auto& diag = j.at("diagnostics");
  r.cond_Sigma_ZZ = diag.at("cond_sigma_zz").get<double>();
  r.min_rel_singular_ZX = diag.at("min_rel_singular_zx").get<double>();
  if (diag.contains("first_stage_F")) r.first_stage_F = diag.at("first_stage_F").get<double>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.config_echo = j.at("config");
  return r;
}

//! flat CSV for plotting: one row per (coefficient, grid point)
inline std::string plot_csv(const ResultBundle& r) {
  const ConfidenceBands* pw_u = nullptr;
  const ConfidenceBands* pw_p = nullptr;
  const ConfidenceBands* un_u = nullptr;
  const ConfidenceBands* un_p = nullptr;
  for (const auto& b : r.bands) {
    const bool proj = b.estimator == CoefficientVariant::projected;
    if (b.kind == BandKind::pointwise)
      (proj ? pw_p : pw_u) = &b;
    else
      (proj ? un_p : un_u) = &b;
  }
  std::ostringstream out;
  out << "coefficient,variant,u,estimate,pw_lo,pw_hi,unif_lo,unif_hi\n";
  char buf[512];
  auto emit = [&](const std::string& variant, const CoefficientCurves& c,
                  const ConfidenceBands* pw, const ConfidenceBands* un) {
    const auto Q = static_cast<Eigen::Index>(r.grid->size());
    for (Eigen::Index k = 0; k <= c.p(); ++k) {
      const std::string name = k == 0 ? "beta0" : "beta1_" + std::to_string(k);
      for (Eigen::Index q = 0; q < Q; ++q) {
        const double est = k == 0 ? c.beta0[q] : c.beta1(k - 1, q);
        auto cell = [&](const ConfidenceBands* b, bool lo) {
          if (!b) return std::string("");
          std::snprintf(buf, sizeof buf, "%.17g", lo ? b->lower(k, q) : b->upper(k, q));
          return std::string(buf);
        };
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,", name.c_str(), variant.c_str(),
                      r.grid->points[static_cast<std::size_t>(q)], est);
        out << buf << cell(pw, true) << ',' << cell(pw, false) << ',' << cell(un, true) << ','
            << cell(un, false) << '\n';
      }
    }
  };
  emit("unprojected", r.unprojected, pw_u, un_u);
  emit("projected", r.projected, pw_p, un_p);
  return out.str();
}

inline json to_json(const DgpConfig& c) {
  json j{{"panel", panel_name(c.panel)},
         {"n", c.n},
         {"N", c.N},
         {"p", c.p},
         {"delta", c.delta},
         {"pi_Z", c.pi_Z},
         {"beta_slope", c.beta_slope},
         {"B_X", c.B_X},
         {"B_W", c.B_W},
         {"base", c.lognormal_base() ? "standard_lognormal" : "none"},
         {"sigma", c.sigma()},
         {"grid", to_json(*c.grid)},
         {"master_seed", c.master_seed}};
  return j;
}

inline json to_json(const MonteCarloSummary& s) {
  json j{{"config", to_json(s.config)},
         {"replications", s.R},
         {"bootstrap_B", s.bootstrap_B},
         {"alpha", s.alpha},
         {"failed_replications", s.failed_replications},
         {"imse", json{{"unprojected", s.imse_unproj},
                       {"projected", s.imse_proj},
                       {"gain_pct", s.imse_gain_pct}}},
         {"w2_sq", json{{"unprojected", s.w2_unproj},
                        {"projected", s.w2_proj},
                        {"gain_pct", s.w2_gain_pct}}},
         {"invalid_pct", s.invalid_pct},
         {"median_first_stage_F", s.median_F},
         {"truth_monotone_violations", s.truth_monotone_violations},
         {"proj_imse_not_better", s.proj_imse_not_better}};
  if (s.has_bands) {
    j["coverage"] = json{{"pointwise",
                          json{{"unprojected", s.pw_coverage_unproj},
                               {"projected", s.pw_coverage_proj}}},
                         {"uniform",
                          json{{"unprojected", s.ub_coverage_unproj},
                               {"projected", s.ub_coverage_proj}}}};
    j["uniform_band_width"] = json{{"unprojected", s.ub_width_unproj},
                                   {"projected", s.ub_width_proj},
                                   {"delta_pct", s.width_delta_pct},
                                   {"frac_projected_leq", s.frac_proj_width_leq}};
  }
  return j;
}

//! Table-1/Table-2 style single-row CSV of the summary
inline std::string summary_csv(const MonteCarloSummary& s) {
  std::ostringstream out;
  out << "panel,n,N,p,delta,pi_Z,R,B,imse_unproj,imse_proj,imse_gain_pct,"
         "w2_unproj,w2_proj,w2_gain_pct,invalid_pct,median_F,"
         "pw_cov_unproj,pw_cov_proj,ub_cov_unproj,ub_cov_proj,"
         "ub_width_unproj,ub_width_proj,width_delta_pct\n";
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "%s,%lld,%lld,%lld,%g,%.17g,%d,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                panel_name(s.config.panel).c_str(), static_cast<long long>(s.config.n),
                static_cast<long long>(s.config.N), static_cast<long long>(s.config.p),
                s.config.delta, s.config.pi_Z, s.R, static_cast<long long>(s.bootstrap_B),
                s.imse_unproj, s.imse_proj, s.imse_gain_pct, s.w2_unproj, s.w2_proj,
                s.w2_gain_pct, s.invalid_pct, s.median_F, s.pw_coverage_unproj,
                s.pw_coverage_proj, s.ub_coverage_unproj, s.ub_coverage_proj, s.ub_width_unproj,
                s.ub_width_proj, s.width_delta_pct);
  out << buf;
  return out.str();
}

}  // namespace ivfr
