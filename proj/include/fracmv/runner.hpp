#pragma once

#include "fracmv/asymptotics.hpp"
#include "fracmv/config.hpp"
#include "fracmv/fbm_kernel.hpp"
#include "fracmv/io.hpp"
#include "fracmv/mc_lab.hpp"
#include "fracmv/mckean.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

namespace fracmv {

struct RunOutcome {
  std::vector<std::filesystem::path> artifacts;
  Json summary;
};

namespace detail {

class ArtifactSink {
 public:
  ArtifactSink(const std::string& command, const RunConfig& cfg) : command_(command), dir_(cfg.output_dir) {
    config_line_ = to_json(cfg).dump();
    hash_ = io::git_blob_sha1(config_line_);
    std::filesystem::create_directories(dir_);
  }

  io::CsvTable table(std::vector<std::string> columns) const {
    io::CsvTable t(std::move(columns));
    t.comment("command: " + command_);
    t.comment("config: " + config_line_);
    t.comment("input_hash: " + hash_);
    return t;
  }

  Json report() const {
    return Json{{"command", command_}, {"config", Json::parse(config_line_)}, {"input_hash", hash_}};
  }

  void write(const std::string& name, const std::string& content, RunOutcome& out) const {
    const auto path = dir_ / name;
    io::write_file(path, content);
    out.artifacts.push_back(path);
  }
  void write(const std::string& name, const io::CsvTable& t, RunOutcome& out) const { write(name, t.str(), out); }
  void write(const std::string& name, const Json& j, RunOutcome& out) const { write(name, j.dump(2) + "\n", out); }

 private:
  std::string command_;
  std::filesystem::path dir_;
  std::string config_line_;
  std::string hash_;
};

inline void check_options(const RunConfig& cfg, const std::string& command, std::set<std::string> allowed) {
  for (const auto& [key, _] : cfg.options.items()) {
    if (!allowed.count(key)) field_error("options." + key, "not an option of command '" + command + "'");
  }
}

inline std::vector<std::string> coord_columns(const std::string& prefix, std::size_t d) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < d; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline Json grid_json(TimeGrid g) { return Json{{"T", g.horizon()}, {"n_steps", g.steps()}}; }

inline Json scaling_json(const ScalingReport& r) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < r.eps_list.size(); ++i) {
    rows.push_back({{"eps", r.eps_list[i]},
                    {"estimate", r.estimates[i].mean},
                    {"se", r.estimates[i].se},
                    {"n", r.estimates[i].n}});
  }
  return Json{{"rows", rows},       {"slope", r.slope}, {"ci_lo", r.ci_lo},
              {"ci_hi", r.ci_hi},   {"expected", r.expected_slope},
              {"ci_covers_expected", r.ci_covers_expected()}};
}

inline io::CsvTable scaling_table(const ArtifactSink& sink, const ScalingReport& r) {
  auto t = sink.table({"eps", "estimate", "se", "n", "slope", "ci_lo", "ci_hi", "expected"});
  for (std::size_t i = 0; i < r.eps_list.size(); ++i) {
    t.row()
        .add(r.eps_list[i])
        .add(r.estimates[i].mean)
        .add(r.estimates[i].se)
        .add(r.estimates[i].n)
        .add(r.slope)
        .add(r.ci_lo)
        .add(r.ci_hi)
        .add(r.expected_slope);
  }
  return t;
}

inline Json tail_json(const std::vector<TailReport>& reports) {
  Json rows = Json::array();
  for (const auto& t : reports) {
    rows.push_back({{"eps", t.eps},
                    {"threshold", t.threshold},
                    {"hit_count", t.hit_count},
                    {"n_paths", t.n_paths},
                    {"p_hat", t.p_hat},
                    {"p_se", t.p_se},
                    {"speed", t.speed},
                    {"log_p_scaled", std::isfinite(t.log_p_scaled) ? Json(t.log_p_scaled) : Json(nullptr)},
                    {"rate_prediction", t.rate_prediction},
                    {"reliable", t.reliable}});
  }
  return rows;
}

inline io::CsvTable tail_table(const ArtifactSink& sink, const std::vector<TailReport>& reports) {
  auto t = sink.table({"eps", "threshold", "hits", "n", "p_hat", "p_se", "speed", "log_p_scaled", "rate_prediction",
                       "reliable"});
  for (const auto& r : reports) {
    t.row()
        .add(r.eps)
        .add(r.threshold)
        .add(r.hit_count)
        .add(r.n_paths)
        .add(r.p_hat)
        .add(r.p_se)
        .add(r.speed)
        .add(r.log_p_scaled)
        .add(r.rate_prediction)
        .add(r.reliable);
  }
  return t;
}

inline std::vector<double> positive_eps(const RunConfig& cfg, std::size_t at_least) {
  std::vector<double> out;
  for (double e : cfg.eps_list) {
    if (e > 0.0) out.push_back(e);
  }
  if (out.size() < at_least) {
    field_error("eps_list", "needs at least " + std::to_string(at_least) + " positive values for this command");
  }
  return out;
}

// options.control: {"type": "constant", "value": [..]} | {"type": "sine", "amplitude": a, "frequency": f}
//                | {"type": "values", "values": [[..], ..]} (one row per cell).
inline ControlL2 parse_control(const RunConfig& cfg) {
  const TimeGrid grid = cfg.grid();
  const auto d = static_cast<Eigen::Index>(cfg.model.dim);
  const auto n = static_cast<Eigen::Index>(grid.steps());
  ControlL2 ctrl(grid, cfg.model.dim);
  if (!cfg.options.contains("control")) {
    ctrl.g.setOnes();
    return ctrl;
  }
  const Json& c = cfg.options["control"];
  if (!c.is_object() || !c.contains("type") || !c["type"].is_string()) {
    field_error("options.control.type", "expected one of constant, sine, values");
  }
  const std::string type = c["type"].get<std::string>();
  if (type == "constant") {
    const auto v = c.contains("value") ? get_number_list(c["value"], "options.control.value") : std::vector<double>(d, 1.0);
    if (static_cast<Eigen::Index>(v.size()) != d) field_error("options.control.value", "length must equal model.dim");
    for (Eigen::Index j = 0; j < d; ++j) ctrl.g.col(j).setConstant(v[static_cast<std::size_t>(j)]);
  } else if (type == "sine") {
    const double amp = c.contains("amplitude") ? get_number(c["amplitude"], "options.control.amplitude") : 1.0;
    const double freq = c.contains("frequency") ? get_number(c["frequency"], "options.control.frequency") : 1.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double t = grid.midpoint(static_cast<std::size_t>(k));
      ctrl.g.row(k).setConstant(amp * std::sin(2.0 * std::numbers::pi * freq * t / grid.horizon()));
    }
  } else if (type == "values") {
    if (!c.contains("values") || !c["values"].is_array() || static_cast<Eigen::Index>(c["values"].size()) != n) {
      field_error("options.control.values", "expected one row per grid cell");
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      const std::string path = "options.control.values[" + std::to_string(k) + "]";
      const auto row = get_number_list(c["values"][static_cast<std::size_t>(k)], path);
      if (static_cast<Eigen::Index>(row.size()) != d) field_error(path, "length must equal model.dim");
      for (Eigen::Index j = 0; j < d; ++j) ctrl.g(k, j) = row[static_cast<std::size_t>(j)];
    }
  } else {
    field_error("options.control.type", "expected one of constant, sine, values");
  }
  return ctrl;
}

inline Regime parse_regime(const RunConfig& cfg) {
  const std::string r = option<std::string>(cfg, "regime", "ldp");
  if (r == "ldp") return Regime::ldp;
  if (r == "mdp") return Regime::mdp;
  field_error("options.regime", "expected ldp or mdp");
}

inline RunOutcome run_sample_fbm(const RunConfig& cfg) {
  check_options(cfg, "sample-fbm", {"n_paths", "sampler", "write_paths"});
  const ArtifactSink sink("sample-fbm", cfg);
  const HurstParam H(cfg.H);
  const TimeGrid grid = cfg.grid();
  const std::size_t n_paths = option<std::size_t>(cfg, "n_paths", cfg.N_particles);
  if (n_paths < 2) field_error("options.n_paths", "must be at least 2");
  const std::string which = option<std::string>(cfg, "sampler", "both");
  if (which != "both" && which != "volterra" && which != "cholesky") {
    field_error("options.sampler", "expected volterra, cholesky or both");
  }
  const bool write_paths = option<bool>(cfg, "write_paths", true);
  const std::size_t d = cfg.model.dim;
  const Exec exec{cfg.workers};

  std::map<std::string, std::vector<SamplePath>> draws;
  if (which != "cholesky") {
    auto bundles = sample_volterra(H, grid, d, n_paths, cfg.seed, exec);
    auto& v = draws["volterra"];
    for (auto& b : bundles) v.push_back(std::move(b.fbm));
  }
  if (which != "volterra") draws["cholesky"] = sample_cholesky(H, grid, d, n_paths, cfg.seed, exec);

  RunOutcome out;
  Json rep = sink.report();
  rep["grid"] = grid_json(grid);
  auto table = sink.table(concat({"sampler", "path", "node", "t"}, coord_columns("b", d)));
  for (const auto& [name, paths] : draws) {
    Json s;
    double worst = 0.0;
    for (std::size_t c = 0; c < d; ++c) worst = std::max(worst, covariance_max_zscore(H, paths, c));
    std::vector<double> end_sq;
    for (const auto& p : paths) end_sq.push_back(p.values(static_cast<Eigen::Index>(grid.steps()), 0) *
                                                 p.values(static_cast<Eigen::Index>(grid.steps()), 0));
    const MomentEstimate var_T = mean_and_se(end_sq);
    s["max_covariance_zscore"] = worst;
    s["var_T"] = {{"estimate", var_T.mean}, {"se", var_T.se}, {"expected", cov(H, cfg.T, cfg.T)}};
    rep["samplers"][name] = s;
    if (write_paths) {
      for (std::size_t i = 0; i < paths.size(); ++i) {
        for (std::size_t k = 0; k < grid.nodes(); ++k) {
          auto& row = table.row().add(name).add(i).add(k).add(grid.node(k));
          for (std::size_t c = 0; c < d; ++c) {
            row.add(paths[i].values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)));
          }
        }
      }
    }
  }
  if (write_paths) sink.write("fbm_paths.csv", table, out);
  sink.write("covariance_report.json", rep, out);
  out.summary = rep["samplers"];
  return out;
}

inline RunOutcome run_solve(const RunConfig& cfg) {
  check_options(cfg, "solve", {"eps", "write_paths", "common_random_numbers"});
  const ArtifactSink sink("solve", cfg);
  const HurstParam H(cfg.H);
  const TimeGrid grid = cfg.grid();
  const ModelPtr model = make_model(cfg.model);
  const Vector x0 = cfg.x0_vector();
  const Exec exec{cfg.workers};
  const double eps = option<double>(cfg, "eps", cfg.eps_list.front());
  if (!(eps >= 0.0)) field_error("options.eps", "must be nonnegative");
  const std::vector<double> ladder = positive_eps(cfg, 3);

  RunOutcome out;
  const EnsembleResult ens = solve_mckean(model, H, x0, eps, grid, cfg.N_particles, cfg.seed, exec);
  if (option<bool>(cfg, "write_paths", true)) {
    auto table = sink.table(concat({"path", "node", "t"}, coord_columns("x", model->dim())));
    for (std::size_t i = 0; i < ens.n_paths(); ++i) {
      for (std::size_t k = 0; k < grid.nodes(); ++k) {
        auto& row = table.row().add(i).add(k).add(grid.node(k));
        for (std::size_t c = 0; c < model->dim(); ++c) {
          row.add(ens.clouds[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
        }
      }
    }
    sink.write("ensemble.csv", table, out);
  }
  const ScalingReport r = difte_curve(model, H, x0, ladder, cfg.p, grid, cfg.N_particles, cfg.seed, exec,
                                      option<bool>(cfg, "common_random_numbers", true));
  sink.write("difte.csv", scaling_table(sink, r), out);
  Json rep = sink.report();
  rep["grid"] = grid_json(grid);
  rep["model"] = model->name();
  rep["difte"] = scaling_json(r);
  sink.write("difte.json", rep, out);
  out.summary = rep["difte"];
  return out;
}

inline RunOutcome run_skeleton(const RunConfig& cfg) {
  check_options(cfg, "skeleton", {"regime", "control"});
  const ArtifactSink sink("skeleton", cfg);
  const HurstParam H(cfg.H);
  const ModelPtr model = make_model(cfg.model);
  const Vector x0 = cfg.x0_vector();
  const Regime regime = parse_regime(cfg);
  const ControlL2 ctrl = parse_control(cfg);
  const SkeletonSolution sol =
      regime == Regime::ldp ? skeleton_ldp(*model, H, x0, ctrl) : skeleton_mdp(*model, H, x0, ctrl);
  const CameronMartinPath rh = rh_density(H, ctrl);
  const TimeGrid grid = ctrl.grid;
  const std::size_t d = model->dim();

  RunOutcome out;
  auto path_table = sink.table(concat({"node", "t"}, coord_columns("x", d)));
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    auto& row = path_table.row().add(k).add(grid.node(k));
    for (std::size_t c = 0; c < d; ++c) row.add(sol.path.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)));
  }
  sink.write("skeleton.csv", path_table, out);
  auto ctrl_table = sink.table(concat(concat({"cell", "t_left"}, coord_columns("g", d)), coord_columns("u", d)));
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    auto& row = ctrl_table.row().add(k).add(grid.node(k));
    for (std::size_t c = 0; c < d; ++c) row.add(ctrl.g(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)));
    for (std::size_t c = 0; c < d; ++c) {
      row.add(rh.density(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)));
    }
  }
  sink.write("control.csv", ctrl_table, out);
  Json rep = sink.report();
  rep["regime"] = regime == Regime::ldp ? "ldp" : "mdp";
  rep["cost"] = sol.cost;
  rep["h_norm_sq"] = h_norm_sq(ctrl);
  rep["sup_norm"] = sol.path.sup_norm();
  if (regime == Regime::ldp) {
    rep["gronwall_bound_sup_sq"] = skeleton_gronwall_bound(*model, H, x0, grid, h_norm_sq(ctrl));
  }
  sink.write("skeleton.json", rep, out);
  out.summary = {{"cost", sol.cost}};
  return out;
}

inline RunOutcome run_rate(const RunConfig& cfg) {
  check_options(cfg, "rate", {"regime", "a", "coord", "query", "control"});
  const ArtifactSink sink("rate", cfg);
  const HurstParam H(cfg.H);
  const TimeGrid grid = cfg.grid();
  const ModelPtr model = make_model(cfg.model);
  const Vector x0 = cfg.x0_vector();
  const std::string query = option<std::string>(cfg, "query", "endpoint");
  const Regime regime = parse_regime(cfg);

  Json rep = sink.report();
  rep["grid"] = grid_json(grid);
  rep["model"] = model->name();
  if (query == "endpoint") {
    const double a = option<double>(cfg, "a", 1.0);
    const std::size_t coord = option<std::size_t>(cfg, "coord", 0);
    if (coord >= model->dim()) field_error("options.coord", "must be below model.dim");
    const double value = rate_endpoint(*model, H, x0, grid, a, regime, coord);
    const double coarse = rate_endpoint(*model, H, x0, TimeGrid(cfg.T, grid.steps() / 2), a, regime, coord);
    rep["query"] = {{"type", "endpoint"}, {"regime", regime == Regime::ldp ? "ldp" : "mdp"}, {"T", cfg.T},
                    {"a", a},             {"coord", coord}};
    rep["value"] = value;
    Json tol = {{"half_grid_value", coarse}, {"half_grid_relative_change", std::abs(value - coarse) / std::max(value, 1e-300)}};
    if (model->name() == "pure_noise" && cfg.model.sigma != 0.0) {
      const double exact = a * a / (2.0 * cfg.model.sigma * cfg.model.sigma * std::pow(cfg.T, 2.0 * cfg.H));
      tol["closed_form"] = exact;
      tol["relative_error"] = exact == 0.0 ? 0.0 : std::abs(value - exact) / exact;
    }
    rep["tolerance"] = tol;
  } else if (query == "path") {
    const ControlL2 ctrl = parse_control(cfg);
    const SkeletonSolution sol = skeleton_ldp(*model, H, x0, ctrl);
    const double value = rate_ldp_path(*model, H, x0, sol.path);
    rep["query"] = {{"type", "path"}, {"source", "skeleton of options.control"}};
    rep["value"] = value;
    rep["tolerance"] = {{"control_cost", sol.cost},
                        {"relative_error", sol.cost == 0.0 ? std::abs(value) : std::abs(value - sol.cost) / sol.cost}};
  } else {
    field_error("options.query", "expected endpoint or path");
  }
  RunOutcome out;
  sink.write("rate.json", rep, out);
  out.summary = {{"value", rep["value"]}};
  return out;
}

inline RunOutcome run_clt(const RunConfig& cfg) {
  check_options(cfg, "clt", {"coupled"});
  const ArtifactSink sink("clt", cfg);
  const HurstParam H(cfg.H);
  const TimeGrid grid = cfg.grid();
  const ModelPtr model = make_model(cfg.model);
  const std::vector<double> ladder = positive_eps(cfg, 3);
  const bool coupled = option<bool>(cfg, "coupled", true);
  const CltReport r = clt_error_curve(model, H, cfg.x0_vector(), ladder, cfg.p, grid, cfg.N_particles, cfg.seed,
                                      Exec{cfg.workers}, coupled);
  RunOutcome out;
  sink.write("clt.csv", scaling_table(sink, r.scaling), out);
  Json rep = sink.report();
  rep["grid"] = grid_json(grid);
  rep["model"] = model->name();
  rep["coupled"] = coupled;
  rep["clt"] = scaling_json(r.scaling);
  rep["max_mean_z_score"] = r.max_mean_z_score;
  sink.write("clt.json", rep, out);
  out.summary = rep["clt"];
  return out;
}

inline RunOutcome run_tail(const RunConfig& cfg, Regime regime) {
  const std::string command = regime == Regime::ldp ? "ldp" : "mdp";
  check_options(cfg, command, {"a", "n_paths", "batch", "coord", "rate_steps"});
  const ArtifactSink sink(command, cfg);
  const HurstParam H(cfg.H);
  const TimeGrid grid = cfg.grid();
  const ModelPtr model = make_model(cfg.model);
  TailOptions opt;
  opt.batch = option<std::size_t>(cfg, "batch", opt.batch);
  opt.coord = option<std::size_t>(cfg, "coord", opt.coord);
  opt.rate_steps = option<std::size_t>(cfg, "rate_steps", opt.rate_steps);
  if (opt.batch == 0) field_error("options.batch", "must be positive");
  if (opt.coord >= model->dim()) field_error("options.coord", "must be below model.dim");
  const double a = option<double>(cfg, "a", 1.0);
  const std::size_t n_paths = option<std::size_t>(cfg, "n_paths", cfg.N_particles);
  if (n_paths == 0) field_error("options.n_paths", "must be positive");
  const std::vector<double> ladder = positive_eps(cfg, 1);

  std::vector<TailReport> reports;
  if (regime == Regime::ldp) {
    reports = ldp_consistency(model, H, cfg.x0_vector(), a, ladder, grid, n_paths, cfg.seed, Exec{cfg.workers}, opt);
  } else {
    MdpConfig mdp{parse_kappa(cfg.kappa), ladder};
    if (!mdp.admissible(H)) field_error("kappa", "'" + cfg.kappa + "' is not admissible on eps_list");
    reports = mdp_consistency(model, H, cfg.x0_vector(), a, mdp, grid, n_paths, cfg.seed, Exec{cfg.workers}, opt);
  }
  RunOutcome out;
  sink.write(command + ".csv", tail_table(sink, reports), out);
  Json rep = sink.report();
  rep["grid"] = grid_json(grid);
  rep["model"] = model->name();
  rep["reports"] = tail_json(reports);
  if (const auto i = smallest_reliable(reports)) {
    const auto& t = reports[*i];
    rep["smallest_reliable"] = {{"eps", t.eps},
                                {"statistic", -t.log_p_scaled},
                                {"rate_prediction", t.rate_prediction},
                                {"relative_error", std::abs(-t.log_p_scaled - t.rate_prediction) / t.rate_prediction}};
  } else {
    rep["smallest_reliable"] = nullptr;
  }
  sink.write(command + ".json", rep, out);
  out.summary = rep["smallest_reliable"];
  return out;
}

}  // namespace detail

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"sample-fbm", "solve", "skeleton", "rate", "clt", "ldp", "mdp"};
  return names;
}

// Executes one command; every artifact lands in cfg.output_dir.
inline RunOutcome run(const std::string& command, const RunConfig& cfg) {
  validate(cfg);
  if (command == "sample-fbm") return detail::run_sample_fbm(cfg);
  if (command == "solve") return detail::run_solve(cfg);
  if (command == "skeleton") return detail::run_skeleton(cfg);
  if (command == "rate") return detail::run_rate(cfg);
  if (command == "clt") return detail::run_clt(cfg);
  if (command == "ldp") return detail::run_tail(cfg, Regime::ldp);
  if (command == "mdp") return detail::run_tail(cfg, Regime::mdp);
  throw usage_error("unknown command '" + command + "'");
}

}  // namespace fracmv
