#pragma once

#include "fracmv/asymptotics.hpp"
#include "fracmv/core.hpp"
#include "fracmv/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace fracmv {

using Json = nlohmann::json;

struct ModelConfig {
  std::string name = "ex_clt";
  std::size_t dim = 1;
  double beta = -1.0;
  double gamma = 0.0;
  double alpha = 0.1;
  double sigma = 1.0;
};

struct RunConfig {
  ModelConfig model;
  double H = 0.75;
  double T = 1.0;
  std::size_t n_steps = 256;
  std::size_t N_particles = 1000;
  std::vector<double> eps_list{0.4, 0.2, 0.1, 0.05};
  std::string kappa = "eps^-H/2";
  double p = 2.0;
  std::uint64_t seed = 1;
  std::vector<double> x0{1.0};
  unsigned workers = 1;
  std::string output_dir = "out";
  Json options = Json::object();

  TimeGrid grid() const { return TimeGrid(T, n_steps); }
  Vector x0_vector() const { return Eigen::Map<const Vector>(x0.data(), static_cast<Eigen::Index>(x0.size())); }
};

namespace detail {

[[noreturn]] inline void field_error(const std::string& path, const std::string& what) {
  throw usage_error(path + ": " + what);
}

inline double get_number(const Json& j, const std::string& path) {
  if (!j.is_number()) field_error(path, "expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) field_error(path, "must be finite");
  return x;
}

inline std::uint64_t get_unsigned(const Json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  field_error(path, "expected a nonnegative integer");
}

inline std::vector<double> get_number_list(const Json& j, const std::string& path) {
  if (!j.is_array()) field_error(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline const std::set<std::string>& model_params(const std::string& name) {
  static const std::set<std::string> pure{"sigma"};
  static const std::set<std::string> linear{"beta", "alpha", "sigma"};
  static const std::set<std::string> ex{"beta", "gamma", "alpha", "sigma"};
  if (name == "pure_noise") return pure;
  if (name == "linear_meanfield") return linear;
  if (name == "ex_clt") return ex;
  field_error("model.name", "unknown model '" + name + "' (expected pure_noise, linear_meanfield or ex_clt)");
}

}  // namespace detail

inline KappaKind parse_kappa(const std::string& s) {
  if (s == "eps^-H/2") return KappaKind::eps_pow_half_h;
  if (s == "eps^-H/4") return KappaKind::eps_pow_quarter_h;
  if (s == "log(1/eps)") return KappaKind::log_inverse;
  detail::field_error("kappa", "unknown kappa '" + s + "' (expected eps^-H/2, eps^-H/4 or log(1/eps))");
}

inline void validate(const RunConfig& c) {
  using detail::field_error;
  if (!(c.H > 0.5 && c.H < 1.0)) field_error("H", "must lie in the open interval (0.5, 1)");
  if (!(c.T > 0.0) || !std::isfinite(c.T)) field_error("T", "must be positive");
  if (c.n_steps < 16) field_error("n_steps", "must be at least 16");
  if (c.N_particles < 2) field_error("N_particles", "must be at least 2");
  if (c.eps_list.empty()) field_error("eps_list", "must not be empty");
  for (std::size_t i = 0; i < c.eps_list.size(); ++i) {
    if (!(c.eps_list[i] >= 0.0)) field_error("eps_list[" + std::to_string(i) + "]", "must be nonnegative");
    if (i > 0 && !(c.eps_list[i] < c.eps_list[i - 1])) field_error("eps_list", "must be strictly decreasing");
  }
  parse_kappa(c.kappa);
  if (!(c.p >= 1.0)) field_error("p", "must be at least 1");
  if (c.model.dim == 0) field_error("model.dim", "must be at least 1");
  detail::model_params(c.model.name);
  if (c.x0.size() != c.model.dim) field_error("x0", "length must equal model.dim");
  if (c.workers == 0) field_error("workers", "must be at least 1");
  if (c.output_dir.empty()) field_error("output_dir", "must not be empty");
  if (!c.options.is_object()) field_error("options", "expected an object");
}

inline RunConfig parse_config(const Json& j) {
  using detail::field_error;
  if (!j.is_object()) throw usage_error("config: expected a JSON object");
  static const std::set<std::string> known{"model", "H",    "T",       "n_steps",    "N_particles", "eps_list",
                                           "kappa", "p",    "seed",    "x0",         "workers",     "output_dir",
                                           "options"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) field_error(key, "unknown field");
  }
  RunConfig c;
  bool x0_given = false;
  if (j.contains("model")) {
    const Json& m = j["model"];
    if (!m.is_object()) field_error("model", "expected an object");
    if (m.contains("name")) {
      if (!m["name"].is_string()) field_error("model.name", "expected a string");
      c.model.name = m["name"].get<std::string>();
    }
    const auto& allowed = detail::model_params(c.model.name);
    for (const auto& [key, val] : m.items()) {
      const std::string path = "model." + key;
      if (key == "name") continue;
      if (key == "dim") {
        c.model.dim = detail::get_unsigned(val, path);
        continue;
      }
      if (!allowed.count(key)) field_error(path, "not a parameter of model '" + c.model.name + "'");
      const double x = detail::get_number(val, path);
      if (key == "beta") c.model.beta = x;
      if (key == "gamma") c.model.gamma = x;
      if (key == "alpha") c.model.alpha = x;
      if (key == "sigma") c.model.sigma = x;
    }
  }
  if (j.contains("H")) c.H = detail::get_number(j["H"], "H");
  if (j.contains("T")) c.T = detail::get_number(j["T"], "T");
  if (j.contains("n_steps")) c.n_steps = detail::get_unsigned(j["n_steps"], "n_steps");
  if (j.contains("N_particles")) c.N_particles = detail::get_unsigned(j["N_particles"], "N_particles");
  if (j.contains("eps_list")) c.eps_list = detail::get_number_list(j["eps_list"], "eps_list");
  if (j.contains("kappa")) {
    if (!j["kappa"].is_string()) field_error("kappa", "expected a string");
    c.kappa = j["kappa"].get<std::string>();
  }
  if (j.contains("p")) c.p = detail::get_number(j["p"], "p");
  if (j.contains("seed")) c.seed = detail::get_unsigned(j["seed"], "seed");
  if (j.contains("x0")) {
    c.x0 = detail::get_number_list(j["x0"], "x0");
    x0_given = true;
  }
  if (j.contains("workers")) {
    const auto w = detail::get_unsigned(j["workers"], "workers");
    if (w > 1024) field_error("workers", "must be at most 1024");
    c.workers = static_cast<unsigned>(w);
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) field_error("output_dir", "expected a string");
    c.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("options")) c.options = j["options"];
  if (!x0_given) c.x0.assign(c.model.dim, 1.0);
  validate(c);
  return c;
}

// Canonical form. Execution-only fields (workers, output_dir) are left out unless
// asked for, so artifacts do not depend on them.
inline Json to_json(const RunConfig& c, bool include_runtime = false) {
  Json m = {{"name", c.model.name}, {"dim", c.model.dim}};
  for (const auto& key : detail::model_params(c.model.name)) {
    if (key == "beta") m[key] = c.model.beta;
    if (key == "gamma") m[key] = c.model.gamma;
    if (key == "alpha") m[key] = c.model.alpha;
    if (key == "sigma") m[key] = c.model.sigma;
  }
  Json j = {{"model", m},          {"H", c.H},
            {"T", c.T},            {"n_steps", c.n_steps},
            {"N_particles", c.N_particles},
            {"eps_list", c.eps_list},
            {"kappa", c.kappa},    {"p", c.p},
            {"seed", c.seed},      {"x0", c.x0},
            {"options", c.options}};
  if (include_runtime) {
    j["workers"] = c.workers;
    j["output_dir"] = c.output_dir;
  }
  return j;
}

inline ModelPtr make_model(const ModelConfig& m) {
  if (m.name == "pure_noise") return pure_noise_model(m.dim, m.sigma);
  if (m.name == "linear_meanfield") return linear_meanfield_model(m.dim, m.beta, m.alpha, m.sigma);
  if (m.name == "ex_clt") return ex_clt_sine_model(m.dim, m.beta, m.gamma, m.alpha, m.sigma);
  detail::field_error("model.name", "unknown model '" + m.name + "'");
}

// Typed access to options.<key> with a default.
template <typename T>
T option(const RunConfig& c, const std::string& key, T fallback) {
  if (!c.options.contains(key)) return fallback;
  const Json& v = c.options[key];
  const std::string path = "options." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) detail::field_error(path, "expected true or false");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) detail::field_error(path, "expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    return static_cast<T>(detail::get_unsigned(v, path));
  } else {
    return static_cast<T>(detail::get_number(v, path));
  }
}

}  // namespace fracmv
