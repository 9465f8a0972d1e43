#pragma once

#include "fracmv/asymptotics.hpp"
#include "fracmv/core.hpp"
#include "fracmv/fbm_kernel.hpp"
#include "fracmv/mckean.hpp"
#include "fracmv/rng.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace fracmv {

struct MomentEstimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline MomentEstimate mean_and_se(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("cannot estimate a moment from an empty sample");
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double se = xs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return {mean, se, xs.size()};
}

// E sup_k |(X_k - ref_k) / scale - Z_k|^p over particles; Z omitted when null.
inline MomentEstimate moment_sup(const std::vector<Matrix>& clouds, const SamplePath& reference, double p,
                                 double scale = 1.0, const std::vector<Matrix>* subtract = nullptr) {
  if (clouds.empty() || clouds.front().rows() == 0) throw std::invalid_argument("moment_sup: empty ensemble");
  if (clouds.size() != reference.grid.nodes()) throw std::invalid_argument("moment_sup: grid mismatch");
  if (subtract && subtract->size() != clouds.size()) throw std::invalid_argument("moment_sup: grid mismatch");
  const Eigen::Index N = clouds.front().rows();
  std::vector<double> sup(static_cast<std::size_t>(N), 0.0);
  for (std::size_t k = 0; k < clouds.size(); ++k) {
    Matrix dev = (clouds[k].rowwise() - reference.values.row(static_cast<Eigen::Index>(k))) / scale;
    if (subtract) dev -= (*subtract)[k];
    for (Eigen::Index i = 0; i < N; ++i) {
      auto& s = sup[static_cast<std::size_t>(i)];
      s = std::max(s, dev.row(i).norm());
    }
  }
  for (double& s : sup) s = std::pow(s, p);
  return mean_and_se(sup);
}

inline MomentEstimate moment_sup(const EnsembleResult& ens, const SamplePath& reference, double p) {
  return moment_sup(ens.clouds, reference, p);
}

struct ScalingReport {
  std::vector<double> eps_list;
  std::vector<MomentEstimate> estimates;
  double slope = 0.0;
  double intercept = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double expected_slope = 0.0;

  bool ci_covers_expected() const { return ci_lo <= expected_slope && expected_slope <= ci_hi; }
};

// OLS of log(estimate) on log(eps); two-sided Student-t CI from the residuals.
inline ScalingReport scaling_exponent(const std::vector<double>& eps_list, const std::vector<MomentEstimate>& estimates,
                                      double expected_slope, double level = 0.95) {
  if (eps_list.size() != estimates.size()) throw std::invalid_argument("scaling_exponent: size mismatch");
  if (eps_list.size() < 3) throw std::invalid_argument("scaling_exponent needs at least 3 eps values");
  const std::size_t m = eps_list.size();
  std::vector<double> x(m), y(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(eps_list[i] > 0.0)) throw std::domain_error("scaling_exponent: eps must be positive");
    if (!(estimates[i].mean > 0.0)) throw std::domain_error("scaling_exponent: estimates must be positive");
    x[i] = std::log(eps_list[i]);
    y[i] = std::log(estimates[i].mean);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::domain_error("scaling_exponent: eps values must not all coincide");
  ScalingReport r;
  r.eps_list = eps_list;
  r.estimates = estimates;
  r.expected_slope = expected_slope;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = y[i] - (r.intercept + r.slope * x[i]);
    sse += e * e;
  }
  const double dof = static_cast<double>(m - 2);
  const double se_slope = std::sqrt(sse / dof / sxx);
  const boost::math::students_t dist(dof);
  const double tq = boost::math::quantile(dist, 0.5 + 0.5 * level);
  r.ci_lo = r.slope - tq * se_slope;
  r.ci_hi = r.slope + tq * se_slope;
  return r;
}

// E sup|X^eps - X0|^p along an eps ladder. With common random numbers every eps
// reuses one set of bundles; otherwise eps number i draws from mix_seed(seed, i).
inline ScalingReport difte_curve(ModelPtr model, HurstParam H, const Vector& x0, const std::vector<double>& eps_list,
                                 double p, TimeGrid grid, std::size_t n_particles, std::uint64_t seed, Exec exec = {},
                                 bool common_random_numbers = true) {
  const SamplePath x_lim = limit_ode(*model, x0, grid);
  BundleSet shared;
  if (common_random_numbers) {
    shared = std::make_shared<const std::vector<FbmBundle>>(
        sample_volterra(H, grid, model->dim(), n_particles, seed, exec));
  }
  std::vector<MomentEstimate> est;
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    BundleSet bundles = shared;
    if (!bundles) {
      bundles = std::make_shared<const std::vector<FbmBundle>>(
          sample_volterra(H, grid, model->dim(), n_particles, mix_seed(seed, i), exec));
    }
    const EnsembleResult ens = solve_mckean_from_bundles(model, H, x0, eps_list[i], bundles);
    est.push_back(moment_sup(ens.clouds, x_lim, p));
  }
  return scaling_exponent(eps_list, est, p * H.value());
}

struct CltReport {
  ScalingReport scaling;
  double max_mean_z_score = 0.0;  // max over nodes of |mean Z_t| / SE
};

// max_k |mean(Z_k)| / SE(Z_k), over nodes and coordinates with nonzero spread.
inline double clt_mean_zscore(const CltEnsemble& z) {
  double worst = 0.0;
  for (const Matrix& c : z.clouds) {
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      std::vector<double> col(c.col(j).data(), c.col(j).data() + c.rows());
      const MomentEstimate e = mean_and_se(col);
      if (e.se > 0.0) worst = std::max(worst, std::abs(e.mean) / e.se);
    }
  }
  return worst;
}

// E sup|(X^eps - X0)/eps^H - Z|^p. coupled = false drives Z by independent bundles
// (negative control).
inline CltReport clt_error_curve(ModelPtr model, HurstParam H, const Vector& x0, const std::vector<double>& eps_list,
                                 double p, TimeGrid grid, std::size_t n_particles, std::uint64_t seed, Exec exec = {},
                                 bool coupled = true) {
  const SamplePath x_lim = limit_ode(*model, x0, grid);
  auto bundles = std::make_shared<const std::vector<FbmBundle>>(
      sample_volterra(H, grid, model->dim(), n_particles, seed, exec));
  BundleSet z_bundles = bundles;
  if (!coupled) {
    z_bundles = std::make_shared<const std::vector<FbmBundle>>(
        sample_volterra(H, grid, model->dim(), n_particles, mix_seed(seed, 0xDEC0u), exec));
  }
  const CltEnsemble z = clt_limit(*model, H, x0, z_bundles);
  std::vector<MomentEstimate> est;
  for (double eps : eps_list) {
    if (!(eps > 0.0)) throw std::domain_error("clt_error_curve needs eps > 0");
    const EnsembleResult ens = solve_mckean_from_bundles(model, H, x0, eps, bundles);
    est.push_back(moment_sup(ens.clouds, x_lim, p, std::pow(eps, H.value()), &z.clouds));
  }
  return {scaling_exponent(eps_list, est, p * H.value()), clt_mean_zscore(z)};
}

struct TailReport {
  double eps = 0.0;
  double threshold = 0.0;
  std::size_t hit_count = 0;
  std::size_t n_paths = 0;
  double p_hat = 0.0;
  double p_se = 0.0;
  double speed = 0.0;
  double log_p_scaled = 0.0;  // speed * log p_hat
  double rate_prediction = 0.0;
  bool reliable = false;  // hit_count >= 20
};

struct TailOptions {
  std::size_t batch = 4096;      // particles per interacting replica
  std::size_t coord = 0;         // endpoint coordinate of the event
  std::size_t rate_steps = 512;  // grid for the rate prediction (at least the simulation grid)
  std::size_t min_hits = 20;
};

namespace detail {

// Counts {Y_T >= a} with Y = (X^eps_T - X0_T) / scale(eps). Paths are simulated in
// replicas of `batch` interacting particles; replica r uses fBm paths
// [r batch, r batch + m) so results do not depend on scheduling.
template <typename ScaleFn>
std::vector<TailReport> tail_sweep(ModelPtr model, HurstParam H, const Vector& x0, double a,
                                   const std::vector<double>& eps_list, TimeGrid grid, std::size_t n_paths,
                                   std::uint64_t seed, Exec exec, const TailOptions& opt, ScaleFn scale_of) {
  if (n_paths == 0) throw std::invalid_argument("tail estimate needs at least one path");
  if (opt.batch == 0) throw std::invalid_argument("tail batch size must be positive");
  if (opt.coord >= model->dim()) throw std::invalid_argument("tail coordinate out of range");
  const SamplePath x_lim = limit_ode(*model, x0, grid);
  const double x_end = x_lim.values(static_cast<Eigen::Index>(grid.steps()), static_cast<Eigen::Index>(opt.coord));
  const auto op = VolterraOperator::get(H, grid);
  op->residual_factor();

  std::vector<double> scales;
  for (double eps : eps_list) scales.push_back(scale_of(eps));
  std::vector<std::size_t> hits(eps_list.size(), 0);

  auto buffer = std::make_shared<std::vector<FbmBundle>>();
  const std::size_t replicas = (n_paths + opt.batch - 1) / opt.batch;
  for (std::size_t r = 0; r < replicas; ++r) {
    const std::size_t first = r * opt.batch;
    const std::size_t m = std::min(opt.batch, n_paths - first);
    buffer->resize(m, FbmBundle{SamplePath(grid, model->dim()), Matrix(), Matrix()});
    parallel_for(m, exec.workers,
                 [&](std::size_t i) { sample_volterra_into(*op, model->dim(), seed, first + i, (*buffer)[i]); });
    for (std::size_t e = 0; e < eps_list.size(); ++e) {
      const auto clouds = integrate_particles(*model, H, x0, eps_list[e], grid, *buffer, nullptr, nullptr);
      const Matrix& end = clouds.back();
      for (Eigen::Index i = 0; i < end.rows(); ++i) {
        if ((end(i, static_cast<Eigen::Index>(opt.coord)) - x_end) / scales[e] >= a) ++hits[e];
      }
    }
  }

  std::vector<TailReport> out;
  for (std::size_t e = 0; e < eps_list.size(); ++e) {
    TailReport t;
    t.eps = eps_list[e];
    t.threshold = a;
    t.hit_count = hits[e];
    t.n_paths = n_paths;
    t.p_hat = static_cast<double>(hits[e]) / static_cast<double>(n_paths);
    t.p_se = std::sqrt(t.p_hat * (1.0 - t.p_hat) / static_cast<double>(n_paths));
    t.reliable = hits[e] >= opt.min_hits;
    out.push_back(t);
  }
  return out;
}

inline TimeGrid rate_grid(TimeGrid sim, const TailOptions& opt) {
  return TimeGrid(sim.horizon(), std::max(sim.steps(), opt.rate_steps));
}

}  // namespace detail

// eps^{2H} log P(X^eps_T - X0_T >= a) against -rate_endpoint(a).
inline std::vector<TailReport> ldp_consistency(ModelPtr model, HurstParam H, const Vector& x0, double a,
                                               const std::vector<double>& eps_list, TimeGrid grid,
                                               std::size_t n_paths, std::uint64_t seed, Exec exec = {},
                                               TailOptions opt = {}) {
  const double rate =
      rate_endpoint(*model, H, x0, detail::rate_grid(grid, opt), a, Regime::ldp, opt.coord);
  auto out = detail::tail_sweep(model, H, x0, a, eps_list, grid, n_paths, seed, exec, opt,
                                [](double) { return 1.0; });
  for (auto& t : out) {
    t.speed = std::pow(t.eps, 2.0 * H.value());
    t.log_p_scaled = t.hit_count == 0 ? -std::numeric_limits<double>::infinity() : t.speed * std::log(t.p_hat);
    t.rate_prediction = rate;
  }
  return out;
}

// kappa^{-2} log P(Y^eps_T >= a) against -(MDP endpoint rate).
inline std::vector<TailReport> mdp_consistency(ModelPtr model, HurstParam H, const Vector& x0, double a,
                                               const MdpConfig& cfg, TimeGrid grid, std::size_t n_paths,
                                               std::uint64_t seed, Exec exec = {}, TailOptions opt = {}) {
  if (!cfg.admissible(H)) throw std::domain_error("kappa '" + to_string(cfg.kind) + "' is not admissible on eps_list");
  const double rate =
      rate_endpoint(*model, H, x0, detail::rate_grid(grid, opt), a, Regime::mdp, opt.coord);
  auto out = detail::tail_sweep(model, H, x0, a, cfg.eps_list, grid, n_paths, seed, exec, opt,
                                [&](double eps) { return std::pow(eps, H.value()) * cfg.kappa(eps, H); });
  for (auto& t : out) {
    const double k = cfg.kappa(t.eps, H);
    t.speed = 1.0 / (k * k);
    t.log_p_scaled = t.hit_count == 0 ? -std::numeric_limits<double>::infinity() : t.speed * std::log(t.p_hat);
    t.rate_prediction = rate;
  }
  return out;
}

// Index of the smallest eps whose cell is reliable.
inline std::optional<std::size_t> smallest_reliable(const std::vector<TailReport>& reports) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (!reports[i].reliable) continue;
    if (!best || reports[i].eps < reports[*best].eps) best = i;
  }
  return best;
}

struct KsResult {
  double statistic;
  double p_value;
};

// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov distribution
// and the small-sample correction of Stephens.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("KS test needs nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  const double lambda = (ne + 0.12 + 0.11 / ne) * d;
  double q = 0.0;
  if (lambda < 1e-3) {
    q = 1.0;
  } else {
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
      const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
      q += term;
      if (std::abs(term) < 1e-12 * std::abs(q)) break;
      sign = -sign;
    }
    q = std::clamp(2.0 * q, 0.0, 1.0);
  }
  return {d, q};
}

// Largest |C_hat(i,j) - R_H(t_i,t_j)| / SE over node pairs i, j >= 1 of one coordinate.
// Paths are centered by construction, so C_hat is the mean of products.
inline double covariance_max_zscore(HurstParam H, const std::vector<SamplePath>& paths, std::size_t coord = 0) {
  if (paths.size() < 2) throw std::invalid_argument("covariance check needs at least two paths");
  const TimeGrid grid = paths.front().grid;
  const auto n = static_cast<Eigen::Index>(grid.steps());
  const auto M = static_cast<Eigen::Index>(paths.size());
  Matrix X(M, n);
  for (Eigen::Index p = 0; p < M; ++p) {
    X.row(p) = paths[static_cast<std::size_t>(p)].values.col(static_cast<Eigen::Index>(coord)).tail(n).transpose();
  }
  const double m = static_cast<double>(M);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Eigen::ArrayXd prod = X.col(i).array() * X.col(j).array();
      const double mean = prod.mean();
      const double var = (prod - mean).square().sum() / (m - 1.0);
      const double se = std::sqrt(var / m);
      const double target =
          cov(H, grid.node(static_cast<std::size_t>(i + 1)), grid.node(static_cast<std::size_t>(j + 1)));
      worst = std::max(worst, std::abs(mean - target) / se);
    }
  }
  return worst;
}

}  // namespace fracmv
