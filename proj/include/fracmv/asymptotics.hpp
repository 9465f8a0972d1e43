#pragma once

#include "fracmv/core.hpp"
#include "fracmv/mckean.hpp"
#include "fracmv/model.hpp"
#include "fracmv/rkhs.hpp"

#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace fracmv {

struct SkeletonSolution {
  SamplePath path;
  ControlL2 ctrl;
  double cost;  // 1/2 ||h||_H^2
};

namespace detail {

inline void check_control(const CoefficientModel& model, const ControlL2& ctrl) {
  if (ctrl.dim() != model.dim()) throw std::invalid_argument("control dimension does not match the model");
}

}  // namespace detail

// Upsilon' = b(t, Upsilon, delta_{X0_t}) + sigma(t, delta_{X0_t}) u(t), Upsilon_0 = x0.
inline SkeletonSolution skeleton_ldp(const CoefficientModel& model, HurstParam H, const Vector& x0,
                                     const ControlL2& ctrl) {
  detail::check_control(model, ctrl);
  const TimeGrid grid = ctrl.grid;
  const SamplePath x_lim = limit_ode(model, x0, grid);
  const Matrix u = rh_density(H, ctrl).density;
  const double dt = grid.dt();

  SamplePath path(grid, model.dim());
  path.values.row(0) = x0.transpose();
  Matrix state = x0.transpose();
  Matrix drift;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double t = grid.node(k);
    const EmpiricalMeasure mu = EmpiricalMeasure::dirac(x_lim.at(k));
    model.drift_rows(t, state, mu, drift);
    state = state + dt * drift;
    state += (model.sigma(t, mu) * u.row(kk).transpose()).transpose() * dt;
    if (!state.allFinite()) throw divergence_error("LDP skeleton produced a non-finite state", k + 1);
    path.values.row(kk + 1) = state;
  }
  return {std::move(path), ctrl, 0.5 * h_norm_sq(ctrl)};
}

// Xi' = grad b(t, ., delta_{X0_t})(X0_t) Xi + sigma(t, delta_{X0_t}) u(t), Xi_0 = 0.
inline SkeletonSolution skeleton_mdp(const CoefficientModel& model, HurstParam H, const Vector& x0,
                                     const ControlL2& ctrl) {
  detail::check_control(model, ctrl);
  if (!model.has_derivatives()) throw unsupported_error("MDP skeleton needs grad_b from model '" + model.name() + "'");
  const TimeGrid grid = ctrl.grid;
  const SamplePath x_lim = limit_ode(model, x0, grid);
  const Matrix u = rh_density(H, ctrl).density;
  const double dt = grid.dt();

  SamplePath path(grid, model.dim());
  Vector xi = Vector::Zero(static_cast<Eigen::Index>(model.dim()));
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double t = grid.node(k);
    const Vector xk = x_lim.at(k);
    const EmpiricalMeasure mu = EmpiricalMeasure::dirac(xk);
    const Vector inc = model.grad_b(t, xk, mu) * xi;
    xi = xi + dt * inc;
    xi += model.sigma(t, mu) * u.row(kk).transpose() * dt;
    if (!xi.allFinite()) throw divergence_error("MDP skeleton produced a non-finite state", k + 1);
    path.values.row(kk + 1) = xi.transpose();
  }
  return {std::move(path), ctrl, 0.5 * h_norm_sq(ctrl)};
}

// A priori bound on sup_t |Upsilon_t|^2 over controls with ||h||_H^2 <= h_norm_sq_bound:
// [|x|^2 + K(T)(T + \int|X0|^2) + 2H T^{2H-1} K(T)(1 + sup|X0|) ||h||^2] exp{T K(T)(5 + sup|X0|)}.
inline double skeleton_gronwall_bound(const CoefficientModel& model, HurstParam H, const Vector& x0,
                                      TimeGrid grid, double h_norm_sq_bound) {
  const SamplePath x_lim = limit_ode(model, x0, grid);
  const double T = grid.horizon();
  const double K = model.lip_K(T);
  const double sup0 = x_lim.sup_norm();
  double int_sq = 0.0;
  for (std::size_t k = 0; k < grid.steps(); ++k) int_sq += x_lim.at(k).squaredNorm() * grid.dt();
  const double h = H.value();
  const double pre = x0.squaredNorm() + K * (T + int_sq) +
                     2.0 * h * std::pow(T, 2.0 * h - 1.0) * K * (1.0 + sup0) * h_norm_sq_bound;
  return pre * std::exp(T * K * (5.0 + sup0));
}

// Full-path LDP rate: invert the skeleton map on the grid and return 1/2 ||g||^2.
// +infinity when f does not start at x0.
inline double rate_ldp_path(const CoefficientModel& model, HurstParam H, const Vector& x0, const SamplePath& f) {
  if (f.dim() != model.dim() || static_cast<Eigen::Index>(model.dim()) != x0.size()) {
    throw std::invalid_argument("rate_ldp_path: dimension mismatch");
  }
  const double start_gap = (f.at(0) - x0).norm();
  if (start_gap > 1e-12 * (1.0 + x0.norm())) return std::numeric_limits<double>::infinity();

  const TimeGrid grid = f.grid;
  const SamplePath x_lim = limit_ode(model, x0, grid);
  const double dt = grid.dt();
  const auto n = static_cast<Eigen::Index>(grid.steps());
  Matrix u(n, static_cast<Eigen::Index>(model.dim()));
  Matrix drift;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = grid.node(static_cast<std::size_t>(k));
    const EmpiricalMeasure mu = EmpiricalMeasure::dirac(x_lim.at(static_cast<std::size_t>(k)));
    const Matrix state = f.values.row(k);
    model.drift_rows(t, state, mu, drift);
    const Eigen::FullPivLU<Matrix> lu(model.sigma(t, mu));
    if (!lu.isInvertible()) {
      throw unsupported_error("rate_ldp_path: sigma is singular at t = " + std::to_string(t));
    }
    const Vector slope = (f.values.row(k + 1) - f.values.row(k)).transpose() / dt;
    u.row(k) = lu.solve(slope - drift.row(0).transpose()).transpose();
  }
  return 0.5 * h_norm_sq(rh_invert(H, grid, u));
}

enum class Regime { ldp, mdp };

struct EndpointRate {
  double value;
  ControlL2 minimizer;
};

// min 1/2 ||g||^2 subject to e_c^T (skeleton_T(g) - skeleton_T(0)) = a. The terminal
// functional is Delta <q, g> with q = L^T r and r from the adjoint recursion, so the
// minimizer is a q / (Delta |q|^2).
inline EndpointRate solve_endpoint_rate(const CoefficientModel& model, HurstParam H, const Vector& x0, TimeGrid grid,
                                        double a, Regime regime, std::size_t coord = 0) {
  if (coord >= model.dim()) throw std::invalid_argument("endpoint coordinate out of range");
  if (regime == Regime::ldp && !model.affine_drift()) {
    throw unsupported_error("LDP endpoint rate needs an affine drift; use rate_ldp_path for model '" +
                            model.name() + "'");
  }
  if (!model.has_derivatives()) throw unsupported_error("endpoint rate needs grad_b from model '" + model.name() + "'");

  const SamplePath x_lim = limit_ode(model, x0, grid);
  const double dt = grid.dt();
  const auto n = static_cast<Eigen::Index>(grid.steps());
  const auto d = static_cast<Eigen::Index>(model.dim());

  Matrix r(n, d);
  Vector lambda = Vector::Unit(d, static_cast<Eigen::Index>(coord));
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    const double t = grid.node(static_cast<std::size_t>(k));
    const Vector xk = x_lim.at(static_cast<std::size_t>(k));
    const EmpiricalMeasure mu = EmpiricalMeasure::dirac(xk);
    r.row(k) = (model.sigma(t, mu).transpose() * lambda).transpose();
    lambda = lambda + dt * (model.grad_b(t, xk, mu).transpose() * lambda);
  }
  const auto op = VolterraOperator::get(H, grid);
  const Matrix q = op->density_matrix().transpose().triangularView<Eigen::Upper>() * r;
  const double q2 = q.squaredNorm() * dt;
  if (!(q2 > 0.0)) throw numerical_error("endpoint functional vanishes: the level is unreachable");
  return {a * a / (2.0 * q2), ControlL2(grid, (a / q2) * q)};
}

inline double rate_endpoint(const CoefficientModel& model, HurstParam H, const Vector& x0, TimeGrid grid, double a,
                            Regime regime, std::size_t coord = 0) {
  return solve_endpoint_rate(model, H, x0, grid, a, regime, coord).value;
}

// Z' = grad b Z + <D^L b, m> + sigma dB^H along X0, m = E Z from the mean ODE.
struct CltEnsemble {
  TimeGrid grid;
  std::vector<Matrix> clouds;  // clouds[k] is N x d, Z at t_k
  SamplePath mean_path;
  BundleSet bundles;

  std::size_t n_paths() const { return clouds.empty() ? 0 : static_cast<std::size_t>(clouds.front().rows()); }
  SamplePath path(std::size_t i) const {
    SamplePath p(grid, static_cast<std::size_t>(clouds.front().cols()));
    for (std::size_t k = 0; k < clouds.size(); ++k) {
      p.values.row(static_cast<Eigen::Index>(k)) = clouds[k].row(static_cast<Eigen::Index>(i));
    }
    return p;
  }
};

inline CltEnsemble clt_limit(const CoefficientModel& model, HurstParam H, const Vector& x0, BundleSet bundles) {
  (void)H;
  if (!model.has_derivatives()) {
    throw unsupported_error("CLT limit needs grad_b and the Lions derivative from model '" + model.name() + "'");
  }
  if (!bundles || bundles->empty()) throw std::invalid_argument("clt_limit needs fBm bundles");
  const TimeGrid grid = bundles->front().fbm.grid;
  const SamplePath x_lim = limit_ode(model, x0, grid);
  const std::size_t n = grid.steps();
  const auto N = static_cast<Eigen::Index>(bundles->size());
  const auto d = static_cast<Eigen::Index>(model.dim());
  const double dt = grid.dt();

  CltEnsemble out{grid, std::vector<Matrix>(n + 1), SamplePath(grid, model.dim()), bundles};
  out.clouds[0] = Matrix::Zero(N, d);
  Vector m = Vector::Zero(d);
  Matrix dB(N, d);
  for (std::size_t k = 0; k < n; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double t = grid.node(k);
    const Vector xk = x_lim.at(k);
    const EmpiricalMeasure mu = EmpiricalMeasure::dirac(xk);
    const Matrix A = model.grad_b(t, xk, mu);
    const Matrix D = model.lions_b(t, xk, mu, xk);
    const Matrix sig = model.sigma(t, mu);

    const Vector lions_term = D * m;
    for (Eigen::Index i = 0; i < N; ++i) {
      const Matrix& B = (*bundles)[static_cast<std::size_t>(i)].fbm.values;
      dB.row(i) = B.row(kk + 1) - B.row(kk);
    }
    const Matrix& z = out.clouds[k];
    Matrix next = z + dt * (z * A.transpose());
    next.rowwise() += dt * lions_term.transpose();
    next.noalias() += dB * sig.transpose();
    if (!next.allFinite()) throw divergence_error("CLT limit produced a non-finite state", k + 1);
    out.clouds[k + 1] = std::move(next);

    m = m + dt * ((A + D) * m);
    out.mean_path.values.row(kk + 1) = m.transpose();
  }
  return out;
}

enum class KappaKind { eps_pow_half_h, eps_pow_quarter_h, log_inverse };

struct MdpConfig {
  KappaKind kind = KappaKind::eps_pow_half_h;
  std::vector<double> eps_list{0.4, 0.2, 0.1, 0.05};

  double kappa(double eps, HurstParam H) const {
    if (!(eps > 0.0 && eps < 1.0)) throw std::domain_error("kappa needs eps in (0, 1)");
    switch (kind) {
      case KappaKind::eps_pow_half_h: return std::pow(eps, -0.5 * H.value());
      case KappaKind::eps_pow_quarter_h: return std::pow(eps, -0.25 * H.value());
      case KappaKind::log_inverse: return std::log(1.0 / eps);
    }
    return 0.0;
  }

  // kappa increases and eps^H kappa decreases along eps_list (which must decrease).
  bool admissible(HurstParam H) const {
    if (eps_list.size() < 2) return !eps_list.empty();
    for (std::size_t i = 1; i < eps_list.size(); ++i) {
      const double e0 = eps_list[i - 1], e1 = eps_list[i];
      if (!(e1 < e0)) return false;
      const double k0 = kappa(e0, H), k1 = kappa(e1, H);
      if (!(k1 > k0)) return false;
      if (!(std::pow(e1, H.value()) * k1 < std::pow(e0, H.value()) * k0)) return false;
    }
    return true;
  }
};

inline std::string to_string(KappaKind k) {
  switch (k) {
    case KappaKind::eps_pow_half_h: return "eps^-H/2";
    case KappaKind::eps_pow_quarter_h: return "eps^-H/4";
    case KappaKind::log_inverse: return "log(1/eps)";
  }
  return "?";
}

// Y = (X^eps - X0) / (eps^H kappa(eps)), returned as an ensemble sharing the bundles.
inline EnsembleResult rescale_mdp(const EnsembleResult& x_eps, const SamplePath& x_lim, double scale) {
  EnsembleResult y = x_eps;
  for (std::size_t k = 0; k < y.clouds.size(); ++k) {
    y.clouds[k] = (y.clouds[k].rowwise() - x_lim.values.row(static_cast<Eigen::Index>(k))) / scale;
  }
  return y;
}

inline EnsembleResult mdp_paths(ModelPtr model, HurstParam H, const Vector& x0, double eps, const MdpConfig& cfg,
                                TimeGrid grid, std::size_t n_particles, std::uint64_t seed, Exec exec = {}) {
  if (!(eps > 0.0)) throw std::domain_error("mdp_paths needs eps > 0");
  const double scale = std::pow(eps, H.value()) * cfg.kappa(eps, H);
  const EnsembleResult x_eps = solve_mckean(model, H, x0, eps, grid, n_particles, seed, exec);
  return rescale_mdp(x_eps, limit_ode(*model, x0, grid), scale);
}

}  // namespace fracmv
