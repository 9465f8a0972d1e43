#pragma once

#include "fracmv/core.hpp"
#include "fracmv/fbm_kernel.hpp"
#include "fracmv/measure.hpp"
#include "fracmv/model.hpp"
#include "fracmv/rkhs.hpp"

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

namespace fracmv {

using BundleSet = std::shared_ptr<const std::vector<FbmBundle>>;

struct EnsembleResult {
  TimeGrid grid;
  double eps = 0.0;
  ModelPtr model;
  std::vector<Matrix> clouds;  // clouds[k] is N x d, the particle states at t_k
  BundleSet bundles;
  std::vector<double> weights;  // Girsanov weights, controlled runs with eps > 0 only

  std::size_t n_paths() const { return clouds.empty() ? 0 : static_cast<std::size_t>(clouds.front().rows()); }
  std::size_t dim() const { return clouds.empty() ? 0 : static_cast<std::size_t>(clouds.front().cols()); }

  SamplePath path(std::size_t i) const {
    SamplePath p(grid, dim());
    for (std::size_t k = 0; k < clouds.size(); ++k) {
      p.values.row(static_cast<Eigen::Index>(k)) = clouds[k].row(static_cast<Eigen::Index>(i));
    }
    return p;
  }
  EmpiricalMeasure law(std::size_t k) const { return EmpiricalMeasure(clouds.at(k)); }
  std::vector<EmpiricalMeasure> laws() const {
    std::vector<EmpiricalMeasure> out;
    out.reserve(clouds.size());
    for (const auto& c : clouds) out.emplace_back(c);
    return out;
  }
};

// X0' = b(t, X0, delta_{X0}), explicit Euler.
inline SamplePath limit_ode(const CoefficientModel& model, const Vector& x0, TimeGrid grid) {
  if (static_cast<std::size_t>(x0.size()) != model.dim()) throw std::invalid_argument("x0 dimension mismatch");
  SamplePath out(grid, model.dim());
  out.values.row(0) = x0.transpose();
  const double dt = grid.dt();
  Matrix state = x0.transpose();
  Matrix drift;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    model.drift_rows(grid.node(k), state, EmpiricalMeasure(state), drift);
    state = state + dt * drift;
    if (!state.allFinite()) throw divergence_error("limit ODE produced a non-finite state", k + 1);
    out.values.row(static_cast<Eigen::Index>(k + 1)) = state;
  }
  return out;
}

// I_{k+1} = I_k + sigma_k (B_{k+1} - B_k), one sigma per cell.
inline SamplePath wiener_integral(const std::vector<Matrix>& sigma_path, const SamplePath& fbm) {
  const std::size_t n = fbm.grid.steps();
  if (sigma_path.size() != n) throw std::invalid_argument("wiener_integral: need one sigma per grid cell");
  const auto d = static_cast<Eigen::Index>(fbm.dim());
  SamplePath out(fbm.grid, sigma_path.empty() ? fbm.dim() : static_cast<std::size_t>(sigma_path[0].rows()));
  for (std::size_t k = 0; k < n; ++k) {
    const Matrix& s = sigma_path[k];
    if (s.cols() != d || s.rows() != out.values.cols()) {
      throw std::invalid_argument("wiener_integral: sigma dimension mismatch at cell " + std::to_string(k));
    }
    const auto kk = static_cast<Eigen::Index>(k);
    out.values.row(kk + 1) =
        out.values.row(kk) + (s * (fbm.values.row(kk + 1) - fbm.values.row(kk)).transpose()).transpose();
  }
  return out;
}

// theta_T = exp(-sum <g_k / s, dW_k> - 1/2 sum |g_k / s|^2 dt) for the shift (R_H h) / s.
inline double girsanov_weight(const ControlL2& ctrl, const FbmBundle& bundle, double noise_scale = 1.0) {
  if (ctrl.g.rows() != bundle.wiener_increments.rows() || ctrl.g.cols() != bundle.wiener_increments.cols()) {
    throw std::invalid_argument("girsanov_weight: control and bundle shapes differ");
  }
  if (ctrl.g.isZero(0.0)) return 1.0;
  const Matrix g = ctrl.g / noise_scale;
  const double stoch = (g.array() * bundle.wiener_increments.array()).sum();
  return std::exp(-stoch - 0.5 * g.squaredNorm() * ctrl.grid.dt());
}

namespace detail {

// Euler scheme shared by the uncontrolled and controlled equations:
//   X_{k+1} = X_k + b(t_k, X_k, mu_k) dt + sigma(t_k, mu_k) u_k dt + eps^H sigma(t_k, mu_k) dB_k
// with mu_k the particle cloud itself, or frozen_law[k] when given.
inline std::vector<Matrix> integrate_particles(const CoefficientModel& model, HurstParam H, const Vector& x0,
                                               double eps, TimeGrid grid, const std::vector<FbmBundle>& bundles,
                                               const std::vector<EmpiricalMeasure>* frozen_law,
                                               const Matrix* control_density) {
  const std::size_t n = grid.steps();
  const auto N = static_cast<Eigen::Index>(bundles.size());
  const auto d = static_cast<Eigen::Index>(model.dim());
  if (x0.size() != d) throw std::invalid_argument("x0 dimension mismatch");
  if (frozen_law && frozen_law->size() != n + 1) {
    throw std::invalid_argument("frozen law must provide one measure per grid node");
  }
  for (const auto& b : bundles) {
    if (!(b.fbm.grid == grid) || b.fbm.values.cols() != d) {
      throw std::invalid_argument("fBm bundle does not match the solver grid or dimension");
    }
  }

  const double dt = grid.dt();
  const double eps_h = eps == 0.0 ? 0.0 : std::pow(eps, H.value());
  std::vector<Matrix> clouds(n + 1);
  clouds[0] = x0.transpose().replicate(N, 1);
  Matrix drift, dB(N, d);
  for (std::size_t k = 0; k < n; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double t = grid.node(k);
    const Matrix& x = clouds[k];
    const EmpiricalMeasure mu = frozen_law ? (*frozen_law)[k] : EmpiricalMeasure(x);
    model.drift_rows(t, x, mu, drift);
    const Matrix sig = model.sigma(t, mu);

    Matrix next = x + dt * drift;
    if (control_density) {
      const Eigen::RowVectorXd push = (sig * control_density->row(kk).transpose()).transpose() * dt;
      next.rowwise() += push;
    }
    if (eps_h != 0.0) {
      for (Eigen::Index i = 0; i < N; ++i) {
        const Matrix& B = bundles[static_cast<std::size_t>(i)].fbm.values;
        dB.row(i) = B.row(kk + 1) - B.row(kk);
      }
      next.noalias() += eps_h * (dB * sig.transpose());
    }
    if (!next.allFinite()) throw divergence_error("particle system produced a non-finite state", k + 1);
    clouds[k + 1] = std::move(next);
  }
  return clouds;
}

}  // namespace detail

inline EnsembleResult solve_mckean_from_bundles(ModelPtr model, HurstParam H, const Vector& x0, double eps,
                                                BundleSet bundles) {
  if (!bundles || bundles->empty()) throw std::invalid_argument("solver needs at least one fBm bundle");
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be nonnegative");
  const TimeGrid grid = bundles->front().fbm.grid;
  EnsembleResult out{grid, eps, model, {}, bundles, {}};
  out.clouds = detail::integrate_particles(*model, H, x0, eps, grid, *bundles, nullptr, nullptr);
  return out;
}

// Interacting particle approximation of the small-noise McKean-Vlasov equation.
// Particle i is driven by fBm path (first_path + i) of the seed.
inline EnsembleResult solve_mckean(ModelPtr model, HurstParam H, const Vector& x0, double eps, TimeGrid grid,
                                   std::size_t n_particles, std::uint64_t seed, Exec exec = {},
                                   std::uint64_t first_path = 0) {
  if (n_particles < 2) throw std::invalid_argument("particle system needs N >= 2");
  auto bundles = std::make_shared<const std::vector<FbmBundle>>(
      sample_volterra(H, grid, model->dim(), n_particles, seed, exec, first_path));
  return solve_mckean_from_bundles(std::move(model), H, x0, eps, std::move(bundles));
}

// Controlled equation: drift gains sigma(t, frozen_law_t) u(t), u = d/dt (R_H h).
// The law argument is frozen at the uncontrolled law.
inline EnsembleResult solve_controlled_from_bundles(ModelPtr model, HurstParam H, const Vector& x0, double eps,
                                                    const ControlL2& ctrl,
                                                    const std::vector<EmpiricalMeasure>& frozen_law,
                                                    BundleSet bundles) {
  if (!bundles || bundles->empty()) throw std::invalid_argument("solver needs at least one fBm bundle");
  const TimeGrid grid = bundles->front().fbm.grid;
  if (!(ctrl.grid == grid)) throw std::invalid_argument("control grid differs from the solver grid");
  if (frozen_law.size() != grid.nodes()) throw std::invalid_argument("frozen law grid differs from the solver grid");
  if (ctrl.dim() != model->dim()) throw std::invalid_argument("control dimension mismatch");
  const Matrix u = rh_density(H, ctrl).density;
  EnsembleResult out{grid, eps, model, {}, bundles, {}};
  out.clouds = detail::integrate_particles(*model, H, x0, eps, grid, *bundles, &frozen_law, &u);
  if (eps > 0.0) {
    const double eps_h = std::pow(eps, H.value());
    out.weights.reserve(bundles->size());
    for (const auto& b : *bundles) out.weights.push_back(girsanov_weight(ctrl, b, eps_h));
  }
  return out;
}

inline EnsembleResult solve_controlled(ModelPtr model, HurstParam H, const Vector& x0, double eps,
                                       const ControlL2& ctrl, const std::vector<EmpiricalMeasure>& frozen_law,
                                       TimeGrid grid, std::size_t n_particles, std::uint64_t seed, Exec exec = {},
                                       std::uint64_t first_path = 0) {
  if (n_particles < 1) throw std::invalid_argument("controlled solve needs at least one path");
  if (!(ctrl.grid == grid)) throw std::invalid_argument("control grid differs from the solver grid");
  auto bundles = std::make_shared<const std::vector<FbmBundle>>(
      sample_volterra(H, grid, model->dim(), n_particles, seed, exec, first_path));
  return solve_controlled_from_bundles(std::move(model), H, x0, eps, ctrl, frozen_law, std::move(bundles));
}

}  // namespace fracmv
