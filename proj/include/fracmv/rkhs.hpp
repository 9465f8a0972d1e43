#pragma once

#include "fracmv/core.hpp"
#include "fracmv/fbm_kernel.hpp"

#include <cmath>
#include <vector>

namespace fracmv {

// Control h stored through g = K_H^* h, piecewise constant on grid cells (row j = cell j).
// ||h||_H = ||g||_{L^2}.
struct ControlL2 {
  ControlL2(TimeGrid grid_, std::size_t d) : grid(grid_), g(Matrix::Zero(grid_.steps(), d)) {}
  ControlL2(TimeGrid grid_, Matrix values) : grid(grid_), g(std::move(values)) {
    if (static_cast<std::size_t>(g.rows()) != grid.steps()) {
      throw std::invalid_argument("control must have one row per grid cell");
    }
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(g.cols()); }

  TimeGrid grid;
  Matrix g;
};

// (R_H h)(t_k) on nodes and its derivative u averaged over each cell.
struct CameronMartinPath {
  TimeGrid grid;
  Matrix values;   // (n+1) x d, values[0] = 0
  Matrix density;  // n x d
};

inline double h_norm_sq(const ControlL2& ctrl) { return ctrl.g.squaredNorm() * ctrl.grid.dt(); }

// K_H^* psi for psi piecewise constant on cells: g = L^T psi.
inline ControlL2 apply_k_star(HurstParam H, const CellFunction& psi) {
  const auto op = VolterraOperator::get(H, psi.grid);
  return ControlL2(psi.grid, op->density_matrix().transpose().triangularView<Eigen::Upper>() * psi.values);
}

inline ControlL2 apply_k_star(HurstParam H, const SamplePath& psi) {
  return apply_k_star(H, CellFunction::from_path(psi));
}

namespace detail {

// gamma(m) = (|m+1|^{2H} + |m-1|^{2H} - 2|m|^{2H}) / 2, the unit-step fGn autocovariance.
inline std::vector<double> fgn_autocov(double H, std::size_t n) {
  std::vector<double> out(n);
  const double h2 = 2.0 * H;
  for (std::size_t m = 0; m < n; ++m) {
    const double x = static_cast<double>(m);
    out[m] = 0.5 * (std::pow(x + 1.0, h2) + std::pow(std::abs(x - 1.0), h2) - 2.0 * std::pow(x, h2));
  }
  return out;
}

}  // namespace detail

// H(2H-1) \int\int |t-s|^{2H-2} <psi(s), phi(t)> ds dt for cell-constant integrands.
// The double integral over a pair of cells is done in closed form.
inline double h_inner_weighted(HurstParam H, const CellFunction& psi, const CellFunction& phi) {
  if (!(psi.grid == phi.grid) || psi.dim() != phi.dim()) {
    throw std::invalid_argument("h_inner_weighted: arguments must share grid and dimension");
  }
  const std::size_t n = psi.grid.steps();
  const std::vector<double> gamma = detail::fgn_autocov(H.value(), n);
  const Matrix gram = psi.values * phi.values.transpose();  // gram(i, j) = <psi_i, phi_j>
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      acc += gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * gamma[i > j ? i - j : j - i];
    }
  }
  return acc * std::pow(psi.grid.dt(), 2.0 * H.value());
}

inline double h_inner_weighted(HurstParam H, const SamplePath& psi, const SamplePath& phi) {
  return h_inner_weighted(H, CellFunction::from_path(psi), CellFunction::from_path(phi));
}

inline CameronMartinPath rh_density(HurstParam H, const ControlL2& ctrl) {
  const auto op = VolterraOperator::get(H, ctrl.grid);
  const auto n = static_cast<Eigen::Index>(ctrl.grid.steps());
  CameronMartinPath out{ctrl.grid, Matrix::Zero(n + 1, ctrl.g.cols()), Matrix()};
  out.density.noalias() = op->density_matrix().triangularView<Eigen::Lower>() * ctrl.g;
  const double dt = ctrl.grid.dt();
  for (Eigen::Index k = 0; k < n; ++k) out.values.row(k + 1) = out.values.row(k) + dt * out.density.row(k);
  return out;
}

// Solves L g = u by forward substitution.
inline ControlL2 rh_invert(HurstParam H, TimeGrid grid, const Matrix& density) {
  if (static_cast<std::size_t>(density.rows()) != grid.steps()) {
    throw std::invalid_argument("rh_invert: density must have one row per grid cell");
  }
  const auto op = VolterraOperator::get(H, grid);
  const Matrix& L = op->density_matrix();
  const Eigen::Index n = L.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(L(i, i) >= 1e-14)) {
      throw numerical_error("rh_invert: Volterra operator is singular at cell " + std::to_string(i));
    }
  }
  Matrix g = density;
  L.triangularView<Eigen::Lower>().solveInPlace(g);
  return ControlL2(grid, std::move(g));
}

// Bundle seen under the shifted measure: dW -> dW + g dt * scale and B -> B + (R_H h) * scale.
inline FbmBundle shift_bundle(HurstParam H, const FbmBundle& bundle, const ControlL2& ctrl, double scale = 1.0) {
  if (!(bundle.fbm.grid == ctrl.grid) || bundle.fbm.dim() != ctrl.dim()) {
    throw std::invalid_argument("shift_bundle: control must match the bundle grid and dimension");
  }
  FbmBundle out = bundle;
  if (ctrl.g.isZero(0.0)) return out;
  const CameronMartinPath rh = rh_density(H, ctrl);
  out.wiener_increments += (scale * ctrl.grid.dt()) * ctrl.g;
  out.fbm.values += scale * rh.values;
  return out;
}

}  // namespace fracmv
