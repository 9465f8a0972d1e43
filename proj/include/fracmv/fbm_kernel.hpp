#pragma once

#include "fracmv/core.hpp"
#include "fracmv/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <tuple>
#include <vector>

namespace fracmv {

// R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2
inline double cov(HurstParam H, double s, double t) {
  if (s < 0.0 || t < 0.0) throw std::domain_error("covariance needs nonnegative times");
  const double h2 = 2.0 * H.value();
  return 0.5 * (std::pow(t, h2) + std::pow(s, h2) - std::pow(std::abs(t - s), h2));
}

// Normalising constant C_H = sqrt(H(2H-1) / B(2-2H, H-1/2)).
inline double c_h(HurstParam H) {
  const double h = H.value();
  const double beta = std::exp(std::lgamma(2.0 - 2.0 * h) + std::lgamma(h - 0.5) - std::lgamma(1.5 - h));
  return std::sqrt(h * (2.0 * h - 1.0) / beta);
}

// dK_H(s, r)/ds = C_H (s/r)^{H-1/2} (s-r)^{H-3/2}, for 0 < r < s.
inline double kernel_K_ds(HurstParam H, double s, double r) {
  if (!(r > 0.0) || !(r < s)) throw std::domain_error("kernel derivative needs 0 < r < s");
  const double p = H.value() - 0.5;
  return c_h(H) * std::pow(s / r, p) * std::pow(s - r, p - 1.0);
}

// Volterra kernel K_H(t, s) = C_H s^{1/2-H} \int_s^t (r-s)^{H-3/2} r^{H-1/2} dr, zero for t <= s.
// Product rule on `cells` uniform cells of [s, t]: the singular factor is
// integrated exactly per cell, r^{H-1/2} is frozen at the cell midpoint.
inline double kernel_K(HurstParam H, double t, double s, std::size_t cells = 512) {
  if (!(s > 0.0)) throw std::domain_error("kernel K_H(t, s) is singular at s = 0");
  if (t <= s) return 0.0;
  if (cells == 0) throw std::invalid_argument("kernel quadrature needs at least one cell");
  const double p = H.value() - 0.5;
  const double h = (t - s) / static_cast<double>(cells);
  double acc = 0.0;
  double prev = 0.0;  // (r_i - s)^p
  for (std::size_t i = 0; i < cells; ++i) {
    const double right = std::pow(h * static_cast<double>(i + 1), p);
    const double mid = s + h * (static_cast<double>(i) + 0.5);
    acc += (right - prev) * std::pow(mid, p);
    prev = right;
  }
  return c_h(H) * std::pow(s, -p) * acc / p;
}

namespace detail {

// G(lambda) = \int_1^lambda (rho-1)^{H-3/2} rho^{H-1/2} d rho, evaluated for a
// batch of arguments by accumulating over the sorted list. With v = (rho-1)^p
// the integrand becomes (1 + v^{1/p})^p / p, which is bounded and smooth.
inline std::vector<double> kernel_g_batch(double p, const std::vector<double>& lambdas) {
  std::vector<std::size_t> order(lambdas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lambdas[a] < lambdas[b]; });

  const auto integrand = [p](double v) { return std::pow(1.0 + std::pow(v, 1.0 / p), p); };
  using Rule = boost::math::quadrature::gauss<double, 20>;
  constexpr double kPanel = 0.02;

  std::vector<double> out(lambdas.size(), 0.0);
  double v_prev = 0.0;
  double acc = 0.0;
  for (std::size_t idx : order) {
    const double lam = lambdas[idx];
    if (lam <= 1.0) {
      out[idx] = 0.0;
      continue;
    }
    const double v = std::pow(lam - 1.0, p);
    if (v > v_prev) {
      const auto panels = static_cast<std::size_t>(std::ceil((v - v_prev) / kPanel));
      const double width = (v - v_prev) / static_cast<double>(panels);
      for (std::size_t i = 0; i < panels; ++i) {
        const double a = v_prev + width * static_cast<double>(i);
        acc += Rule::integrate(integrand, a, i + 1 == panels ? v : a + width);
      }
      v_prev = v;
    }
    out[idx] = acc / p;
  }
  return out;
}

}  // namespace detail

// Discretised Volterra operator on a uniform grid, assembled once per (H, grid).
//
//  weights():          W(k, j) = (1/dt) \int_{cell j} K_H(t_k, s) ds, an (n+1) x n matrix
//                      with W(k, j) = 0 for j >= k. Row k maps piecewise-constant
//                      integrands to \int_0^{t_k} K_H(t_k, s) g(s) ds exactly.
//  density_matrix():   L(i, j) = W(i+1, j) - W(i, j), lower triangular n x n with a
//                      strictly positive diagonal. L g is the cell average of
//                      d/ds (K_H g)(s); L^T is the discrete adjoint K_H^*.
//  residual_factor():  S with S S^T = [R_H(t_i, t_j)] - dt W W^T on nodes 1..n, the
//                      covariance that the cell-averaged kernel leaves out.
//  covariance_factor(): Cholesky factor of [R_H(t_i, t_j)] on nodes 1..n.
//
// Cell averages are exact: with p = H - 1/2 and unit spacing,
//   \int_0^x K_H(k, s) ds = C_H/(p+1) [B(1-p,p) k^{p+1} I_{x/k}(1-p, p) + x^{p+1} G(k/x)]
// and K_H is homogeneous of degree p, so the physical grid only rescales by dt^p.
class VolterraOperator {
 public:
  VolterraOperator(HurstParam H, TimeGrid grid) : hurst_(H), grid_(grid) { assemble(); }

  static std::shared_ptr<const VolterraOperator> get(HurstParam H, TimeGrid grid) {
    static std::mutex mutex;
    static std::map<std::tuple<double, double, std::size_t>, std::shared_ptr<const VolterraOperator>> cache;
    const auto key = std::make_tuple(H.value(), grid.horizon(), grid.steps());
    {
      std::lock_guard lock(mutex);
      if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    auto op = std::make_shared<const VolterraOperator>(H, grid);
    std::lock_guard lock(mutex);
    return cache.emplace(key, std::move(op)).first->second;
  }

  HurstParam hurst() const noexcept { return hurst_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  const Matrix& weights() const noexcept { return weights_; }
  const Matrix& density_matrix() const noexcept { return density_; }

  const Matrix& residual_factor() const {
    std::call_once(residual_once_, [this] { build_residual(); });
    return residual_;
  }
  bool residual_is_triangular() const {
    residual_factor();
    return residual_triangular_;
  }

  const Matrix& covariance_factor() const {
    std::call_once(cholesky_once_, [this] { build_cholesky(); });
    return cholesky_;
  }

  // [R_H(t_i, t_j)] for i, j = 1..n.
  Matrix node_covariance() const {
    const std::size_t n = grid_.steps();
    Matrix r(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        r(i, j) = r(j, i) = cov(hurst_, grid_.node(i + 1), grid_.node(j + 1));
      }
    }
    return r;
  }

 private:
  void assemble() {
    const std::size_t n = grid_.steps();
    const double p = hurst_.value() - 0.5;
    const double beta_full = boost::math::beta(1.0 - p, p);
    const double ch = c_h(hurst_);

    // Every (k, x) with 1 <= x < k <= n needs G(k/x).
    std::vector<double> lambdas;
    lambdas.reserve(n * (n - 1) / 2);
    for (std::size_t k = 2; k <= n; ++k) {
      for (std::size_t x = 1; x < k; ++x) lambdas.push_back(static_cast<double>(k) / static_cast<double>(x));
    }
    const std::vector<double> g = detail::kernel_g_batch(p, lambdas);

    const double scale = std::pow(grid_.dt(), p);
    weights_ = Matrix::Zero(static_cast<Eigen::Index>(n + 1), static_cast<Eigen::Index>(n));
    std::size_t cursor = 0;
    std::vector<double> cumulative(n + 1);
    for (std::size_t k = 1; k <= n; ++k) {
      const double kd = static_cast<double>(k);
      const double head = beta_full * std::pow(kd, p + 1.0);
      cumulative[0] = 0.0;
      for (std::size_t x = 1; x < k; ++x) {
        const double xd = static_cast<double>(x);
        cumulative[x] = ch / (p + 1.0) *
                        (head * boost::math::ibeta(1.0 - p, p, xd / kd) + std::pow(xd, p + 1.0) * g[cursor++]);
      }
      cumulative[k] = ch / (p + 1.0) * head;
      for (std::size_t j = 0; j < k; ++j) {
        weights_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
            scale * (cumulative[j + 1] - cumulative[j]);
      }
    }

    density_ = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      density_.row(ii).head(ii + 1) = weights_.row(ii + 1).head(ii + 1) - weights_.row(ii).head(ii + 1);
    }
  }

  void build_residual() const {
    const auto n = static_cast<Eigen::Index>(grid_.steps());
    const Matrix w = weights_.bottomRows(n);
    Matrix c = node_covariance();
    c.noalias() -= grid_.dt() * w * w.transpose();
    c = 0.5 * (c + c.transpose());

    Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success) {
      Matrix jittered = c;
      jittered.diagonal().array() += 1e-12 * c.diagonal().maxCoeff();
      llt.compute(jittered);
    }
    if (llt.info() == Eigen::Success) {
      residual_ = llt.matrixL();
      residual_triangular_ = true;
      return;
    }
    // Rounding can push the smallest eigenvalues slightly negative when the
    // residual is tiny (H close to 1/2); clip them.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
    const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    residual_ = eig.eigenvectors() * lam.asDiagonal();
    residual_triangular_ = false;
  }

  void build_cholesky() const {
    const Matrix c = node_covariance();
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success) {
      Matrix jittered = c;
      jittered.diagonal().array() += 1e-12 * c.diagonal().maxCoeff();
      llt.compute(jittered);
      if (llt.info() != Eigen::Success) {
        throw numerical_error("fBm covariance matrix is not positive definite after jitter");
      }
    }
    cholesky_ = llt.matrixL();
  }

  HurstParam hurst_;
  TimeGrid grid_;
  Matrix weights_;
  Matrix density_;

  mutable std::once_flag residual_once_;
  mutable Matrix residual_;
  mutable bool residual_triangular_ = true;
  mutable std::once_flag cholesky_once_;
  mutable Matrix cholesky_;
};

// One fBm draw together with the Wiener increments that generated it.
// fbm = W * wiener_increments + residual, row by row.
struct FbmBundle {
  SamplePath fbm;
  Matrix wiener_increments;  // n x d, each row ~ N(0, dt Id)
  Matrix residual;           // (n+1) x d, independent of wiener_increments
};

// Exact Gaussian sampler through the Cholesky factor of the node covariance.
inline std::vector<SamplePath> sample_cholesky(HurstParam H, TimeGrid grid, std::size_t dim, std::size_t n_paths,
                                               std::uint64_t seed, Exec exec = {}, std::uint64_t first_path = 0) {
  if (n_paths == 0) throw std::invalid_argument("n_paths must be at least 1");
  if (dim == 0) throw std::invalid_argument("dimension must be at least 1");
  const auto op = VolterraOperator::get(H, grid);
  const Matrix& chol = op->covariance_factor();
  const auto n = static_cast<Eigen::Index>(grid.steps());

  std::vector<SamplePath> out(n_paths, SamplePath(grid, dim));
  parallel_for(n_paths, exec.workers, [&](std::size_t i) {
    NormalStream normal(seed, first_path + i, Stream::cholesky);
    Matrix xi(n, static_cast<Eigen::Index>(dim));
    for (Eigen::Index c = 0; c < xi.cols(); ++c) {
      for (Eigen::Index k = 0; k < n; ++k) xi(k, c) = normal();
    }
    out[i].values.bottomRows(n).noalias() = chol.triangularView<Eigen::Lower>() * xi;
  });
  return out;
}

// Volterra sampler: B_{t_k} = sum_{j<k} W(k, j) dW_j + residual_k.
inline void sample_volterra_into(const VolterraOperator& op, std::size_t dim, std::uint64_t seed, std::uint64_t path,
                                 FbmBundle& out) {
  const TimeGrid& grid = op.grid();
  const auto n = static_cast<Eigen::Index>(grid.steps());
  const auto d = static_cast<Eigen::Index>(dim);
  const double sqdt = std::sqrt(grid.dt());

  out.wiener_increments.resize(n, d);
  NormalStream wiener(seed, path, Stream::wiener);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index c = 0; c < d; ++c) out.wiener_increments(k, c) = sqdt * wiener();
  }

  Matrix xi(n, d);
  NormalStream extra(seed, path, Stream::residual);
  for (Eigen::Index c = 0; c < d; ++c) {
    for (Eigen::Index k = 0; k < n; ++k) xi(k, c) = extra();
  }
  out.residual.setZero(n + 1, d);
  if (op.residual_is_triangular()) {
    out.residual.bottomRows(n).noalias() = op.residual_factor().triangularView<Eigen::Lower>() * xi;
  } else {
    out.residual.bottomRows(n).noalias() = op.residual_factor() * xi;
  }

  out.fbm.values.resize(n + 1, d);
  out.fbm.values.row(0).setZero();
  out.fbm.values.bottomRows(n).noalias() =
      op.weights().bottomRows(n).triangularView<Eigen::Lower>() * out.wiener_increments;
  out.fbm.values.bottomRows(n) += out.residual.bottomRows(n);
}

inline std::vector<FbmBundle> sample_volterra(HurstParam H, TimeGrid grid, std::size_t dim, std::size_t n_paths,
                                              std::uint64_t seed, Exec exec = {}, std::uint64_t first_path = 0) {
  if (n_paths == 0) throw std::invalid_argument("n_paths must be at least 1");
  if (dim == 0) throw std::invalid_argument("dimension must be at least 1");
  const auto op = VolterraOperator::get(H, grid);
  op->residual_factor();
  std::vector<FbmBundle> out(n_paths, FbmBundle{SamplePath(grid, dim), Matrix(), Matrix()});
  parallel_for(n_paths, exec.workers,
               [&](std::size_t i) { sample_volterra_into(*op, dim, seed, first_path + i, out[i]); });
  return out;
}

// fbm recomputed from the stored increments and residual.
inline SamplePath volterra_map(const VolterraOperator& op, const Matrix& wiener_increments, const Matrix& residual) {
  const auto n = static_cast<Eigen::Index>(op.grid().steps());
  SamplePath path(op.grid(), static_cast<std::size_t>(wiener_increments.cols()));
  path.values.bottomRows(n).noalias() = op.weights().bottomRows(n) * wiener_increments;
  path.values += residual;
  return path;
}

}  // namespace fracmv
