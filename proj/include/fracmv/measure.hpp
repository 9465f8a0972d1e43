#pragma once

#include "fracmv/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace fracmv {

// Equal-weight atoms, one per row.
class EmpiricalMeasure {
 public:
  explicit EmpiricalMeasure(Matrix atoms) : atoms_(std::move(atoms)) {
    if (atoms_.rows() == 0 || atoms_.cols() == 0) throw std::invalid_argument("empirical measure needs atoms");
  }

  static EmpiricalMeasure dirac(const Vector& x) { return EmpiricalMeasure(Matrix(x.transpose())); }

  std::size_t size() const noexcept { return static_cast<std::size_t>(atoms_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(atoms_.cols()); }
  const Matrix& atoms() const noexcept { return atoms_; }

  // Running mean: identical atoms give back that atom bit for bit.
  Vector mean() const {
    Vector m = atoms_.row(0).transpose();
    for (Eigen::Index i = 1; i < atoms_.rows(); ++i) {
      m += (atoms_.row(i).transpose() - m) / static_cast<double>(i + 1);
    }
    return m;
  }

  // \int phi dmu with the same running-mean rule.
  template <typename Fn>
  Vector average(Fn&& phi) const {
    Vector m = phi(Vector(atoms_.row(0).transpose()));
    for (Eigen::Index i = 1; i < atoms_.rows(); ++i) {
      m += (phi(Vector(atoms_.row(i).transpose())) - m) / static_cast<double>(i + 1);
    }
    return m;
  }

 private:
  Matrix atoms_;
};

namespace detail {

// Minimum-cost perfect assignment on a square cost matrix (shortest augmenting
// path with potentials, O(n^3)). Returns col_of_row.
inline std::vector<Eigen::Index> hungarian(const Matrix& cost) {
  const Eigen::Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Eigen::Index> p(n + 1, 0), way(n + 1, 0);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Eigen::Index i0 = p[j0];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Eigen::Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Eigen::Index> col_of_row(n);
  for (Eigen::Index j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

}  // namespace detail

// W_theta between two equal-weight clouds (rows are points). d = 1 uses the
// quantile coupling for arbitrary sizes; d > 1 solves the assignment problem.
inline double empirical_wasserstein(const Matrix& a, const Matrix& b, double theta = 2.0) {
  if (!(theta >= 1.0)) throw std::invalid_argument("Wasserstein order must be >= 1");
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("Wasserstein distance needs nonempty clouds");
  if (a.cols() != b.cols()) throw std::invalid_argument("Wasserstein clouds must share dimension");

  if (a.cols() == 1) {
    std::vector<double> x(a.data(), a.data() + a.rows());
    std::vector<double> y(b.data(), b.data() + b.rows());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double na = static_cast<double>(x.size());
    const double nb = static_cast<double>(y.size());
    // Walk the merged quantile breakpoints i/na and j/nb.
    std::size_t i = 0, j = 0;
    double level = 0.0, acc = 0.0;
    while (i < x.size() && j < y.size()) {
      const double next_a = static_cast<double>(i + 1) / na;
      const double next_b = static_cast<double>(j + 1) / nb;
      const double next = std::min(next_a, next_b);
      acc += (next - level) * std::pow(std::abs(x[i] - y[j]), theta);
      level = next;
      if (next_a <= next) ++i;
      if (next_b <= next) ++j;
    }
    return std::pow(acc, 1.0 / theta);
  }

  if (a.rows() != b.rows() || a.rows() > 2048) {
    throw unsupported_error("multivariate Wasserstein estimator needs equal cloud sizes of at most 2048 atoms");
  }
  const Eigen::Index n = a.rows();
  Matrix cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = std::pow((a.row(i) - b.row(j)).norm(), theta);
  }
  const auto match = detail::hungarian(cost);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) acc += cost(i, match[static_cast<std::size_t>(i)]);
  return std::pow(acc / static_cast<double>(n), 1.0 / theta);
}

inline double empirical_wasserstein(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double theta = 2.0) {
  return empirical_wasserstein(a.atoms(), b.atoms(), theta);
}

}  // namespace fracmv
