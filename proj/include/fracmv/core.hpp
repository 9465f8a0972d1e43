#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fracmv {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error taxonomy. The CLI maps usage_error to exit code 2 and
// numerical_error (and subclasses) to exit code 3.
struct usage_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct divergence_error : numerical_error {
  divergence_error(const std::string& what, std::size_t step_index)
      : numerical_error(what + " (step " + std::to_string(step_index) + ")"), step(step_index) {}
  std::size_t step;
};

struct unsupported_error : std::logic_error {
  using std::logic_error::logic_error;
};

// Hurst index restricted to the open interval (1/2, 1).
class HurstParam {
 public:
  explicit HurstParam(double h) : h_(h) {
    if (!(h > 0.5 && h < 1.0)) {
      throw std::domain_error("Hurst parameter must lie in the open interval (1/2, 1), got " +
                              std::to_string(h));
    }
  }
  double value() const noexcept { return h_; }
  operator double() const noexcept { return h_; }

 private:
  double h_;
};

// Uniform partition t_k = k T / n of [0, T].
class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t n_steps) : T_(horizon), n_(n_steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
      throw std::domain_error("time horizon must be positive and finite");
    }
    if (n_steps == 0) throw std::domain_error("time grid needs at least one step");
  }

  double horizon() const noexcept { return T_; }
  std::size_t steps() const noexcept { return n_; }
  std::size_t nodes() const noexcept { return n_ + 1; }
  double dt() const noexcept { return T_ / static_cast<double>(n_); }
  double node(std::size_t k) const noexcept {
    return k == n_ ? T_ : T_ * static_cast<double>(k) / static_cast<double>(n_);
  }
  double midpoint(std::size_t j) const noexcept { return (node(j) + node(j + 1)) * 0.5; }

  // Index of the node equal to t (within a relative 1e-9 of the spacing).
  std::size_t node_index(double t) const {
    const double x = t / dt();
    const double k = std::round(x);
    if (k < 0 || k > static_cast<double>(n_) || std::abs(x - k) > 1e-9) {
      throw std::domain_error("time " + std::to_string(t) + " is not a grid node");
    }
    return static_cast<std::size_t>(k);
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
    return a.T_ == b.T_ && a.n_ == b.n_;
  }

 private:
  double T_;
  std::size_t n_;
};

// d-dimensional path sampled at the n+1 grid nodes; row k is the state at t_k.
struct SamplePath {
  SamplePath(TimeGrid g, std::size_t d) : grid(g), values(Matrix::Zero(g.nodes(), d)) {}
  SamplePath(TimeGrid g, Matrix v) : grid(g), values(std::move(v)) {
    if (static_cast<std::size_t>(values.rows()) != grid.nodes()) {
      throw std::invalid_argument("path must have one row per grid node");
    }
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(values.cols()); }
  Vector at(std::size_t k) const { return values.row(static_cast<Eigen::Index>(k)).transpose(); }
  double sup_norm() const {
    double s = 0.0;
    for (Eigen::Index k = 0; k < values.rows(); ++k) s = std::max(s, values.row(k).norm());
    return s;
  }

  TimeGrid grid;
  Matrix values;
};

// d-dimensional function that is constant on each grid cell [t_j, t_{j+1}); row j is the cell value.
struct CellFunction {
  CellFunction(TimeGrid g, std::size_t d) : grid(g), values(Matrix::Zero(g.steps(), d)) {}
  CellFunction(TimeGrid g, Matrix v) : grid(g), values(std::move(v)) {
    if (static_cast<std::size_t>(values.rows()) != grid.steps()) {
      throw std::invalid_argument("cell function must have one row per grid cell");
    }
  }

  // Cell average of a node-sampled path under linear interpolation.
  static CellFunction from_path(const SamplePath& p) {
    const auto n = static_cast<Eigen::Index>(p.grid.steps());
    Matrix v = 0.5 * (p.values.topRows(n) + p.values.bottomRows(n));
    return CellFunction(p.grid, std::move(v));
  }

  // I_{[0,t]} e_i, with t a grid node.
  static CellFunction indicator(TimeGrid g, double t, std::size_t d = 1, std::size_t coord = 0) {
    CellFunction f(g, d);
    const std::size_t k = g.node_index(t);
    f.values.block(0, static_cast<Eigen::Index>(coord), static_cast<Eigen::Index>(k), 1).setOnes();
    return f;
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(values.cols()); }
  double l2_norm_sq() const { return values.squaredNorm() * grid.dt(); }

  TimeGrid grid;
  Matrix values;
};

// Runs fn(i) for i in [0, count) on up to `workers` threads. Each index is
// visited exactly once, so results are schedule independent as long as fn(i)
// only writes state owned by i.
template <typename Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
  if (workers <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t w = std::min<std::size_t>(workers, count);
  const std::size_t chunk = (count + w - 1) / w;
  std::vector<std::exception_ptr> errors(w);
  {
    std::vector<std::jthread> pool;
    pool.reserve(w);
    for (std::size_t t = 0; t < w; ++t) {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(count, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([lo, hi, t, &fn, &errors] {
        try {
          for (std::size_t i = lo; i < hi; ++i) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  // Lowest chunk wins so the reported failure matches a serial run.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Execution knobs that never influence results.
struct Exec {
  unsigned workers = 1;
};

}  // namespace fracmv
