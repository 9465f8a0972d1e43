#pragma once

#include "fracmv/core.hpp"
#include "fracmv/measure.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace fracmv {

// Drift b(t, x, mu) and diffusion sigma(t, mu) of a distribution-dependent SDE.
// sigma never depends on the state.
class CoefficientModel {
 public:
  virtual ~CoefficientModel() = default;

  virtual const std::string& name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual Vector b(double t, const Vector& x, const EmpiricalMeasure& mu) const = 0;
  virtual Matrix sigma(double t, const EmpiricalMeasure& mu) const = 0;

  virtual bool has_derivatives() const { return false; }
  // \nabla b(t, ., mu)(x)
  virtual Matrix grad_b(double, const Vector&, const EmpiricalMeasure&) const {
    throw unsupported_error("model '" + name() + "' does not provide grad_b");
  }
  // D^L b(t, x, .)(mu)(y)
  virtual Matrix lions_b(double, const Vector&, const EmpiricalMeasure&, const Vector&) const {
    throw unsupported_error("model '" + name() + "' does not provide the Lions derivative");
  }

  // True when x -> b(t, x, mu) is affine for every fixed (t, mu).
  virtual bool affine_drift() const { return false; }

  // Lipschitz/growth bound K(t), non-decreasing.
  virtual double lip_K(double t) const = 0;
  virtual double holder_sigma_exponent() const { return 1.0; }
  virtual double wasserstein_order() const { return 2.0; }

  // out.row(i) = b(t, x.row(i), mu). Override when the measure part can be hoisted.
  virtual void drift_rows(double t, const Matrix& x, const EmpiricalMeasure& mu, Matrix& out) const {
    out.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = b(t, x.row(i).transpose(), mu).transpose();
  }
};

using ModelPtr = std::shared_ptr<const CoefficientModel>;

// b(t, x, mu) = f(t, x + \int phi dmu) with constant sigma.
class ExCltModel final : public CoefficientModel {
 public:
  using VecFn = std::function<Vector(double, const Vector&)>;
  using MatFn = std::function<Matrix(double, const Vector&)>;
  using PhiFn = std::function<Vector(const Vector&)>;
  using GradPhiFn = std::function<Matrix(const Vector&)>;

  struct Spec {
    std::string name = "ex_clt";
    std::size_t dim = 1;
    VecFn f;
    MatFn grad_f;
    PhiFn phi;        // empty means phi == 0
    GradPhiFn grad_phi;
    Matrix sigma;     // d x d
    double lip_f = 0.0;
    double lip_phi = 0.0;
    bool affine = false;
    std::optional<double> linear_f;    // set when f(t, y) = beta y, enables a vectorized drift
    std::optional<double> linear_phi;  // set when phi(u) = alpha u
  };

  explicit ExCltModel(Spec spec) : s_(std::move(spec)) {
    if (s_.dim == 0) throw std::invalid_argument("model dimension must be positive");
    if (!s_.f || !s_.grad_f) throw std::invalid_argument("ex_clt model needs f and grad_f");
    if (s_.phi && !s_.grad_phi) throw std::invalid_argument("ex_clt model needs grad_phi alongside phi");
    const auto d = static_cast<Eigen::Index>(s_.dim);
    if (s_.sigma.rows() != d || s_.sigma.cols() != d) throw std::invalid_argument("sigma must be d x d");
    sigma_norm_ = Eigen::JacobiSVD<Matrix>(s_.sigma).singularValues()(0);
  }

  const std::string& name() const override { return s_.name; }
  std::size_t dim() const override { return s_.dim; }

  Vector b(double t, const Vector& x, const EmpiricalMeasure& mu) const override {
    return s_.f(t, x + shift(mu));
  }
  Matrix sigma(double, const EmpiricalMeasure&) const override { return s_.sigma; }

  bool has_derivatives() const override { return true; }
  Matrix grad_b(double t, const Vector& x, const EmpiricalMeasure& mu) const override {
    return s_.grad_f(t, x + shift(mu));
  }
  Matrix lions_b(double t, const Vector& x, const EmpiricalMeasure& mu, const Vector& y) const override {
    if (!s_.phi) return Matrix::Zero(x.size(), x.size());
    return s_.grad_f(t, x + shift(mu)) * s_.grad_phi(y);
  }

  bool affine_drift() const override { return s_.affine; }
  bool measure_free() const { return !s_.phi; }

  // |b(t,x,mu) - b(t,y,nu)| <= L_f (|x-y| + L_phi W_1) and |b(t,0,delta_0)| + ||sigma|| give K.
  double lip_K(double t) const override {
    const auto d = static_cast<Eigen::Index>(s_.dim);
    const Vector origin = Vector::Zero(d);
    const Vector phi0 = s_.phi ? s_.phi(origin) : origin;
    const double growth = s_.f(t, phi0).norm() + sigma_norm_;
    return std::max(s_.lip_f * std::max(1.0, s_.lip_phi), growth);
  }

  void drift_rows(double t, const Matrix& x, const EmpiricalMeasure& mu, Matrix& out) const override {
    const Vector c = shift(mu);
    out.resize(x.rows(), x.cols());
    if (s_.linear_f) {
      const double beta = *s_.linear_f;
      if (beta == 0.0) {
        out.setZero();
      } else {
        out = beta * (x.rowwise() + c.transpose());
      }
      return;
    }
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = s_.f(t, x.row(i).transpose() + c).transpose();
  }

 private:
  Vector shift(const EmpiricalMeasure& mu) const {
    if (!s_.phi) return Vector::Zero(static_cast<Eigen::Index>(s_.dim));
    if (s_.linear_phi) return *s_.linear_phi * mu.mean();
    return mu.average(s_.phi);
  }

  Spec s_;
  double sigma_norm_ = 0.0;
};

// Example family with user-supplied f, phi and gradients.
inline ModelPtr ex_clt_model(std::size_t dim, ExCltModel::VecFn f, ExCltModel::PhiFn phi, ExCltModel::MatFn grad_f,
                             ExCltModel::GradPhiFn grad_phi, Matrix sigma, double lip_f, double lip_phi,
                             bool affine = false) {
  ExCltModel::Spec s;
  s.dim = dim;
  s.f = std::move(f);
  s.phi = std::move(phi);
  s.grad_f = std::move(grad_f);
  s.grad_phi = std::move(grad_phi);
  s.sigma = std::move(sigma);
  s.lip_f = lip_f;
  s.lip_phi = lip_phi;
  s.affine = affine;
  return std::make_shared<ExCltModel>(std::move(s));
}

// b = 0, sigma = s Id.
inline ModelPtr pure_noise_model(std::size_t dim, double sigma) {
  ExCltModel::Spec s;
  s.name = "pure_noise";
  s.dim = dim;
  const auto d = static_cast<Eigen::Index>(dim);
  s.f = [d](double, const Vector&) { return Vector(Vector::Zero(d)); };
  s.grad_f = [d](double, const Vector&) { return Matrix(Matrix::Zero(d, d)); };
  s.sigma = sigma * Matrix::Identity(d, d);
  s.affine = true;
  s.linear_f = 0.0;
  return std::make_shared<ExCltModel>(std::move(s));
}

// f(y) = beta y + gamma sin(y) componentwise, phi(u) = alpha u, sigma = s Id.
inline ModelPtr ex_clt_sine_model(std::size_t dim, double beta, double gamma, double alpha, double sigma,
                                  std::string name = "ex_clt") {
  ExCltModel::Spec s;
  s.name = std::move(name);
  s.dim = dim;
  const auto d = static_cast<Eigen::Index>(dim);
  if (gamma == 0.0) {
    s.f = [beta](double, const Vector& y) { return Vector(beta * y); };
    s.grad_f = [beta, d](double, const Vector&) { return Matrix(beta * Matrix::Identity(d, d)); };
    s.linear_f = beta;
  } else {
    s.f = [beta, gamma](double, const Vector& y) { return Vector(beta * y + gamma * y.array().sin().matrix()); };
    s.grad_f = [beta, gamma](double, const Vector& y) {
      return Matrix((beta + gamma * y.array().cos()).matrix().asDiagonal());
    };
  }
  if (alpha != 0.0) {
    s.phi = [alpha](const Vector& u) { return Vector(alpha * u); };
    s.grad_phi = [alpha, d](const Vector&) { return Matrix(alpha * Matrix::Identity(d, d)); };
    s.linear_phi = alpha;
  }
  s.sigma = sigma * Matrix::Identity(d, d);
  s.lip_f = std::abs(beta) + std::abs(gamma);
  s.lip_phi = std::abs(alpha);
  s.affine = gamma == 0.0;
  return std::make_shared<ExCltModel>(std::move(s));
}

// b = beta (x + alpha mean(mu)), sigma = s Id.
inline ModelPtr linear_meanfield_model(std::size_t dim, double beta, double alpha, double sigma) {
  return ex_clt_sine_model(dim, beta, 0.0, alpha, sigma, "linear_meanfield");
}

}  // namespace fracmv
