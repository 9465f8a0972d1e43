#include "fracmv/asymptotics.hpp"
#include "fracmv/mc_lab.hpp"
#include "fracmv/rng.hpp"
#include "test_support.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <gtest/gtest.h>

#include <cmath>

using namespace fracmv;

namespace {

Vector scalar(double x) { return Vector::Constant(1, x); }

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  NormalStream z(seed, 0, Stream::auxiliary);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * z();
  }
  return m;
}

// Control whose L2 norm is rescaled so that 1/2 ||g||^2 = cost.
ControlL2 control_with_cost(TimeGrid g, std::size_t d, std::uint64_t seed, double cost) {
  ControlL2 c(g, random_matrix(g.steps(), d, seed));
  c.g *= std::sqrt(2.0 * cost / h_norm_sq(c));
  return c;
}

std::vector<double> column(const Matrix& m, Eigen::Index c = 0) {
  return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

}  // namespace

TEST(SkeletonLdp, ZeroControlGivesLimit) {
  const ModelPtr m = ex_clt_sine_model(2, -1.0, 1.0, 0.1, 1.0);
  const TimeGrid g(1.0, 128);
  const Vector x0 = Vector::Constant(2, 0.8);
  const SkeletonSolution s = skeleton_ldp(*m, HurstParam(0.75), x0, ControlL2(g, 2));
  EXPECT_TRUE(s.path.values == limit_ode(*m, x0, g).values);
  EXPECT_EQ(s.cost, 0.0);
}

TEST(SkeletonLdp, PureNoiseIsCameronMartinPath) {
  const HurstParam H(0.7);
  const TimeGrid g(1.0, 128);
  const ControlL2 c = control_with_cost(g, 2, 3, 0.7);
  const Vector x0 = Vector::Constant(2, -0.3);
  const SkeletonSolution s = skeleton_ldp(*pure_noise_model(2, 1.0), H, x0, c);
  const Matrix expect = rh_density(H, c).values.rowwise() + x0.transpose();
  EXPECT_LT((s.path.values - expect).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_NEAR(s.cost, 0.7, 1e-12);
}

TEST(SkeletonLdp, StaysBelowAPrioriBound) {
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 128);
  const Vector x0 = scalar(1.0);
  for (const auto& m : {linear_meanfield_model(1, -1.0, 0.1, 1.0), ex_clt_sine_model(1, -1.0, 1.0, 0.1, 1.0)}) {
    const double M = 1.0;
    const double bound = skeleton_gronwall_bound(*m, H, x0, g, 2.0 * M);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      // costs spread over (0, M]
      const ControlL2 c = control_with_cost(g, 1, 100 + seed, M * static_cast<double>(seed + 1) / 20.0);
      const SkeletonSolution s = skeleton_ldp(*m, H, x0, c);
      EXPECT_LE(std::pow(s.path.sup_norm(), 2), bound) << m->name() << " seed=" << seed;
    }
  }
}

TEST(SkeletonMdp, ZeroControlIsZero) {
  const TimeGrid g(1.0, 64);
  const SkeletonSolution s = skeleton_mdp(*ex_clt_sine_model(1, -1.0, 1.0, 0.1, 1.0), HurstParam(0.75), scalar(1.0),
                                          ControlL2(g, 1));
  EXPECT_TRUE(s.path.values.isZero(0.0));
}

TEST(SkeletonMdp, VariationOfConstants) {
  // g = 1 on [0, 1] has u(s) = C_H B(1-p, p) s^p, p = H - 1/2.
  const double h = 0.75, beta = -0.7, p = h - 0.5;
  const HurstParam H(h);
  const double amp = c_h(H) * boost::math::beta(1.0 - p, p);
  const double ref = fracmv::testing::integrate(
      [&](double s) { return std::exp(beta * (1.0 - s)) * amp * std::pow(s, p); }, 0.0, 1.0, 64);
  const TimeGrid g(1.0, 1024);
  const SkeletonSolution s =
      skeleton_mdp(*ex_clt_sine_model(1, beta, 0.0, 0.0, 1.0), H, scalar(1.0), ControlL2(g, Matrix::Ones(1024, 1)));
  EXPECT_NEAR(s.path.values(1024, 0), ref, 1e-3);
}

TEST(SkeletonMdp, Linear) {
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 64);
  const ModelPtr m = ex_clt_sine_model(2, -1.0, 1.0, 0.2, 1.0);
  const ControlL2 c(g, random_matrix(64, 2, 5));
  const SkeletonSolution a = skeleton_mdp(*m, H, Vector::Ones(2), c);
  const SkeletonSolution b = skeleton_mdp(*m, H, Vector::Ones(2), ControlL2(g, -2.5 * c.g));
  EXPECT_LT((b.path.values + 2.5 * a.path.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SkeletonMdp, NeedsDerivatives) {
  struct Bare : CoefficientModel {
    std::string n = "bare";
    const std::string& name() const override { return n; }
    std::size_t dim() const override { return 1; }
    Vector b(double, const Vector& x, const EmpiricalMeasure&) const override { return -x; }
    Matrix sigma(double, const EmpiricalMeasure&) const override { return Matrix::Identity(1, 1); }
    double lip_K(double) const override { return 2.0; }
  } bare;
  const TimeGrid g(1.0, 16);
  EXPECT_THROW(skeleton_mdp(bare, HurstParam(0.75), scalar(1.0), ControlL2(g, 1)), unsupported_error);
  EXPECT_THROW(rate_endpoint(bare, HurstParam(0.75), scalar(1.0), g, 1.0, Regime::mdp), unsupported_error);
}

TEST(RateLdpPath, LimitHasZeroCost) {
  const ModelPtr m = ex_clt_sine_model(1, -1.0, 1.0, 0.1, 1.0);
  const TimeGrid g(1.0, 128);
  EXPECT_NEAR(rate_ldp_path(*m, HurstParam(0.75), scalar(1.0), limit_ode(*m, scalar(1.0), g)), 0.0, 1e-20);
}

TEST(RateLdpPath, RoundTrip) {
  const TimeGrid g(1.0, 256);
  const Vector x0 = Vector::Constant(2, 0.5);
  for (const auto& m : {pure_noise_model(2, 1.3), linear_meanfield_model(2, -1.0, 0.1, 1.0),
                        ex_clt_sine_model(2, -1.0, 1.0, 0.1, 0.8)}) {
    for (double h : {0.6, 0.75, 0.9}) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ControlL2 c(g, random_matrix(256, 2, 7 + seed, 0.5));
        const SkeletonSolution s = skeleton_ldp(*m, HurstParam(h), x0, c);
        const double rate = rate_ldp_path(*m, HurstParam(h), x0, s.path);
        EXPECT_NEAR(rate / s.cost, 1.0, 1e-6) << m->name() << " H=" << h;
      }
    }
  }
}

TEST(RateLdpPath, WrongStartIsInfinite) {
  const ModelPtr m = pure_noise_model(1, 1.0);
  SamplePath f(TimeGrid(1.0, 16), 1);
  f.values.setConstant(0.5);
  EXPECT_TRUE(std::isinf(rate_ldp_path(*m, HurstParam(0.75), scalar(0.0), f)));
}

TEST(RateLdpPath, SingularSigmaUnsupported) {
  const ModelPtr m = pure_noise_model(1, 0.0);
  const SamplePath f(TimeGrid(1.0, 16), 1);
  EXPECT_THROW(rate_ldp_path(*m, HurstParam(0.75), scalar(0.0), f), unsupported_error);
}

TEST(RateEndpoint, PureNoiseClosedForm) {
  const double h = 0.75;
  for (double sigma : {0.5, 1.0, 2.0}) {
    for (double T : {0.5, 1.0, 2.0}) {
      for (double a : {0.3, 1.0, 2.5}) {
        const double exact = a * a / (2.0 * sigma * sigma * std::pow(T, 2.0 * h));
        for (Regime r : {Regime::ldp, Regime::mdp}) {
          const double v = rate_endpoint(*pure_noise_model(1, sigma), HurstParam(h), scalar(0.0), TimeGrid(T, 256), a, r);
          EXPECT_NEAR(v / exact, 1.0, 0.02) << "sigma=" << sigma << " T=" << T << " a=" << a;
        }
      }
    }
  }
  EXPECT_NEAR(rate_endpoint(*pure_noise_model(1, 1.0), HurstParam(h), scalar(0.0), TimeGrid(1.0, 256), 1.0, Regime::ldp),
              0.5, 0.01);
}

TEST(RateEndpoint, ZeroAndQuadraticScaling) {
  const ModelPtr m = ex_clt_sine_model(1, -1.0, 1.0, 0.1, 1.0);
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 128);
  EXPECT_EQ(rate_endpoint(*m, H, scalar(1.0), g, 0.0, Regime::mdp), 0.0);
  const double r1 = rate_endpoint(*m, H, scalar(1.0), g, 0.7, Regime::mdp);
  EXPECT_NEAR(rate_endpoint(*m, H, scalar(1.0), g, 1.4, Regime::mdp), 4.0 * r1, 1e-8 * r1);
}

TEST(RateEndpoint, MinimizerHitsLevel) {
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 128);
  const Vector x0 = Vector::Constant(2, 1.0);
  const ModelPtr lin = linear_meanfield_model(2, -1.0, 0.1, 1.0);
  const EndpointRate e = solve_endpoint_rate(*lin, H, x0, g, 0.9, Regime::ldp, 1);
  const SkeletonSolution s = skeleton_ldp(*lin, H, x0, e.minimizer);
  const SamplePath x_lim = limit_ode(*lin, x0, g);
  EXPECT_NEAR(s.path.values(128, 1) - x_lim.values(128, 1), 0.9, 1e-12);
  EXPECT_NEAR(s.cost, e.value, 1e-12);

  const ModelPtr nl = ex_clt_sine_model(2, -1.0, 1.0, 0.1, 1.0);
  const EndpointRate em = solve_endpoint_rate(*nl, H, x0, g, -0.4, Regime::mdp, 0);
  EXPECT_NEAR(skeleton_mdp(*nl, H, x0, em.minimizer).path.values(128, 0), -0.4, 1e-12);
}

TEST(RateEndpoint, MinimizerIsOptimal) {
  // any other control reaching the level costs more
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 64);
  const ModelPtr m = ex_clt_sine_model(1, -1.0, 1.0, 0.1, 1.0);
  const EndpointRate e = solve_endpoint_rate(*m, H, scalar(1.0), g, 1.0, Regime::mdp);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ControlL2 c(g, random_matrix(64, 1, 50 + seed));
    const double reach = skeleton_mdp(*m, H, scalar(1.0), c).path.values(64, 0);
    c.g *= 1.0 / reach;
    EXPECT_GE(0.5 * h_norm_sq(c), e.value * (1.0 - 1e-12));
  }
}

TEST(RateEndpoint, ConvexInLevel) {
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 64);
  const ModelPtr m = ex_clt_sine_model(1, -1.0, 1.0, 0.1, 1.0);
  const double step = 0.1;
  for (double a = -2.0; a <= 2.0; a += 0.25) {
    const double d2 = rate_endpoint(*m, H, scalar(1.0), g, a + step, Regime::mdp) -
                      2.0 * rate_endpoint(*m, H, scalar(1.0), g, a, Regime::mdp) +
                      rate_endpoint(*m, H, scalar(1.0), g, a - step, Regime::mdp);
    EXPECT_GE(d2, -1e-8);
  }
}

TEST(RateEndpoint, LdpNeedsAffineDrift) {
  EXPECT_THROW(rate_endpoint(*ex_clt_sine_model(1, -1.0, 1.0, 0.1, 1.0), HurstParam(0.75), scalar(1.0),
                             TimeGrid(1.0, 32), 1.0, Regime::ldp),
               unsupported_error);
}

TEST(RateEndpoint, AffineLdpEqualsMdp) {
  const ModelPtr m = linear_meanfield_model(1, -1.0, 0.1, 1.0);
  const TimeGrid g(1.0, 64);
  const double l = rate_endpoint(*m, HurstParam(0.75), scalar(1.0), g, 0.8, Regime::ldp);
  EXPECT_DOUBLE_EQ(l, rate_endpoint(*m, HurstParam(0.75), scalar(1.0), g, 0.8, Regime::mdp));
}

TEST(CltLimit, MeanPathIsZero) {
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 64);
  const ModelPtr m = ex_clt_sine_model(1, -1.0, 1.0, 0.1, 1.0);
  auto bundles = std::make_shared<const std::vector<FbmBundle>>(sample_volterra(H, g, 1, 4000, 7));
  const CltEnsemble z = clt_limit(*m, H, scalar(1.0), bundles);
  EXPECT_TRUE(z.mean_path.values.isZero(0.0));
  for (std::size_t k = 1; k <= 64; ++k) {
    const MomentEstimate est = mean_and_se(column(z.clouds[k]));
    EXPECT_LE(std::abs(est.mean), 5.0 * est.se) << "k=" << k;
  }
}

TEST(CltLimit, OrnsteinUhlenbeckVariance) {
  const HurstParam H(0.75);
  const std::size_t n = 64;
  const TimeGrid g(1.0, n);
  auto bundles = std::make_shared<const std::vector<FbmBundle>>(sample_volterra(H, g, 1, 4000, 8));
  const CltEnsemble z = clt_limit(*ex_clt_sine_model(1, -1.0, 0.0, 0.0, 1.0), H, scalar(1.0), bundles);
  // Z_T = sum_k (1 - dt)^{n-1-k} dB_k; its variance is the H-inner product of that step function
  CellFunction psi(g, 1);
  for (std::size_t k = 0; k < n; ++k) psi.values(static_cast<Eigen::Index>(k), 0) = std::pow(1.0 - g.dt(), n - 1 - k);
  const double var = h_inner_weighted(H, psi, psi);
  std::vector<double> sq;
  for (double x : column(z.clouds[n])) sq.push_back(x * x);
  const MomentEstimate est = mean_and_se(sq);
  EXPECT_LE(std::abs(est.mean - var), 5.0 * est.se);
}

TEST(CltLimit, LinearInNoise) {
  // for the linear model Z is an exact linear map of the bundle
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 32);
  auto bundles = sample_volterra(H, g, 1, 2, 9);
  std::vector<FbmBundle> scaled = bundles;
  for (auto& b : scaled) b.fbm.values *= 3.0;
  const ModelPtr m = linear_meanfield_model(1, -1.0, 0.1, 1.0);
  const CltEnsemble a = clt_limit(*m, H, scalar(1.0), std::make_shared<const std::vector<FbmBundle>>(bundles));
  const CltEnsemble b = clt_limit(*m, H, scalar(1.0), std::make_shared<const std::vector<FbmBundle>>(scaled));
  EXPECT_LT((b.clouds[32] - 3.0 * a.clouds[32]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kappa, RescalingFactor) {
  const MdpConfig cfg;
  const HurstParam H(0.75);
  for (double eps : cfg.eps_list) {
    EXPECT_NEAR(std::pow(eps, 0.75) * cfg.kappa(eps, H), std::pow(eps, 0.375), 1e-15);
  }
}

TEST(Kappa, ShippedChoicesAdmissible) {
  const HurstParam H(0.75);
  EXPECT_TRUE((MdpConfig{KappaKind::eps_pow_half_h, {0.4, 0.2, 0.1, 0.05}}.admissible(H)));
  EXPECT_TRUE((MdpConfig{KappaKind::eps_pow_quarter_h, {0.4, 0.2, 0.1, 0.05}}.admissible(H)));
  // eps^H log(1/eps) still grows on the default ladder; it only decreases for small eps
  EXPECT_FALSE((MdpConfig{KappaKind::log_inverse, {0.4, 0.2, 0.1, 0.05}}.admissible(H)));
  EXPECT_TRUE((MdpConfig{KappaKind::log_inverse, {0.1, 0.01, 0.001}}.admissible(H)));
  EXPECT_FALSE((MdpConfig{KappaKind::eps_pow_half_h, {0.1, 0.2}}.admissible(H)));
  EXPECT_EQ(to_string(KappaKind::log_inverse), "log(1/eps)");
}

TEST(MdpPaths, PureNoiseVariance) {
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 64);
  const double sigma = 1.2, eps = 0.1;
  const MdpConfig cfg;
  const EnsembleResult y = mdp_paths(pure_noise_model(1, sigma), H, scalar(0.0), eps, cfg, g, 4000, 3);
  std::vector<double> sq;
  for (double x : column(y.clouds[64])) sq.push_back(x * x);
  const MomentEstimate est = mean_and_se(sq);
  const double k = cfg.kappa(eps, H);
  EXPECT_LE(std::abs(est.mean - sigma * sigma / (k * k)), 5.0 * est.se);
}

TEST(MdpPaths, MatchesSkeletonGaussianLaw) {
  const HurstParam H(0.75);
  const TimeGrid g(1.0, 128);
  const double eps = 0.05;
  const MdpConfig cfg;
  const ModelPtr m = linear_meanfield_model(1, -1.0, 0.1, 1.0);
  const EnsembleResult y = mdp_paths(m, H, scalar(1.0), eps, cfg, g, 2000, 4);
  // endpoint rate a^2 / (2 v) identifies the variance v of the linearized endpoint
  const double v = 1.0 / (2.0 * rate_endpoint(*m, H, scalar(1.0), g, 1.0, Regime::mdp));
  const double k = cfg.kappa(eps, H);
  const MomentEstimate s = mean_and_se(column(y.clouds[128]));
  std::vector<double> sq;
  for (double x : column(y.clouds[128])) sq.push_back((x - s.mean) * (x - s.mean));
  const double ratio = mean_and_se(sq).mean / (v / (k * k));
  EXPECT_GT(ratio, 0.8);
  EXPECT_LT(ratio, 1.25);
}

TEST(MdpPaths, RejectsZeroEps) {
  EXPECT_THROW(mdp_paths(pure_noise_model(1, 1.0), HurstParam(0.75), scalar(0.0), 0.0, MdpConfig{}, TimeGrid(1.0, 16),
                         4, 1),
               std::domain_error);
}
