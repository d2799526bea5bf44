#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "seki/coalescence.hpp"
#include "seki/ks.hpp"
#include "seki/parallel.hpp"
#include "seki/simulate.hpp"

using namespace seki;
using Index = Eigen::Index;

namespace {

IntegratorConfig config(double dt, double horizon, double spinup = 0.0) {
  IntegratorConfig c;
  c.dt = dt;
  c.horizon = horizon;
  c.spinup = spinup;
  return c;
}

Vector scalar(double v) { return Vector::Constant(1, v); }

double last(const Trajectory& t, Index k = 0) { return t.states(static_cast<Index>(t.size()) - 1, k); }

}  // namespace

TEST_CASE("integrator config is validated") {
  CHECK_THROWS_AS(config(0.0, 1.0).validate(), InvalidArgument);
  CHECK_THROWS_AS(config(0.1, 1.0, 1.0).validate(), InvalidArgument);
  CHECK_NOTHROW(config(0.1, 1.0, 0.5).validate());
  CHECK(config(0.1, 1.0).steps() == 10);
}

TEST_CASE("euler-maruyama") {
  SUBCASE("noise-free step is explicit euler") {
    const auto t = euler_maruyama([](const Vector& x, Vector& dx) { dx = -x; }, scalar(0.0), scalar(1.0),
                                  config(0.1, 0.1));
    CHECK(last(t) == doctest::Approx(0.9).epsilon(1e-14));
  }

  SUBCASE("pure noise has variance sigma T") {
    // Amplitude 2 per component gives variance 4 at T = 1.
    const int n = 100000;
    std::vector<double> end(n);
    parallel_for(n, [&](std::size_t i) {
      IntegratorConfig c = config(0.25, 1.0);
      c.seed = derive_seed(77, i);
      end[i] = last(euler_maruyama([](const Vector&, Vector& dx) { dx.setZero(); }, scalar(2.0),
                                   scalar(0.0), c));
    });
    double mean = 0.0, var = 0.0;
    for (double v : end) mean += v / n;
    for (double v : end) var += (v - mean) * (v - mean) / (n - 1);
    CHECK(std::abs(var - 4.0) < 0.1);
    CHECK(std::abs(mean) < 0.03);
  }

  SUBCASE("same seed gives identical paths") {
    IntegratorConfig c = config(1e-3, 2.0);
    c.seed = 5;
    auto rhs = [](const Vector& x, Vector& dx) { dx = -x; };
    const auto a = euler_maruyama(rhs, Vector::Constant(2, 1.0), Vector::Ones(2), c);
    const auto b = euler_maruyama(rhs, Vector::Constant(2, 1.0), Vector::Ones(2), c);
    CHECK(a.states == b.states);
    c.seed = 6;
    const auto d = euler_maruyama(rhs, Vector::Constant(2, 1.0), Vector::Ones(2), c);
    CHECK(a.states != d.states);
  }

  SUBCASE("divergence is reported with its time") {
    IntegratorConfig c = config(0.1, 100.0);
    c.blowup_threshold = 1e6;
    try {
      (void)euler_maruyama([](const Vector& x, Vector& dx) { dx = x.cwiseProduct(x); }, scalar(0.0),
                           scalar(1.0), c);
      FAIL("expected blow-up");
    } catch (const BlowUpError& e) {
      CHECK(e.time() > 0.0);
      CHECK(e.time() < 100.0);
    }
  }
}

TEST_CASE("rk4") {
  SUBCASE("exponential growth") {
    const auto t = rk4([](const Vector& x, Vector& dx) { dx = x; }, scalar(1.0), config(0.01, 1.0));
    CHECK(std::abs(last(t) / std::exp(1.0) - 1.0) < 1e-9);
  }

  SUBCASE("riccati decay matches 1 / (1 + t)") {
    auto rhs = [](const Vector& x, Vector& dx) { dx = -x.cwiseProduct(x); };
    const auto t = rk4(rhs, scalar(1.0), config(0.01, 1.0));
    CHECK(std::abs(last(t) - 0.5) < 1e-8);
  }

  SUBCASE("fourth-order convergence") {
    auto rhs = [](const Vector& x, Vector& dx) { dx = -x.cwiseProduct(x); };
    auto max_error = [&](double dt) {
      const auto t = rk4(rhs, scalar(1.0), config(dt, 2.0));
      double e = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i)
        e = std::max(e, std::abs(t.states(static_cast<Index>(i), 0) - 1.0 / (1.0 + t.times[i])));
      return e;
    };
    const double ratio = max_error(0.1) / max_error(0.05);
    CHECK(ratio > 13.0);
    CHECK(ratio < 19.0);
  }

  SUBCASE("sampling interval and spinup") {
    IntegratorConfig c = config(0.01, 2.0, 1.0);
    c.sample_interval = 0.1;
    const auto t = rk4([](const Vector& x, Vector& dx) { dx = -x; }, scalar(1.0), c);
    CHECK(t.sample_interval() == doctest::Approx(0.1));
    CHECK(t.times[t.spinup_index] == doctest::Approx(1.0));
    CHECK(t.window().size() == t.size() - t.spinup_index);
  }

  SUBCASE("clipping bounds the state") {
    IntegratorConfig c = config(0.01, 5.0);
    c.clip_bounds = std::pair{-2.0, 2.0};
    const auto t = rk4([](const Vector& x, Vector& dx) { dx = x; }, scalar(1.0), c);
    CHECK(t.states.maxCoeff() <= 2.0);
    CHECK(last(t) == 2.0);
  }
}

TEST_CASE("multiscale lorenz 96") {
  MultiscaleL96 m;
  m.K = 6;
  m.J = 4;

  SUBCASE("index wrap") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pick(-30, 30);
    for (int trial = 0; trial < 200; ++trial) {
      const int j = pick(rng), k = pick(rng);
      CHECK(m.fast_index(j + m.J, k) == m.fast_index(j, k + 1));
      CHECK(m.fast_index(j, k + m.K) == m.fast_index(j, k));
      CHECK(m.slow_index(k + m.K) == m.slow_index(k));
    }
  }

  SUBCASE("zero coupling decouples the slow variables") {
    m.h = 0.0;
    m.F = 8.0;
    Vector x0 = Vector::Constant(m.K, 8.0);
    x0(0) += 0.01;
    const Vector y0 = Vector::Constant(m.J * m.K, 0.1);
    IntegratorConfig c = config(1e-3, 2.0);
    c.sample_interval = 0.1;
    const auto slow = simulate_multiscale_l96(m, x0, y0, c);
    const auto single = rk4([](const Vector& x, Vector& dx) { lorenz96_rhs(x, 8.0, dx); }, x0, c);
    CHECK((slow.states - single.states).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("fast variables oscillate faster at larger time-scale separation") {
    auto crossings = [&](double c_sep) {
      MultiscaleL96 mm = m;
      mm.c = c_sep;
      std::mt19937_64 rng(1);
      std::normal_distribution<double> normal(0.0, 0.5);
      Vector y0(mm.J * mm.K);
      for (Index i = 0; i < y0.size(); ++i) y0(i) = normal(rng);
      IntegratorConfig c = config(5e-4, 5.0);
      Trajectory fast;
      (void)simulate_multiscale_l96(mm, Vector::Constant(mm.K, 5.0), y0, c, &fast);
      int n = 0;
      for (std::size_t i = 1; i < fast.size(); ++i)
        n += (fast.states(static_cast<Index>(i), 0) > 0) != (fast.states(static_cast<Index>(i - 1), 0) > 0);
      return n;
    };
    CHECK(crossings(10.0) > crossings(1.0));
  }
}

TEST_CASE("gamma closure") {
  CHECK(gamma_closure(10, 2, 0.6, 3) == doctest::Approx(0.24).epsilon(1e-12));
  CHECK(gamma_closure(10, 2, 0.6, 4) == doctest::Approx(0.12).epsilon(1e-12));
  // Zero variance: kappa clipped to 10, eta = 0.2 - 0.2 = 0 clipped to 1e-3.
  const double k = 10.0, eta = 1e-3;
  CHECK(gamma_closure(10, 2, 0.4, 3) == doctest::Approx(10 * std::pow(eta, 3) * k * (k + 1) * (k + 2)));
  // eta' = 6/1 - 1 = 5 is clipped to 1; kappa' = 1 / (6 - 1) = 0.2.
  CHECK(gamma_closure(1, 1, 6, 3) == doctest::Approx(0.2 * 1.2 * 2.2));
  CHECK_THROWS_AS((void)gamma_closure(0, 1, 1, 3), InvalidArgument);
  CHECK_THROWS_AS((void)gamma_closure(1, -1, 1, 3), InvalidArgument);
}

TEST_CASE("exponential closure") {
  CHECK(exponential_closure(10, 2, 3) == doctest::Approx(0.48));
  CHECK(exponential_closure(1, 1, 4) == doctest::Approx(24.0));
  CHECK(exponential_closure(10, 2, 1) == doctest::Approx(2.0));
  CHECK_THROWS_AS((void)exponential_closure(-1, 2, 3), InvalidArgument);
}

TEST_CASE("coalescence moment equations") {
  Eigen::Matrix4d c = Eigen::Matrix4d::Zero();
  c(0, 0) = 1.0;
  const Eigen::Vector3d x(10, 2, 0.6);
  const Eigen::Vector3d d = coalescence_rhs(c, x, Closure::Gamma);
  CHECK(d(0) == doctest::Approx(-50.0));
  CHECK(d(1) == 0.0);
  CHECK(d(2) == doctest::Approx(4.0));
  CHECK(coalescence_rhs(Eigen::Matrix4d::Zero(), x, Closure::Exponential).norm() == 0.0);

  SUBCASE("X1 is conserved along trajectories") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 0.01);
    Eigen::Matrix4d k = Eigen::Matrix4d::Zero();
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b)
        if (!(a == 1 && b == 1)) k(a, b) = k(b, a) = u(rng) / std::pow(10.0, a + b);
    for (Closure cl : {Closure::Gamma, Closure::Exponential}) {
      CoalescenceModel model;
      model.kernel = k;
      model.closure = cl;
      IntegratorConfig ic = config(0.01, 50.0);
      const auto t = simulate_coalescence(model, Vector(Eigen::Vector3d(10, 2, 0.6)), ic);
      CHECK((t.states.col(1).array() - 2.0).abs().maxCoeff() <= 1e-12);
    }
  }

  SUBCASE("higher resolved order agrees with the closed system at its first step") {
    CoalescenceModel m3;
    m3.kernel = c;
    m3.resolved = 3;
    Vector full(4);
    full << 10, 2, 0.6, gamma_closure(10, 2, 0.6, 3);
    Vector dx(4);
    coalescence_moment_rhs(c, full, Closure::Gamma, {}, dx);
    CHECK(dx(0) == doctest::Approx(-50.0));
    CHECK(dx(2) == doctest::Approx(4.0));
  }
}

TEST_CASE("ks linear symbol and dispersion relation") {
  const SpectralGrid grid(64, 64.0);
  const KsParams p = KsParams::truth();
  const ComplexVector L = ks_linear_symbol(p, grid);
  for (Index k = 0; k < L.size(); ++k) {
    const double kappa = 2.0 * std::numbers::pi * grid.wavenumbers()(k);
    CHECK(L(k).real() == doctest::Approx(kappa * kappa - std::pow(kappa, 4)).epsilon(1e-12));
    CHECK(std::abs(L(k).imag()) < 1e-12);
  }
  KsParams odd;
  odd.alpha[0] = 1.0;
  const ComplexVector Lo = ks_linear_symbol(odd, grid);
  CHECK(std::abs(Lo(Lo.size() - 1)) == 0.0);
}

TEST_CASE("ks steppers on linear problems") {
  const SpectralGrid grid(32, 32.0);
  KsParams p;
  p.alpha[1] = 1.0;
  p.alpha[3] = 1.0;
  const double dt = 0.05;
  Vector u(32);
  for (Index i = 0; i < 32; ++i) u(i) = std::cos(2.0 * std::numbers::pi * 3.0 * grid.x(i) / 32.0);
  const ComplexVector u_hat = grid.forward(u);
  const ComplexVector L = ks_linear_symbol(p, grid);
  const ComplexVector cn = ks_step_cnab2(u_hat, u_hat, p, dt, grid);
  const ComplexVector ifs = ks_step_ifab2(u_hat, u_hat, p, dt, grid);
  for (Index k = 0; k < u_hat.size(); ++k) {
    const Complex amp = (1.0 + 0.5 * dt * L(k)) / (1.0 - 0.5 * dt * L(k));
    CHECK(std::abs(cn(k) - amp * u_hat(k)) <= 1e-10 * (1.0 + std::abs(u_hat(k))));
    CHECK(std::abs(ifs(k) - std::exp(L(k) * dt) * u_hat(k)) <= 1e-10 * (1.0 + std::abs(u_hat(k))));
  }
}

TEST_CASE("ks nonlinearity and invariants") {
  const SpectralGrid grid(64, 64.0);
  KsParams p;
  p.beta[0] = 1.0;
  SUBCASE("constant field stays constant") {
    const ComplexVector n = ks_nonlinear(grid.forward(Vector::Constant(64, 1.5)), p, grid);
    CHECK(n.cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("zero stays zero") {
    KsConfig c;
    c.n = 64;
    c.length = 64.0;
    c.integrator = config(0.05, 5.0);
    const auto t = simulate_ks(KsParams::truth(), Vector::Zero(64), c);
    CHECK(t.states.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("spatial mean is conserved") {
    KsParams q = KsParams::truth();
    q.beta[2] = 0.3;
    KsConfig c;
    c.n = 64;
    c.length = 64.0;
    c.integrator = config(0.01, 10.0);
    const Vector u0 = ks_initial_condition(64, 4) + Vector::Constant(64, 0.2);
    const auto t = simulate_ks(q, u0, c);
    const double m0 = t.states.row(0).mean();
    const double drift =
        (t.states.rowwise().mean().array() - m0).abs().maxCoeff();
    CHECK(drift <= 1e-8 * 10.0);
  }
}

TEST_CASE("ks clipping") {
  const SpectralGrid grid(32, 32.0);
  const Vector u = ks_initial_condition(32, 9);
  const Vector inside = grid.inverse(clip_state(grid.forward(u), {-10.0, 10.0}, grid));
  CHECK((inside - u).cwiseAbs().maxCoeff() < 1e-10);
  const Vector big = grid.inverse(clip_state(grid.forward(Vector::Constant(32, 20.0)), {-10.0, 10.0}, grid));
  CHECK((big.array() - 10.0).abs().maxCoeff() < 1e-10);
  const Vector wild = grid.inverse(clip_state(grid.forward(u * 50.0), {-3.0, 3.0}, grid));
  CHECK(wild.maxCoeff() <= 3.0 + 1e-10);
  CHECK(wild.minCoeff() >= -3.0 - 1e-10);

  SUBCASE("clipped runs stay within bounds for unstable parameters") {
    KsParams p;
    p.alpha[1] = 3.0;
    p.alpha[3] = 1e-3;
    p.beta[4] = 2.0;
    KsConfig c;
    c.n = 64;
    c.length = 64.0;
    c.integrator = config(0.05, 20.0);
    c.integrator.clip_bounds = std::pair{-100.0, 100.0};
    const auto t = simulate_ks(p, ks_initial_condition(64, 2), c);
    CHECK(t.states.cwiseAbs().maxCoeff() <= 100.0 + 1e-9);
  }
}

TEST_CASE("ks schemes agree on the true equation") {
  KsConfig c;
  c.n = 128;
  c.length = 128.0;
  c.integrator = config(0.01, 10.0);
  // Start fields of the kind the experiments use.
  for (std::uint64_t seed = 21; seed <= 25; ++seed) {
    const Vector u0 = ks_initial_condition(128, seed);
    c.scheme = KsScheme::CrankNicolsonAB2;
    const auto a = simulate_ks(KsParams::truth(), u0, c);
    c.scheme = KsScheme::IntegratingFactorAB2;
    const auto b = simulate_ks(KsParams::truth(), u0, c);
    CHECK((a.states - b.states).cwiseAbs().maxCoeff() < 1e-2);
  }
}

TEST_CASE("ks runs are deterministic") {
  KsConfig c;
  c.n = 64;
  c.length = 64.0;
  c.integrator = config(0.05, 20.0);
  const Vector u0 = ks_initial_condition(64, 3);
  CHECK(simulate_ks(KsParams::truth(), u0, c).states == simulate_ks(KsParams::truth(), u0, c).states);
  CHECK(ks_initial_condition(64, 3) == u0);
}
