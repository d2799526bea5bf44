#include "seki/ks.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <random>

namespace seki {

namespace {

struct Plans {
  fftw_plan r2c;
  fftw_plan c2r;
};

// FFTW planning is not thread-safe; execution with the new-array interface is.
// Plans live for the whole process and are shared by every grid of the same size.
Plans plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, Plans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> in(n);
  std::vector<fftw_complex> out(n / 2 + 1);
  const int ni = static_cast<int>(n);
  Plans p;
  p.r2c = fftw_plan_dft_r2c_1d(ni, in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.c2r = fftw_plan_dft_c2r_1d(ni, out.data(), in.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p.r2c || !p.c2r) throw Error("FFTW planning failed");
  cache.emplace(n, p);
  return p;
}

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Spectral derivative factor 2 pi i xi with the Nyquist mode removed.
ComplexVector derivative_factor(const SpectralGrid& grid) {
  const auto m = static_cast<Eigen::Index>(grid.modes());
  ComplexVector d(m);
  for (Eigen::Index k = 0; k < m; ++k) d(k) = Complex(0.0, kTwoPi * grid.wavenumbers()(k));
  if (grid.size() % 2 == 0) d(m - 1) = 0.0;
  return d;
}

// Reusable solver state: symbols and scratch buffers for one parameter set.
class KsStepper {
 public:
  KsStepper(const KsParams& p, double dt, const SpectralGrid& grid)
      : p_(p), dt_(dt), grid_(grid), lin_(ks_linear_symbol(p, grid)), dx_(derivative_factor(grid)) {
    const auto m = lin_.size();
    cn_num_.resize(m);
    cn_inv_.resize(m);
    if_e1_.resize(m);
    if_e2_.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const Complex denom = 1.0 - 0.5 * dt * lin_(k);
      if (std::abs(denom) < 1e-14) throw InvalidArgument("singular Crank-Nicolson factor");
      cn_inv_(k) = 1.0 / denom;
      cn_num_(k) = 1.0 + 0.5 * dt * lin_(k);
      if_e1_(k) = std::exp(lin_(k) * dt);
      if_e2_(k) = std::exp(2.0 * lin_(k) * dt);
    }
    active_ = std::any_of(p.beta.begin(), p.beta.end(), [](double b) { return b != 0.0; });
  }

  void nonlinear(const ComplexVector& u_hat, ComplexVector& out) {
    out.setZero(u_hat.size());
    if (!active_) return;
    grid_.inverse(u_hat, u_);
    flux_.resize(u_.size());
    for (Eigen::Index i = 0; i < u_.size(); ++i) {
      const double u = u_(i);
      double power = u;
      double f = 0.0;
      for (int j = 0; j < 5; ++j) {
        power *= u;  // u^{j+2}
        f += p_.beta[static_cast<std::size_t>(j)] / (j + 2) * power;
      }
      flux_(i) = f;
    }
    grid_.forward(flux_, out);
    out = -(dx_.array() * out.array()).matrix();
  }

  void cnab2(const ComplexVector& u, const ComplexVector& n_now, const ComplexVector& n_prev,
             ComplexVector& next) const {
    next = (cn_inv_.array() * (cn_num_.array() * u.array() + 1.5 * dt_ * n_now.array() -
                               0.5 * dt_ * n_prev.array()))
               .matrix();
  }

  void ifab2(const ComplexVector& u, const ComplexVector& n_now, const ComplexVector& n_prev,
             ComplexVector& next) const {
    next = (if_e1_.array() * (u.array() + 1.5 * dt_ * n_now.array()) -
            0.5 * dt_ * if_e2_.array() * n_prev.array())
               .matrix();
  }

 private:
  KsParams p_;
  double dt_;
  const SpectralGrid& grid_;
  ComplexVector lin_, dx_, cn_num_, cn_inv_, if_e1_, if_e2_;
  Vector u_, flux_;
  bool active_ = true;
};

}  // namespace

KsParams KsParams::truth() {
  KsParams p;
  p.alpha[1] = 1.0;
  p.alpha[3] = 1.0;
  p.beta[0] = 1.0;
  return p;
}

KsParams KsParams::from_vector(const Vector& c) {
  require(c.size() == 10, "K-S coefficient vector needs 10 entries");
  KsParams p;
  for (int j = 0; j < 5; ++j) {
    p.alpha[static_cast<std::size_t>(j)] = c(j);
    p.beta[static_cast<std::size_t>(j)] = c(5 + j);
  }
  return p;
}

SpectralGrid::SpectralGrid(std::size_t n, double length) : n_(n), length_(length) {
  require(n >= 4 && n % 2 == 0, "grid size must be even and at least 4");
  require(length > 0.0, "domain length must be positive");
  xi_.resize(static_cast<Eigen::Index>(modes()));
  for (std::size_t k = 0; k < modes(); ++k) xi_(static_cast<Eigen::Index>(k)) = k / length_;
  const Plans p = plans_for(n);
  plan_r2c_ = p.r2c;
  plan_c2r_ = p.c2r;
}

void SpectralGrid::forward(const Vector& u, ComplexVector& u_hat) const {
  require(static_cast<std::size_t>(u.size()) == n_, "field has wrong size");
  Vector in = u;  // FFTW may not preserve the input of some transforms
  u_hat.resize(static_cast<Eigen::Index>(modes()));
  fftw_execute_dft_r2c(static_cast<fftw_plan>(plan_r2c_), in.data(),
                       reinterpret_cast<fftw_complex*>(u_hat.data()));
}

void SpectralGrid::inverse(const ComplexVector& u_hat, Vector& u) const {
  require(static_cast<std::size_t>(u_hat.size()) == modes(), "spectrum has wrong size");
  ComplexVector in = u_hat;  // c2r destroys its input
  u.resize(static_cast<Eigen::Index>(n_));
  fftw_execute_dft_c2r(static_cast<fftw_plan>(plan_c2r_),
                       reinterpret_cast<fftw_complex*>(in.data()), u.data());
  u /= static_cast<double>(n_);
}

ComplexVector SpectralGrid::forward(const Vector& u) const {
  ComplexVector out;
  forward(u, out);
  return out;
}

Vector SpectralGrid::inverse(const ComplexVector& u_hat) const {
  Vector out;
  inverse(u_hat, out);
  return out;
}

ComplexVector ks_linear_symbol(const KsParams& p, const SpectralGrid& grid) {
  const auto m = static_cast<Eigen::Index>(grid.modes());
  ComplexVector l = ComplexVector::Zero(m);
  const bool has_nyquist = grid.size() % 2 == 0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const Complex ik(0.0, kTwoPi * grid.wavenumbers()(k));
    Complex power = 1.0;
    for (int j = 1; j <= 5; ++j) {
      power *= ik;
      if (has_nyquist && k == m - 1 && j % 2 == 1) continue;
      l(k) -= p.alpha[static_cast<std::size_t>(j - 1)] * power;
    }
  }
  return l;
}

ComplexVector ks_nonlinear(const ComplexVector& u_hat, const KsParams& p, const SpectralGrid& grid) {
  KsStepper s(p, 1.0, grid);
  ComplexVector out;
  s.nonlinear(u_hat, out);
  return out;
}

ComplexVector ks_step_cnab2(const ComplexVector& u_hat_n, const ComplexVector& u_hat_prev,
                            const KsParams& p, double dt, const SpectralGrid& grid) {
  KsStepper s(p, dt, grid);
  ComplexVector n_now, n_prev, next;
  s.nonlinear(u_hat_n, n_now);
  s.nonlinear(u_hat_prev, n_prev);
  s.cnab2(u_hat_n, n_now, n_prev, next);
  return next;
}

ComplexVector ks_step_ifab2(const ComplexVector& u_hat_n, const ComplexVector& u_hat_prev,
                            const KsParams& p, double dt, const SpectralGrid& grid) {
  KsStepper s(p, dt, grid);
  ComplexVector n_now, n_prev, next;
  s.nonlinear(u_hat_n, n_now);
  s.nonlinear(u_hat_prev, n_prev);
  s.ifab2(u_hat_n, n_now, n_prev, next);
  return next;
}

ComplexVector clip_state(const ComplexVector& u_hat, std::pair<double, double> bounds,
                         const SpectralGrid& grid) {
  Vector u = grid.inverse(u_hat);
  u = u.cwiseMax(bounds.first).cwiseMin(bounds.second);
  return grid.forward(u);
}

KsScheme ks_scheme_from_string(const std::string& name) {
  if (name == "cnab2") return KsScheme::CrankNicolsonAB2;
  if (name == "ifab2") return KsScheme::IntegratingFactorAB2;
  throw InvalidArgument("unknown K-S scheme " + name);
}

Trajectory simulate_ks(const KsParams& p, const Vector& u0, const KsConfig& cfg) {
  const IntegratorConfig& ic = cfg.integrator;
  ic.validate();
  require(static_cast<std::size_t>(u0.size()) == cfg.n, "initial field has wrong size");
  const SpectralGrid grid(cfg.n, cfg.length);
  KsStepper stepper(p, ic.dt, grid);
  const std::size_t steps = ic.steps();
  const std::size_t stride = ic.stride();

  Trajectory traj;
  const std::size_t rows = steps / stride + 1;
  traj.times.reserve(rows);
  traj.states.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cfg.n));
  std::size_t row = 0;

  ComplexVector u_hat = grid.forward(u0), next, n_now, n_prev;
  Vector u = u0;
  stepper.nonlinear(u_hat, n_prev);
  auto record = [&](std::size_t n) {
    traj.times.push_back(static_cast<double>(n) * ic.dt);
    traj.states.row(static_cast<Eigen::Index>(row++)) = u.transpose();
  };
  record(0);
  for (std::size_t n = 1; n <= steps; ++n) {
    if (n == 1)
      n_now = n_prev;
    else
      stepper.nonlinear(u_hat, n_now);
    if (cfg.scheme == KsScheme::CrankNicolsonAB2)
      stepper.cnab2(u_hat, n_now, n_prev, next);
    else
      stepper.ifab2(u_hat, n_now, n_prev, next);
    grid.inverse(next, u);
    if (!u.allFinite()) {
      const double t = static_cast<double>(n) * ic.dt;
      throw BlowUpError("K-S field diverged at t = " + std::to_string(t), t);
    }
    if (ic.clip_bounds) {
      u = u.cwiseMax(ic.clip_bounds->first).cwiseMin(ic.clip_bounds->second);
      grid.forward(u, next);
    } else if (u.cwiseAbs().maxCoeff() > ic.blowup_threshold) {
      const double t = static_cast<double>(n) * ic.dt;
      throw BlowUpError("K-S field diverged at t = " + std::to_string(t), t);
    }
    std::swap(n_prev, n_now);
    std::swap(u_hat, next);
    if (n % stride == 0) record(n);
  }
  traj.states.conservativeResize(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(cfg.n));
  while (traj.spinup_index + 1 < traj.size() &&
         traj.times[traj.spinup_index] < ic.spinup - 1e-9 * ic.dt)
    ++traj.spinup_index;
  return traj;
}

Vector ks_initial_condition(std::size_t n, std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  Vector u = Vector::Zero(static_cast<Eigen::Index>(n));
  for (int m = 1; m <= 16; ++m) {
    const double a = amplitude * normal(rng), ph = phase(rng);
    for (std::size_t i = 0; i < n; ++i)
      u(static_cast<Eigen::Index>(i)) +=
          a * std::cos(kTwoPi * m * static_cast<double>(i) / static_cast<double>(n) + ph);
  }
  return u;
}

}  // namespace seki
