#include "seki/simulate.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace seki {

namespace {

// Shared stepping loop: `advance` moves x forward by one step.
template <class Advance>
Trajectory integrate(const Vector& x0, const IntegratorConfig& cfg, Advance&& advance) {
  cfg.validate();
  require(x0.allFinite(), "initial state must be finite");
  const std::size_t steps = cfg.steps();
  const std::size_t stride = cfg.stride();
  const std::size_t rows = steps / stride + 1;
  Trajectory traj;
  traj.times.reserve(rows);
  traj.states.resize(static_cast<Eigen::Index>(rows), x0.size());
  Vector x = x0;
  std::size_t row = 0;
  auto record = [&](std::size_t n) {
    traj.times.push_back(static_cast<double>(n) * cfg.dt);
    traj.states.row(static_cast<Eigen::Index>(row++)) = x.transpose();
  };
  record(0);
  for (std::size_t n = 1; n <= steps; ++n) {
    advance(x);
    if (cfg.clip_bounds) x = x.cwiseMax(cfg.clip_bounds->first).cwiseMin(cfg.clip_bounds->second);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > cfg.blowup_threshold) {
      const double t = static_cast<double>(n) * cfg.dt;
      throw BlowUpError("state diverged at t = " + std::to_string(t), t);
    }
    if (n % stride == 0) record(n);
  }
  traj.states.conservativeResize(static_cast<Eigen::Index>(row), x0.size());
  traj.spinup_index = 0;
  while (traj.spinup_index + 1 < traj.size() &&
         traj.times[traj.spinup_index] < cfg.spinup - 1e-9 * cfg.dt)
    ++traj.spinup_index;
  return traj;
}

}  // namespace

double Trajectory::sample_interval() const {
  require(times.size() >= 2, "trajectory needs two samples");
  return (times.back() - times.front()) / static_cast<double>(times.size() - 1);
}

Trajectory Trajectory::slice(std::size_t begin, std::size_t end) const {
  require(begin < end && end <= size(), "invalid trajectory slice");
  Trajectory t;
  t.times.assign(times.begin() + static_cast<long>(begin), times.begin() + static_cast<long>(end));
  t.states = states.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
  t.spinup_index = 0;
  return t;
}

void Trajectory::validate() const {
  require(!times.empty(), "trajectory is empty");
  require(static_cast<std::size_t>(states.rows()) == times.size(), "times and states disagree");
  require(spinup_index < times.size(), "spinup index out of range");
  for (std::size_t i = 1; i < times.size(); ++i)
    require(times[i] > times[i - 1], "trajectory times must increase");
  require(states.allFinite(), "trajectory contains non-finite states");
}

void Trajectory::write_csv(const std::string& path, const std::vector<std::string>& columns) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path);
  out.precision(12);
  out << "t";
  for (std::size_t j = 0; j < dim(); ++j)
    out << ',' << (j < columns.size() ? columns[j] : "x" + std::to_string(j + 1));
  out << '\n';
  for (std::size_t i = 0; i < size(); ++i) {
    out << times[i];
    for (std::size_t j = 0; j < dim(); ++j)
      out << ',' << states(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out << '\n';
  }
}

void IntegratorConfig::validate() const {
  require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
  require(horizon > spinup && spinup >= 0.0, "need horizon > spinup >= 0");
  require(sample_interval >= 0.0, "sample interval must be nonnegative");
  if (clip_bounds) require(clip_bounds->first < clip_bounds->second, "clip bounds must be ordered");
}

std::size_t IntegratorConfig::steps() const {
  return static_cast<std::size_t>(std::llround(horizon / dt));
}

std::size_t IntegratorConfig::stride() const {
  if (sample_interval <= 0.0) return 1;
  const auto s = static_cast<std::size_t>(std::llround(sample_interval / dt));
  return s == 0 ? 1 : s;
}

Trajectory euler_maruyama(const Rhs& rhs, const Vector& noise_amplitude, const Vector& x0,
                          const IntegratorConfig& cfg) {
  require(noise_amplitude.size() == x0.size(), "noise amplitude has wrong dimension");
  require((noise_amplitude.array() >= 0.0).all(), "noise amplitude must be nonnegative");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  const Vector scale = noise_amplitude * std::sqrt(cfg.dt);
  Vector dx(x0.size());
  return integrate(x0, cfg, [&](Vector& x) {
    rhs(x, dx);
    x += cfg.dt * dx;
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += scale(i) * normal(rng);
  });
}

Trajectory rk4(const Rhs& rhs, const Vector& x0, const IntegratorConfig& cfg) {
  Vector k1(x0.size()), k2(x0.size()), k3(x0.size()), k4(x0.size()), tmp(x0.size());
  const double h = cfg.dt;
  return integrate(x0, cfg, [&](Vector& x) {
    rhs(x, k1);
    tmp = x + 0.5 * h * k1;
    rhs(tmp, k2);
    tmp = x + 0.5 * h * k2;
    rhs(tmp, k3);
    tmp = x + h * k3;
    rhs(tmp, k4);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  });
}

void lorenz96_rhs(const Vector& x, double forcing, Vector& dx) {
  const Eigen::Index K = x.size();
  dx.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double xm1 = x((k + K - 1) % K);
    const double xm2 = x((k + K - 2) % K);
    const double xp1 = x((k + 1) % K);
    dx(k) = -xm1 * (xm2 - xp1) - x(k) + forcing;
  }
}

void MultiscaleL96::validate() const {
  require(K >= 5, "multiscale Lorenz 96 needs K >= 5");
  require(J >= 1, "multiscale Lorenz 96 needs J >= 1");
}

std::size_t MultiscaleL96::fast_index(int j, int k) const {
  const long n = static_cast<long>(J) * K;
  const long flat = static_cast<long>(k) * J + j;
  return static_cast<std::size_t>(((flat % n) + n) % n);
}

std::size_t MultiscaleL96::slow_index(int k) const {
  return static_cast<std::size_t>(((k % K) + K) % K);
}

void MultiscaleL96::rhs(const Vector& s, Vector& ds) const {
  const Eigen::Index nx = K;
  ds.resize(s.size());
  const double coupling = h * c / J;
  for (int k = 0; k < K; ++k) {
    const double xm1 = s(static_cast<Eigen::Index>(slow_index(k - 1)));
    const double xm2 = s(static_cast<Eigen::Index>(slow_index(k - 2)));
    const double xp1 = s(static_cast<Eigen::Index>(slow_index(k + 1)));
    double ysum = 0.0;
    for (int j = 0; j < J; ++j) ysum += s(nx + static_cast<Eigen::Index>(fast_index(j, k)));
    ds(k) = -xm1 * (xm2 - xp1) - s(k) + F - coupling * ysum;
  }
  for (int k = 0; k < K; ++k) {
    const double xk = s(k);
    for (int j = 0; j < J; ++j) {
      auto y = [&](int jj) { return s(nx + static_cast<Eigen::Index>(fast_index(jj, k))); };
      ds(nx + static_cast<Eigen::Index>(fast_index(j, k))) =
          c * (-b * y(j + 1) * (y(j + 2) - y(j - 1)) - y(j) + h / J * xk);
    }
  }
}

Trajectory simulate_multiscale_l96(const MultiscaleL96& model, const Vector& x0, const Vector& y0,
                                   const IntegratorConfig& cfg, Trajectory* fast_out) {
  model.validate();
  require(x0.size() == model.K, "slow initial state has wrong dimension");
  require(y0.size() == static_cast<Eigen::Index>(model.K) * model.J,
          "fast initial state has wrong dimension");
  Vector s0(x0.size() + y0.size());
  s0 << x0, y0;
  Trajectory full = rk4([&](const Vector& s, Vector& ds) { model.rhs(s, ds); }, s0, cfg);
  Trajectory slow;
  slow.times = full.times;
  slow.spinup_index = full.spinup_index;
  slow.states = full.states.leftCols(model.K);
  if (fast_out) {
    fast_out->times = full.times;
    fast_out->spinup_index = full.spinup_index;
    fast_out->states = full.states.rightCols(y0.size());
  }
  return slow;
}

}  // namespace seki
