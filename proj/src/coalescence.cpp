#include "seki/coalescence.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace seki {

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Moments X_0..X_{top}: resolved entries from x, the rest from the closure.
std::vector<double> moment_table(const Vector& x, int top, Closure closure,
                                 const ClosureBounds& bounds, double floor) {
  const int K = static_cast<int>(x.size()) - 1;
  std::vector<double> m(static_cast<std::size_t>(top + 1));
  for (int k = 0; k <= top && k <= K; ++k) m[static_cast<std::size_t>(k)] = x(k);
  const double X0 = std::max(x(0), floor);
  const double X1 = x(1);
  const double X2 = std::max(x(2), floor);
  for (int k = K + 1; k <= top; ++k)
    m[static_cast<std::size_t>(k)] = closure == Closure::Gamma ? gamma_closure(X0, X1, X2, k, bounds)
                                                                : exponential_closure(X0, X1, k);
  return m;
}

void moment_rhs(const Eigen::Matrix4d& c, const Vector& x, Closure closure,
                const ClosureBounds& bounds, double floor, Vector& dx) {
  const int K = static_cast<int>(x.size()) - 1;
  require(K >= 2, "moment system needs at least X0, X1, X2");
  const auto m = moment_table(x, K + 2, closure, bounds, floor);
  dx.setZero(x.size());
  double d0 = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) d0 += c(a, b) * m[a] * m[b];
  dx(0) = -0.5 * d0;
  for (int k = 2; k <= K; ++k) {
    double s = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        if (c(a, b) == 0.0) continue;
        double inner = 0.0;
        for (int j = 1; j < k; ++j)
          inner += binomial(k, j) * m[static_cast<std::size_t>(a + j)] *
                   m[static_cast<std::size_t>(b + k - j)];
        s += c(a, b) * inner;
      }
    dx(k) = 0.5 * s;
  }
}

}  // namespace

Closure closure_from_string(const std::string& name) {
  if (name == "gamma") return Closure::Gamma;
  if (name == "exponential") return Closure::Exponential;
  throw InvalidArgument("unknown closure " + name);
}

double gamma_closure(double X0, double X1, double X2, int k, const ClosureBounds& bounds) {
  if (!(X0 > 0.0) || !(X1 > 0.0)) throw InvalidArgument("Gamma closure needs X0, X1 > 0");
  require(k >= 0, "moment order must be nonnegative");
  const double denom = X0 * X2 - X1 * X1;
  const double kappa_raw = denom == 0.0 ? kInf : X1 * X1 / denom;
  const double eta_raw = X2 / X1 - X1 / X0;
  const double kappa = std::clamp(kappa_raw, bounds.kappa_min, bounds.kappa_max);
  const double eta = std::clamp(eta_raw, bounds.eta_min, bounds.eta_max);
  // Gamma(kappa + k) / Gamma(kappa) as a rising factorial.
  double rising = 1.0;
  for (int i = 0; i < k; ++i) rising *= kappa + i;
  return X0 * std::pow(eta, k) * rising;
}

double exponential_closure(double X0, double X1, int k) {
  if (!(X0 > 0.0) || !(X1 > 0.0)) throw InvalidArgument("exponential closure needs X0, X1 > 0");
  require(k >= 0, "moment order must be nonnegative");
  const double mu = X0 / X1;
  double fact = 1.0;
  for (int i = 2; i <= k; ++i) fact *= i;
  return X0 * fact / std::pow(mu, k);
}

Eigen::Vector3d coalescence_rhs(const Eigen::Matrix4d& c, const Eigen::Vector3d& x,
                                Closure closure, const ClosureBounds& bounds) {
  Vector dx;
  moment_rhs(c, Vector(x), closure, bounds, 0.0, dx);
  return dx;
}

void coalescence_moment_rhs(const Eigen::Matrix4d& c, const Vector& x, Closure closure,
                            const ClosureBounds& bounds, Vector& dx) {
  moment_rhs(c, x, closure, bounds, 0.0, dx);
}

Trajectory simulate_coalescence(const CoalescenceModel& model, const Vector& x0,
                                const IntegratorConfig& cfg) {
  const int K = model.resolved;
  require(K >= 2, "coalescence model needs K >= 2");
  require(x0.size() >= 3 && x0.size() <= K + 1, "initial moments have wrong dimension");
  Vector start(K + 1);
  start.head(x0.size()) = x0;
  for (int k = static_cast<int>(x0.size()); k <= K; ++k)
    start(k) = model.closure == Closure::Gamma
                   ? gamma_closure(x0(0), x0(1), x0(2), k, model.bounds)
                   : exponential_closure(x0(0), x0(1), k);
  Trajectory full = rk4(
      [&](const Vector& x, Vector& dx) {
        moment_rhs(model.kernel, x, model.closure, model.bounds, model.positivity_floor, dx);
      },
      start, cfg);
  if (K == 2) return full;
  Trajectory out;
  out.times = std::move(full.times);
  out.spinup_index = full.spinup_index;
  out.states = full.states.leftCols(3);
  return out;
}

}  // namespace seki
