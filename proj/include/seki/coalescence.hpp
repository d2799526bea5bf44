#pragma once

#include <Eigen/Dense>

#include "seki/common.hpp"
#include "seki/simulate.hpp"

namespace seki {

/// Admissible ranges for the Gamma shape (kappa) and scale (eta).
struct ClosureBounds {
  double kappa_min = 1e-3;
  double kappa_max = 10.0;
  double eta_min = 1e-3;
  double eta_max = 1.0;
};

enum class Closure { Gamma, Exponential };

[[nodiscard]] Closure closure_from_string(const std::string& name);

/// Clipped Gamma-distribution moment X_k from (X0, X1, X2).
/// A degenerate variance (X0 X2 = X1^2) is read as kappa' = +inf.
[[nodiscard]] double gamma_closure(double X0, double X1, double X2, int k,
                                   const ClosureBounds& bounds = {});

/// Exponential-distribution moment X0 k! / mu^k with mu = X0 / X1.
[[nodiscard]] double exponential_closure(double X0, double X1, int k);

/// Closed (X0, X1, X2) system with a degree-3 polynomial kernel.
[[nodiscard]] Eigen::Vector3d coalescence_rhs(const Eigen::Matrix4d& c, const Eigen::Vector3d& x,
                                              Closure closure, const ClosureBounds& bounds = {});

/// Moment system resolving X_0..X_K (K >= 2); higher moments come from the
/// closure applied to (X0, X1, X2). `x` has K + 1 entries.
void coalescence_moment_rhs(const Eigen::Matrix4d& c, const Vector& x, Closure closure,
                            const ClosureBounds& bounds, Vector& dx);

struct CoalescenceModel {
  Eigen::Matrix4d kernel = Eigen::Matrix4d::Zero();
  int resolved = 2;
  Closure closure = Closure::Gamma;
  ClosureBounds bounds;
  /// X0 and X2 are floored here before entering the closure.
  double positivity_floor = 1e-10;
};

/// RK4 solution recording (X0, X1, X2). `x0` holds X_0..X_K; for K > 2 the
/// missing initial moments may be left out and are filled from the closure.
[[nodiscard]] Trajectory simulate_coalescence(const CoalescenceModel& model, const Vector& x0,
                                              const IntegratorConfig& cfg);

}  // namespace seki
