#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "seki/common.hpp"

namespace seki {

/// min 1/2 u'Qu + q'u  subject to  G u <= h.
struct QpProblem {
  Matrix Q;
  Vector q;
  Matrix G;
  Vector h;

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(q.size()); }
  [[nodiscard]] std::size_t constraints() const noexcept { return static_cast<std::size_t>(h.size()); }
  [[nodiscard]] double objective(const Vector& u) const { return 0.5 * u.dot(Q * u) + q.dot(u); }
  void validate() const;
};

struct KktResiduals {
  double stationarity = 0.0;     // |Qu + q + G'z|_inf
  double primal = 0.0;           // |max(Gu - h, 0)|_inf
  double complementarity = 0.0;  // max_i |z_i (h - Gu)_i|
  [[nodiscard]] double max() const;
};

struct QpSolution {
  Vector u;
  /// Inequality multipliers, z >= 0.
  Vector z;
  KktResiduals kkt;
  /// Residuals relative to the magnitude of the terms they balance.
  KktResiduals scaled;
  int iterations = 0;
  std::vector<double> objective_history;
};

struct QpOptions {
  double tol = 1e-8;
  int max_iterations = 100;
  /// Run the phase-1 problem first when the origin is not strictly feasible.
  bool detect_infeasibility = true;
};

class QpInfeasible : public Error {
 public:
  QpInfeasible(const std::string& what, double violation) : Error(what), violation_(violation) {}
  /// Smallest achievable max_i (Gu - h)_i.
  [[nodiscard]] double violation() const noexcept { return violation_; }

 private:
  double violation_;
};

class QpMaxIterations : public Error {
 public:
  QpMaxIterations(const std::string& what, QpSolution best) : Error(what), best_(std::move(best)) {}
  [[nodiscard]] const QpSolution& best() const noexcept { return best_; }

 private:
  QpSolution best_;
};

/// Dense Mehrotra predictor-corrector interior-point method. Succeeds when the
/// scaled KKT residuals fall below tol; the absolute residuals are reported too.
[[nodiscard]] QpSolution solve_qp(const QpProblem& problem, const QpOptions& options);
[[nodiscard]] QpSolution solve_qp(const QpProblem& problem, double tol = 1e-8);

[[nodiscard]] KktResiduals kkt_residuals(const QpProblem& problem, const Vector& u, const Vector& z);

/// Standard-form problem for an l1-budgeted QP: budgeted coordinates are
/// written v = v+ - v-, the others stay free. Variables are ordered
/// (free coordinates, v+, v-).
struct SplitProblem {
  QpProblem problem;
  std::vector<std::size_t> free_coords;
  std::vector<std::size_t> budgeted;
  std::size_t original_dim = 0;

  /// v from the split variables.
  [[nodiscard]] Vector recover(const Vector& u) const;
  /// Split variables from v (v+ = max(v, 0), v- = max(-v, 0)).
  [[nodiscard]] Vector lift(const Vector& v) const;
};

/// `extra_G v <= extra_h` are mapped through v = v+ - v-. With gamma = inf no
/// splitting is done, since the split problem then has an unbounded optimal face.
[[nodiscard]] SplitProblem l1_split(const Matrix& Q, const Vector& q, const std::vector<bool>& budgeted,
                                    double gamma, const Matrix& extra_G, const Vector& extra_h);

void to_json(nlohmann::json& j, const QpProblem& p);

}  // namespace seki
