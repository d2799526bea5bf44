#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "seki/common.hpp"
#include "seki/dictionary.hpp"
#include "seki/qp.hpp"

namespace seki {

/// Forward map G: free parameters -> data vector. Must be safe to call
/// concurrently; `seed` drives any internal randomness.
using ForwardModel =
    std::function<Vector(const ModelParameterization& param, const Vector& free, std::uint64_t seed)>;

struct EkiConfig {
  std::size_t ensemble_size = 50;
  int max_iterations = 30;
  bool perturb_observations = true;
  double jitter = 1e-6;
  double gamma = kInf;
  double lambda = 0.0;
  /// false runs the closed-form Kalman update with no constraints or thresholding.
  bool sparse = true;
  bool discrepancy_stop = true;
  /// Uniform initialization box per free coordinate.
  Vector prior_lower;
  Vector prior_upper;
  std::uint64_t seed = 0;
  double qp_tol = 1e-8;
  std::size_t threads = 0;
  int max_resample_rounds = 20;
  /// What replaces a member whose forward run failed after an update: a draw
  /// around the surviving members, or repeated halving of its step.
  enum class FailurePolicy { Resample, Backtrack } failure_policy = FailurePolicy::Resample;

  void validate(std::size_t free_dim) const;
};

struct IterationRecord {
  int iteration = 0;
  Vector mean;
  Vector spread;
  /// 1/2 |Gamma^{-1/2}(y - G(mean))|^2.
  double misfit = 0.0;
  double masked_l1 = 0.0;
  std::size_t failed_members = 0;
  std::size_t qp_fallbacks = 0;
};

/// Ensemble stored column-wise: member j is members.col(j).
struct Ensemble {
  Matrix members;
  int iteration = 0;

  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(members.cols()); }
  [[nodiscard]] Vector mean() const { return members.rowwise().mean(); }
  /// Per-coordinate sample standard deviation.
  [[nodiscard]] Vector spread() const;
};

struct ConvergenceReport {
  std::vector<IterationRecord> history;
  int iterations = 0;
  bool stopped_early = false;
  std::string stop_reason;
  std::vector<std::string> names;
  std::size_t total_failures = 0;
};

struct EkiResult {
  Ensemble ensemble;
  ConvergenceReport report;
  /// Thresholded ensemble mean (the reported point estimate).
  Vector estimate;
};

/// theta_j + C^{thetaG} (C^{GG} + jitter diag(1 + diag C^{GG}) + Gamma)^{-1} (y_j - G_j).
/// `observations` holds y_j per member (columns); pass y repeated for unperturbed mode.
[[nodiscard]] Matrix eki_update(const Matrix& members, const Matrix& g_evals, const Matrix& observations,
                                const Matrix& gamma, double jitter);

/// Per-member observations y + zeta_j, zeta_j ~ N(0, Gamma), or y repeated.
[[nodiscard]] Matrix member_observations(const Vector& y, const Matrix& gamma, std::size_t members,
                                         bool perturb, std::uint64_t seed);

/// Shared pieces of the sparse step for one iteration: the quadratic form and
/// the split constraint structure only depend on the ensemble, not the member.
class SparseStep {
 public:
  SparseStep(const Matrix& members, const Matrix& g_evals, const Matrix& gamma,
             const ModelParameterization& param, double gamma_budget, double jitter);

  /// theta-block of argmin over the constraint set of the augmented objective.
  [[nodiscard]] QpSolution solve(const Vector& theta, const Vector& g_eval, const Vector& y_j,
                                 double tol) const;
  [[nodiscard]] Vector theta_block(const QpSolution& s) const;
  [[nodiscard]] const Matrix& covariance() const noexcept { return c_psi_; }

 private:
  std::size_t p_, d_;
  Matrix c_psi_;
  Matrix c_inv_;
  Matrix gamma_inv_;
  SplitProblem split_;
};

/// Convenience wrapper building a SparseStep for a single member.
[[nodiscard]] Vector sparse_member_step(const Matrix& members, const Matrix& g_evals,
                                        std::size_t member, const Vector& y_j, const Matrix& gamma,
                                        const ModelParameterization& param, const EkiConfig& cfg);

/// Masked coordinates with |theta_i| < sqrt(2 lambda) set to zero.
[[nodiscard]] Vector threshold(const Vector& theta, double lambda, const std::vector<bool>& mask);

/// threshold() followed by restoring coordinates whose removal would break an
/// inequality row (e.g. a strictly positive lower bound).
[[nodiscard]] Vector threshold_feasible(const Vector& theta, double lambda,
                                        const ModelParameterization& param);

/// Euclidean projection onto {A theta >= a, |theta_masked|_1 <= gamma}.
[[nodiscard]] Vector project_feasible(const Vector& theta, const ModelParameterization& param,
                                      double gamma);

[[nodiscard]] Ensemble initialize_ensemble(const ModelParameterization& param, const EkiConfig& cfg);

[[nodiscard]] double data_misfit(const Vector& y, const Vector& g, const Eigen::LLT<Matrix>& gamma_llt);

[[nodiscard]] EkiResult run_sparse_eki(const ForwardModel& forward, const Vector& y, const Matrix& gamma,
                                       const ModelParameterization& param, const EkiConfig& cfg);

/// Same, continuing from a given ensemble.
[[nodiscard]] EkiResult run_sparse_eki(const ForwardModel& forward, const Vector& y, const Matrix& gamma,
                                       const ModelParameterization& param, const EkiConfig& cfg,
                                       Ensemble initial);

struct Batch {
  ModelParameterization param;
  EkiResult result;
};

struct PruneResult {
  std::vector<Batch> batches;
  [[nodiscard]] const Batch& final_batch() const { return batches.back(); }
  /// Final estimate scattered back to the original free coordinates.
  [[nodiscard]] Vector estimate_in_source() const;
};

/// Masked coordinates with |mean| >= sqrt(2 lambda), plus every unmasked one.
[[nodiscard]] std::vector<std::size_t> surviving_coordinates(const Vector& mean,
                                                             const ModelParameterization& param,
                                                             double lambda);

/// Repeatedly drops masked coordinates below the threshold and reruns sparse
/// EKI on the survivors (fresh draw from the restricted prior) until the
/// survivor set is stable or `max_batches` runs have been made in total.
[[nodiscard]] PruneResult prune_and_refit(EkiResult first, const ModelParameterization& param,
                                          const ForwardModel& forward, const Vector& y,
                                          const Matrix& gamma, const EkiConfig& cfg, int max_batches);

void to_json(nlohmann::json& j, const IterationRecord& r);
void to_json(nlohmann::json& j, const ConvergenceReport& r);

}  // namespace seki
