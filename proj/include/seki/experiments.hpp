#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "seki/coalescence.hpp"
#include "seki/common.hpp"
#include "seki/dictionary.hpp"
#include "seki/eki.hpp"
#include "seki/ks.hpp"
#include "seki/observables.hpp"
#include "seki/simulate.hpp"

namespace seki {

enum class Mode { Standard, Sparse };

[[nodiscard]] Mode mode_from_string(const std::string& name);
[[nodiscard]] std::string to_string(Mode mode);

/// Case identifiers accepted in the "case" field of a config.
[[nodiscard]] const std::vector<std::string>& case_ids();

/// Uniform initialization box: a default interval plus per-name overrides.
struct PriorBox {
  std::pair<double, double> fallback{-1.0, 1.0};
  std::map<std::string, std::pair<double, double>> overrides;

  [[nodiscard]] std::pair<Vector, Vector> bounds(const ModelParameterization& param) const;
};

/// Parsed experiment definition. `source` keeps the merged JSON it came from.
struct ExperimentConfig {
  std::string case_id;
  std::string name;
  std::uint64_t seed = 0;

  // Fitted model.
  int K = 0;
  double forcing = 0.0;
  IntegratorConfig integrator;
  std::vector<Vector> initial_conditions;
  /// Seed offset for the forward map's internal randomness; every member shares it.
  bool common_noise = true;

  // Truth system.
  nlohmann::json truth;
  IntegratorConfig truth_integrator;

  // Data.
  ObservableSpec observables;
  /// "batch_means" or "relative".
  std::string noise_model = "batch_means";
  double relative_noise = 0.0;
  /// Keep only the diagonal of the estimated covariance.
  bool diagonal_noise = false;

  // Inversion.
  EkiConfig eki;
  PriorBox prior;
  int batches = 1;

  // Diagnostics.
  std::size_t histogram_bins = 40;
  double comparison_horizon = 0.0;
  std::vector<Vector> heldout_initial_conditions;
  double heldout_horizon = 0.0;
  std::size_t diagnostic_members = 10;

  nlohmann::json source;

  void validate() const;
};

/// Applies presets[preset] (JSON merge patch) and parses the result.
[[nodiscard]] ExperimentConfig parse_config(const nlohmann::json& j, const std::string& preset = "");
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path, const std::string& preset = "");

/// One case study: parameterization, truth and forward simulator.
class CaseModel {
 public:
  explicit CaseModel(const ExperimentConfig& cfg);

  [[nodiscard]] const ModelParameterization& parameterization() const noexcept { return param_; }
  /// Truth in free coordinates, when the truth lies inside the model class.
  [[nodiscard]] const std::optional<Vector>& truth_free() const noexcept { return truth_free_; }

  /// Truth trajectories, one per training initial condition.
  [[nodiscard]] std::vector<Trajectory> simulate_truth() const;
  /// Truth from arbitrary initial conditions and horizon (no spinup change).
  [[nodiscard]] std::vector<Trajectory> simulate_truth(const std::vector<Vector>& ics,
                                                       const IntegratorConfig& integ) const;
  /// Fitted model on `param` from the training initial conditions.
  [[nodiscard]] std::vector<Trajectory> simulate_model(const ModelParameterization& param, const Vector& free,
                                                       std::uint64_t seed) const;
  [[nodiscard]] std::vector<Trajectory> simulate_model(const ModelParameterization& param, const Vector& free,
                                                       std::uint64_t seed, const std::vector<Vector>& ics,
                                                       const IntegratorConfig& integ) const;

  [[nodiscard]] Vector data_from(const std::vector<Trajectory>& trajs) const;
  [[nodiscard]] ForwardModel forward() const;
  [[nodiscard]] const ExperimentConfig& config() const noexcept { return cfg_; }

 private:
  ExperimentConfig cfg_;
  ModelParameterization param_;
  std::optional<Vector> truth_free_;
  std::uint64_t forward_seed_;
};

struct TruthData {
  DataVector y;
  NoiseCovariance gamma;
  std::vector<Trajectory> trajectories;
  std::string hash;
  bool from_cache = false;
};

/// 64-bit FNV-1a over the truth-relevant part of the config, as hex.
[[nodiscard]] std::string truth_hash(const ExperimentConfig& cfg);

/// Simulates the truth and assembles (y, Gamma). With a cache directory the
/// result is stored there and reused while the truth-relevant config is unchanged.
[[nodiscard]] TruthData generate_truth(const ExperimentConfig& cfg,
                                       const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

/// Per-component L1 distance between normalized histograms on shared bins.
[[nodiscard]] Vector compare_invariant_measure(const Trajectory& a, const Trajectory& b, std::size_t bins);

struct HeldoutResult {
  Trajectory truth;
  Trajectory ensemble_mean;
  std::vector<Trajectory> members;
  /// Per state: sup_t |mean - truth| / sup_t |truth|.
  Vector deviation;
  std::size_t blown_up = 0;
};

/// Simulates every listed parameter vector and the truth from `ic`.
[[nodiscard]] HeldoutResult heldout_trajectory_test(const CaseModel& model, const ModelParameterization& param,
                                                    const std::vector<Vector>& members, const Vector& ic,
                                                    double horizon);

struct CoefficientRow {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double std = 0.0;
  bool surviving = true;
};

struct ExperimentReport {
  std::string case_id;
  Mode mode = Mode::Sparse;
  std::vector<CoefficientRow> coefficients;
  /// Final estimate in the original free coordinates.
  Vector estimate;
  std::vector<ConvergenceReport> batches;
  std::vector<std::size_t> survivors_per_batch;
  DataVector y;
  Vector fitted_data;
  nlohmann::json diagnostics;
  std::vector<std::string> files;

  [[nodiscard]] const CoefficientRow& row(const std::string& name) const;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> cache_dir;
  bool write_figures = true;
  bool diagnostics = true;
};

/// Full inversion for one case: truth, EKI (with pruning batches in sparse
/// mode), diagnostics, and output files.
[[nodiscard]] ExperimentReport run_case(const ExperimentConfig& cfg, Mode mode, const RunOptions& options);

void save_trajectory(const Trajectory& traj, const std::filesystem::path& path);
[[nodiscard]] Trajectory load_trajectory(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const ExperimentReport& r);

}  // namespace seki
