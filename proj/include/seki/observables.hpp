#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "seki/common.hpp"
#include "seki/simulate.hpp"

namespace seki {

struct DataVector {
  Vector values;
  std::vector<std::string> labels;

  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
  void append(const DataVector& other);
  void validate() const;
};

struct NoiseCovariance {
  Matrix matrix;

  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(matrix.rows()); }
  /// Symmetry to 1e-12 (relative) and a successful Cholesky factorization.
  [[nodiscard]] bool is_spd() const;
};

/// Which components enter the first and second moments.
struct MomentSpec {
  enum class Pairs { All, Diagonal };
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  Pairs pairs = Pairs::All;
  /// Also per-component third and fourth powers of the `first` set.
  bool higher = false;
};

struct ObservableSpec {
  MomentSpec moments;
  std::vector<std::size_t> autocorr_locations;
  /// Lags in model time units.
  std::vector<double> lags;
  std::size_t spatial_corr_points = 0;
  std::size_t n_windows = 10;

  /// Entries produced by compute_observables.
  [[nodiscard]] std::size_t data_size() const;
  void validate(std::size_t state_dim) const;
};

/// Time averages over the statistics window of the trajectory.
[[nodiscard]] DataVector moments(const Trajectory& traj, const MomentSpec& spec);

/// Biased estimator sum (z_t - zbar)(z_{t+tau} - zbar) / sum (z_t - zbar)^2.
[[nodiscard]] DataVector autocorrelation(const Trajectory& traj, std::size_t location,
                                         const std::vector<double>& lags);

/// Time-averaged periodic correlation C(x) from the mean power spectrum,
/// normalized to unit maximum, at every grid offset.
[[nodiscard]] Vector spatial_correlation_full(const Trajectory& field);

/// Offsets round(i (N/2) / (n_points - 1)), i = 0..n_points-1.
[[nodiscard]] std::vector<std::size_t> spatial_offsets(std::size_t n_points, std::size_t grid_size);

[[nodiscard]] DataVector spatial_correlation(const Trajectory& field, std::size_t n_points);

/// O(N^2) reference for spatial_correlation_full.
[[nodiscard]] Vector spatial_correlation_direct(const Trajectory& field);

/// Moments, autocorrelations and spatial correlation concatenated in that order.
[[nodiscard]] DataVector compute_observables(const Trajectory& traj, const ObservableSpec& spec);

inline constexpr double kCovarianceFloor = 1e-6;

/// Batch means over `n_windows` disjoint blocks of the statistics window:
/// sample covariance of block data / n_windows + floor * diag(1 + y^2).
[[nodiscard]] NoiseCovariance estimate_noise_covariance(const Trajectory& traj,
                                                        const ObservableSpec& spec,
                                                        std::size_t n_windows);

/// diag((relative * y)^2 + floor * (1 + y^2)); used for deterministic transients.
[[nodiscard]] NoiseCovariance relative_noise_covariance(const Vector& y, double relative,
                                                        double floor = kCovarianceFloor);

/// Expected data length per case identifier (0 when unconstrained).
[[nodiscard]] std::size_t expected_data_size(const std::string& case_id, std::size_t n_trajectories);

/// Statistics of every trajectory concatenated, covariance block-diagonal.
/// `relative_noise` > 0 switches to the relative noise model.
[[nodiscard]] std::pair<DataVector, NoiseCovariance> assemble_data(
    const std::string& case_id, const std::vector<Trajectory>& trajs, const ObservableSpec& spec,
    double relative_noise = 0.0);

void to_json(nlohmann::json& j, const DataVector& d);
void to_json(nlohmann::json& j, const NoiseCovariance& g);
void from_json(const nlohmann::json& j, DataVector& d);
void from_json(const nlohmann::json& j, NoiseCovariance& g);

}  // namespace seki
