#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "seki/common.hpp"

namespace seki {

/// Sampled state sequence. Row i of `states` is the state at `times[i]`.
struct Trajectory {
  std::vector<double> times;
  RowMatrix states;
  std::size_t spinup_index = 0;

  [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(states.cols()); }
  [[nodiscard]] Vector state(std::size_t i) const { return states.row(static_cast<Eigen::Index>(i)).transpose(); }
  /// Spacing between consecutive samples (uniform by construction).
  [[nodiscard]] double sample_interval() const;
  /// Rows [begin, end) as a new trajectory whose statistics window is the whole slice.
  [[nodiscard]] Trajectory slice(std::size_t begin, std::size_t end) const;
  /// Statistics window only.
  [[nodiscard]] Trajectory window() const { return slice(spinup_index, size()); }

  void validate() const;
  void write_csv(const std::string& path, const std::vector<std::string>& columns = {}) const;
};

struct IntegratorConfig {
  double dt = 1e-3;
  double horizon = 0.0;
  double spinup = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::pair<double, double>> clip_bounds;
  /// Recording interval; 0 records every step.
  double sample_interval = 0.0;
  /// Any state component with larger magnitude is treated as blow-up.
  double blowup_threshold = kInf;

  void validate() const;
  [[nodiscard]] std::size_t steps() const;
  [[nodiscard]] std::size_t stride() const;
};

using Rhs = std::function<void(const Vector& x, Vector& dx)>;

/// X_{n+1} = X_n + dt f(X_n) + amplitude * sqrt(dt) * xi_n.
[[nodiscard]] Trajectory euler_maruyama(const Rhs& rhs, const Vector& noise_amplitude,
                                        const Vector& x0, const IntegratorConfig& cfg);

[[nodiscard]] Trajectory rk4(const Rhs& rhs, const Vector& x0, const IntegratorConfig& cfg);

/// Single-scale Lorenz 96 drift -x_{k-1}(x_{k-2} - x_{k+1}) - x_k + F.
void lorenz96_rhs(const Vector& x, double forcing, Vector& dx);

struct MultiscaleL96 {
  int K = 36;
  int J = 10;
  double h = 1.0;
  double c = 10.0;
  double b = 10.0;
  double F = 10.0;

  void validate() const;
  /// Position of y_{j,k} (0-based, any integers) in the flattened fast state.
  /// Satisfies y_{j+J,k} = y_{j,k+1} and y_{j,k+K} = y_{j,k}.
  [[nodiscard]] std::size_t fast_index(int j, int k) const;
  [[nodiscard]] std::size_t slow_index(int k) const;
  /// Drift of the stacked state (x_1..x_K, y_{1,1}..y_{J,K}).
  void rhs(const Vector& state, Vector& dstate) const;
};

/// Integrates the coupled system with RK4 and returns the slow variables only.
/// When `fast_out` is given it receives the full fast trajectory as well.
[[nodiscard]] Trajectory simulate_multiscale_l96(const MultiscaleL96& model, const Vector& x0,
                                                 const Vector& y0, const IntegratorConfig& cfg,
                                                 Trajectory* fast_out = nullptr);

}  // namespace seki
