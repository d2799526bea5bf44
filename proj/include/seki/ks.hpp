#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "seki/common.hpp"
#include "seki/simulate.hpp"

namespace seki {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;

/// Coefficients of u_t = -sum_j (alpha_j d^j u + beta_j u^j u_x), j = 1..5.
struct KsParams {
  std::array<double, 5> alpha{};
  std::array<double, 5> beta{};

  static KsParams truth();
  static KsParams from_vector(const Vector& coefficients);
};

/// Uniform periodic grid of N points on [0, L) with real-to-complex FFTs.
/// Spectral arrays hold modes 0..N/2; the forward transform is unnormalized.
class SpectralGrid {
 public:
  SpectralGrid(std::size_t n, double length);

  [[nodiscard]] std::size_t size() const noexcept { return n_; }
  [[nodiscard]] std::size_t modes() const noexcept { return n_ / 2 + 1; }
  [[nodiscard]] double length() const noexcept { return length_; }
  /// xi_k = k / L.
  [[nodiscard]] const Vector& wavenumbers() const noexcept { return xi_; }
  [[nodiscard]] double x(std::size_t i) const { return length_ * static_cast<double>(i) / static_cast<double>(n_); }

  void forward(const Vector& u, ComplexVector& u_hat) const;
  void inverse(const ComplexVector& u_hat, Vector& u) const;
  [[nodiscard]] ComplexVector forward(const Vector& u) const;
  [[nodiscard]] Vector inverse(const ComplexVector& u_hat) const;

 private:
  std::size_t n_;
  double length_;
  Vector xi_;
  void* plan_r2c_ = nullptr;
  void* plan_c2r_ = nullptr;
};

/// L(xi) = -sum_j alpha_j (2 pi i xi)^j; odd powers vanish at the Nyquist mode.
[[nodiscard]] ComplexVector ks_linear_symbol(const KsParams& p, const SpectralGrid& grid);

/// N(u_hat) = -2 pi i xi F(sum_j beta_j / (j+1) u^{j+1}).
[[nodiscard]] ComplexVector ks_nonlinear(const ComplexVector& u_hat, const KsParams& p,
                                         const SpectralGrid& grid);

[[nodiscard]] ComplexVector ks_step_cnab2(const ComplexVector& u_hat_n,
                                          const ComplexVector& u_hat_prev, const KsParams& p,
                                          double dt, const SpectralGrid& grid);

[[nodiscard]] ComplexVector ks_step_ifab2(const ComplexVector& u_hat_n,
                                          const ComplexVector& u_hat_prev, const KsParams& p,
                                          double dt, const SpectralGrid& grid);

/// Clamp the physical-space field to [lower, upper].
[[nodiscard]] ComplexVector clip_state(const ComplexVector& u_hat, std::pair<double, double> bounds,
                                       const SpectralGrid& grid);

enum class KsScheme { CrankNicolsonAB2, IntegratingFactorAB2 };

[[nodiscard]] KsScheme ks_scheme_from_string(const std::string& name);

struct KsConfig {
  std::size_t n = 128;
  double length = 128.0;
  KsScheme scheme = KsScheme::CrankNicolsonAB2;
  IntegratorConfig integrator;
};

/// Field trajectory; row i holds u(x_0..x_{N-1}, t_i). The first step is
/// bootstrapped by taking u_{-1} = u_0, which reduces it to forward Euler
/// on the nonlinear term.
[[nodiscard]] Trajectory simulate_ks(const KsParams& p, const Vector& u0, const KsConfig& cfg);

/// Small smooth random initial field, reproducible from the seed.
[[nodiscard]] Vector ks_initial_condition(std::size_t n, std::uint64_t seed,
                                          double amplitude = 0.1);

}  // namespace seki
