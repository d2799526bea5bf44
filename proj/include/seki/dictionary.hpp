#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Sparse>

#include "seki/common.hpp"

namespace seki {

/// One candidate term phi_i of a modeled right-hand side.
///
/// Monomials have up to two state factors (`vars`, -1 for unused slots).
/// Gaussian bumps depend on a single state component and report degree 0.
struct BasisFunction {
  enum class Kind { Monomial, GaussianBump };

  std::string name;
  int degree = 0;
  Kind kind = Kind::Monomial;
  std::array<int, 2> vars{-1, -1};
  double center = 0.0;
  double width = 1.0;

  [[nodiscard]] double evaluate(std::span<const double> x) const;

  static BasisFunction constant();
  static BasisFunction linear(int i, const std::string& name);
  static BasisFunction quadratic(int i, int j, const std::string& name);
  static BasisFunction bump(int i, double center, double width, const std::string& name);
};

/// Ordered library of basis functions over a state of fixed dimension.
class BasisDictionary {
 public:
  BasisDictionary() = default;
  BasisDictionary(std::size_t state_dim, std::vector<BasisFunction> functions);

  [[nodiscard]] std::size_t state_dim() const noexcept { return state_dim_; }
  [[nodiscard]] std::size_t size() const noexcept { return functions_.size(); }
  [[nodiscard]] const BasisFunction& operator[](std::size_t i) const { return functions_[i]; }
  [[nodiscard]] const std::vector<BasisFunction>& functions() const noexcept { return functions_; }
  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& name) const;

 private:
  std::size_t state_dim_ = 0;
  std::vector<BasisFunction> functions_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class ModelFamily { Lorenz63, Lorenz96, Lorenz96Closure, Coalescence, KuramotoSivashinsky };

[[nodiscard]] std::string to_string(ModelFamily family);

/// Linear map from free parameters to the full coefficient vector, plus the
/// sparsity mask and inequality rows that define the feasible set.
///
/// The full vector is laid out as vec(theta) in row-major order (component k,
/// basis i at k * basis_count + i) followed by auxiliary scalars (the L63
/// noise level, the coalescence kernel entries, the K-S coefficients).
/// Inequality rows encode `inequality_matrix * free >= inequality_bound`.
struct ModelParameterization {
  ModelFamily family = ModelFamily::Lorenz63;
  BasisDictionary dictionary;
  std::vector<std::string> aux_names;
  std::vector<std::string> free_names;
  Eigen::SparseMatrix<double> embed_matrix;
  std::vector<bool> sparsity_mask;
  Matrix inequality_matrix;
  Vector inequality_bound;
  double l1_budget = kInf;
  double threshold = 0.0;
  double forcing = 0.0;
  /// Index of each free coordinate in the parameterization it was restricted from.
  std::vector<std::size_t> source_index;
  std::size_t source_dim = 0;

  [[nodiscard]] std::size_t free_dim() const noexcept { return free_names.size(); }
  [[nodiscard]] std::size_t state_dim() const noexcept { return dictionary.state_dim(); }
  [[nodiscard]] std::size_t basis_count() const noexcept { return dictionary.size(); }
  [[nodiscard]] std::size_t theta_size() const noexcept { return state_dim() * basis_count(); }
  [[nodiscard]] std::size_t full_dim() const noexcept { return theta_size() + aux_names.size(); }
  [[nodiscard]] std::size_t inequality_count() const noexcept {
    return static_cast<std::size_t>(inequality_matrix.rows());
  }
  [[nodiscard]] std::size_t masked_count() const;

  [[nodiscard]] Vector embed(const Vector& free) const;
  /// Left inverse of embed: reads each free coordinate from a slot that only it touches.
  [[nodiscard]] Vector project(const Vector& full) const;
  /// theta as an n x p matrix.
  [[nodiscard]] Matrix theta(const Vector& free) const;
  [[nodiscard]] double aux(const Vector& free, const std::string& name) const;
  [[nodiscard]] std::optional<std::size_t> free_index(const std::string& name) const;

  /// Smallest slack of the inequality rows (negative when violated).
  [[nodiscard]] double min_inequality_slack(const Vector& free) const;
  [[nodiscard]] double masked_l1(const Vector& free) const;
  [[nodiscard]] bool is_feasible(const Vector& free, double tol) const;

  /// Copy restricted to the listed free coordinates. Inequality rows that no
  /// longer involve any kept coordinate are dropped.
  [[nodiscard]] ModelParameterization restrict_to(const std::vector<std::size_t>& keep) const;
  /// Scatter a restricted free vector back to the source coordinates (zeros elsewhere).
  [[nodiscard]] Vector expand_to_source(const Vector& free) const;

  void validate() const;
  /// Recomputes the exclusive slot used by project(); call after editing embed_matrix.
  void finalize_projection();

  std::vector<std::size_t> primary_slot;
  std::vector<double> primary_coef;
};

/// Drift f(X) = theta * phi(X) + F compiled for repeated evaluation.
class CompiledDrift {
 public:
  CompiledDrift() = default;
  CompiledDrift(const ModelParameterization& param, const Vector& free,
                std::optional<int> only_degree = std::nullopt, bool include_forcing = true);

  void operator()(const Vector& x, Vector& dx) const;
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t term_count() const noexcept { return terms_.size(); }

 private:
  struct Term {
    std::size_t component;
    std::size_t basis;
    double coef;
  };
  std::size_t dim_ = 0;
  double forcing_ = 0.0;
  std::vector<BasisFunction> basis_;
  std::vector<Term> terms_;
};

// Builders for the shipped model families. Dictionaries are addressed by the
// identifiers "l63", "l96", "l96-closure", "coalescence" and "ks".

ModelParameterization build_l63_dictionary();
ModelParameterization build_l96_structured(int K, double forcing = 8.0);
ModelParameterization build_l96_closure(int K, double forcing = 10.0, double range_low = -10.0,
                                        double range_high = 15.0);
ModelParameterization build_coalescence_parameterization();
ModelParameterization build_ks_library(double alpha4_floor = 1e-3);
ModelParameterization build_parameterization(const std::string& id, int K = 0, double forcing = 0.0);

/// Sum_i theta_ki phi_i(X) (+ forcing) for every component k.
[[nodiscard]] Vector evaluate_rhs(const ModelParameterization& param, const Vector& free,
                                  const Vector& x);

/// Only the degree-2 terms of the modeled right-hand side.
[[nodiscard]] Vector quadratic_part(const ModelParameterization& param, const Vector& free,
                                    const Vector& x);

/// Truth coefficients in free coordinates.
[[nodiscard]] Vector l63_truth(double alpha, double rho, double beta, double sigma);
[[nodiscard]] Vector l96_truth(const ModelParameterization& param);

/// Coalescence kernel matrix c_ab from a free (or full) vector.
[[nodiscard]] Eigen::Matrix4d coalescence_kernel(const ModelParameterization& param,
                                                 const Vector& free);
/// Polynomial kernel sum_ab c_ab m^a m'^b.
[[nodiscard]] double kernel_value(const Eigen::Matrix4d& c, double m, double m_prime);

}  // namespace seki
