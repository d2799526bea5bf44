#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace seki {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A forward simulation produced a non-finite or out-of-range state.
class BlowUpError : public Error {
 public:
  BlowUpError(const std::string& what, double time) : Error(what), time_(time) {}
  [[nodiscard]] double time() const noexcept { return time_; }

 private:
  double time_;
};

/// splitmix64 finalizer; used to derive independent RNG streams.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                                  std::uint64_t b = 0) noexcept {
  return mix64(mix64(mix64(base) ^ a) ^ (b + 0x632be59bd9b4e019ULL));
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace seki
