#include "doctest.h"

#include <random>

#include "seki/dictionary.hpp"
#include "seki/simulate.hpp"

using namespace seki;
using Index = Eigen::Index;

namespace {

Vector random_vector(std::mt19937_64& rng, Index n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

Vector with(const ModelParameterization& p, std::initializer_list<std::pair<const char*, double>> values) {
  Vector v = Vector::Zero(static_cast<Index>(p.free_dim()));
  for (const auto& [name, value] : values) v(static_cast<Index>(*p.free_index(name))) = value;
  return v;
}

double energy(const ModelParameterization& p, const Vector& free, const Vector& x) {
  return x.dot(quadratic_part(p, free, x));
}

}  // namespace

TEST_CASE("basis functions evaluate monomials and report degree") {
  const std::vector<double> x{2.0, -3.0, 0.5};
  CHECK(BasisFunction::constant().evaluate(x) == 1.0);
  CHECK(BasisFunction::linear(1, "X2").evaluate(x) == -3.0);
  CHECK(BasisFunction::quadratic(0, 2, "X1*X3").evaluate(x) == doctest::Approx(1.0));
  CHECK(BasisFunction::quadratic(1, 1, "X2^2").degree == 2);
  CHECK(BasisFunction::linear(0, "X1").degree == 1);
  const auto bump = BasisFunction::bump(0, 2.0, 1.0, "g");
  CHECK(bump.evaluate(x) == doctest::Approx(1.0));
  CHECK(bump.degree == 0);
}

TEST_CASE("l63 dictionary layout and counts") {
  const auto p = build_l63_dictionary();
  REQUIRE(p.basis_count() == 9);
  const std::vector<std::string> order{"X1", "X2", "X3", "X1^2", "X2^2", "X3^2", "X1*X2", "X1*X3", "X2*X3"};
  for (std::size_t i = 0; i < order.size(); ++i) CHECK(p.dictionary[i].name == order[i]);
  CHECK(p.free_dim() == 18);
  CHECK(p.masked_count() == 17);
  CHECK_FALSE(p.sparsity_mask[*p.free_index("sigma")]);
  CHECK(p.aux_names == std::vector<std::string>{"sigma"});
  Vector neg = l63_truth(10, 28, 8.0 / 3.0, 10);
  neg(static_cast<Index>(*p.free_index("sigma"))) = -1.0;
  CHECK_FALSE(p.is_feasible(neg, 1e-12));
}

TEST_CASE("l63 truth lies in the constrained subspace and evaluates by hand") {
  const auto p = build_l63_dictionary();
  const Vector t = l63_truth(10.0, 28.0, 8.0 / 3.0, 10.0);
  const Matrix theta = p.theta(t);
  // x1 x3 in equation 2 and x1 x2 in equation 3 carry -1 and +1.
  CHECK(theta(1, 7) == doctest::Approx(-1.0));
  CHECK(theta(2, 6) == doctest::Approx(1.0));
  const Vector f = evaluate_rhs(p, t, Vector::Ones(3));
  CHECK(f(0) == doctest::Approx(0.0));
  CHECK(f(1) == doctest::Approx(26.0));
  CHECK(f(2) == doctest::Approx(-5.0 / 3.0));
  CHECK(p.aux(t, "sigma") == doctest::Approx(10.0));
  CHECK(evaluate_rhs(p, Vector::Zero(18), Vector::Ones(3)).norm() == 0.0);
}

TEST_CASE("quadratic terms carry no energy for l63 and l96") {
  std::mt19937_64 rng(11);
  for (const auto& p : {build_l63_dictionary(), build_l96_structured(8), build_l96_closure(6)}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const Vector free = random_vector(rng, static_cast<Index>(p.free_dim()), 3.0);
      const Vector x = random_vector(rng, static_cast<Index>(p.state_dim()), 5.0);
      CHECK(std::abs(energy(p, free, x)) <= 1e-10 * (1.0 + std::pow(x.norm(), 3)));
    }
  }
}

TEST_CASE("evaluate_rhs is linear in the free vector") {
  std::mt19937_64 rng(5);
  for (const auto& p : {build_l63_dictionary(), build_l96_structured(6)}) {
    const Index n = static_cast<Index>(p.free_dim());
    const Vector u = random_vector(rng, n), w = random_vector(rng, n);
    const Vector x = random_vector(rng, static_cast<Index>(p.state_dim()), 2.0);
    const double a = 1.7, b = -0.4;
    // The forcing is affine; remove it from both sides.
    const Vector f0 = evaluate_rhs(p, Vector::Zero(n), x);
    const Vector lhs = evaluate_rhs(p, a * u + b * w, x) - f0;
    const Vector rhs = a * (evaluate_rhs(p, u, x) - f0) + b * (evaluate_rhs(p, w, x) - f0);
    CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + rhs.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("embed then project is the identity for every family") {
  std::mt19937_64 rng(9);
  for (const char* id : {"l63", "l96", "l96-closure", "coalescence", "ks"}) {
    const auto p = build_parameterization(id, 7, 8.0);
    const Vector v = random_vector(rng, static_cast<Index>(p.free_dim()));
    CHECK((p.project(p.embed(v)) - v).norm() <= 1e-12);
    // Injective: a nonzero free vector never embeds to zero.
    CHECK(p.embed(v).norm() > 0.0);
  }
}

TEST_CASE("l96 structured parameterization") {
  CHECK(build_l96_structured(36).free_dim() == 180);
  CHECK_THROWS_AS((void)build_l96_structured(4), InvalidArgument);

  SUBCASE("truth pattern reproduces the single-scale drift") {
    const auto p = build_l96_structured(5, 8.0);
    const Vector t = l96_truth(p);
    Vector x(5);
    x << 1, 2, 3, 4, 5;
    const Vector f = evaluate_rhs(p, t, x);
    // Component k = 3 (1-based): -X2 (X1 - X4) - X3 + F.
    CHECK(f(2) == doctest::Approx(3.0 + 8.0));
    Vector ref(5);
    lorenz96_rhs(x, 8.0, ref);
    CHECK((f - ref).norm() <= 1e-12);
  }

  SUBCASE("shifting the state by one index shifts the drift") {
    std::mt19937_64 rng(2);
    const auto p = build_l96_structured(7, 8.0);
    const Vector t = l96_truth(p);
    const Vector x = random_vector(rng, 7, 3.0);
    Vector shifted(7);
    for (Index k = 0; k < 7; ++k) shifted(k) = x((k + 1) % 7);
    const Vector f = evaluate_rhs(p, t, x), g = evaluate_rhs(p, t, shifted);
    for (Index k = 0; k < 7; ++k) CHECK(g(k) == f((k + 1) % 7));
  }
}

TEST_CASE("l96 closure parameterization") {
  const auto p = build_l96_closure(36);
  CHECK(p.free_dim() == 190);
  CHECK(p.masked_count() == 180);
  std::mt19937_64 rng(4);
  const auto s = build_l96_closure(6, 10.0);
  const auto base = build_l96_structured(6, 10.0);
  Vector free = Vector::Zero(static_cast<Index>(s.free_dim()));
  free.head(30) = random_vector(rng, 30);
  const Vector x = random_vector(rng, 6, 3.0);
  CHECK((evaluate_rhs(s, free, x) - evaluate_rhs(base, free.head(30), x)).norm() <= 1e-12);
}

TEST_CASE("coalescence parameterization") {
  const auto p = build_coalescence_parameterization();
  CHECK(p.free_dim() == 9);
  CHECK(p.masked_count() == 9);
  CHECK_FALSE(p.free_index("c11").has_value());
  const Vector v = with(p, {{"c01", 0.7}});
  const Eigen::Matrix4d c = coalescence_kernel(p, v);
  CHECK(c(0, 1) == 0.7);
  CHECK(c(1, 0) == 0.7);
  CHECK(c(1, 1) == 0.0);
  std::mt19937_64 rng(1);
  const Vector r = random_vector(rng, 9).cwiseAbs();
  const Eigen::Matrix4d k = coalescence_kernel(p, r);
  CHECK(kernel_value(k, 1.0, 1.0) == doctest::Approx(k.sum()));
  CHECK(p.is_feasible(r, 0.0));
  CHECK_FALSE(p.is_feasible(-r, 0.0));
}

TEST_CASE("ks library") {
  const auto p = build_ks_library();
  CHECK(p.free_dim() == 10);
  CHECK(p.masked_count() == 10);
  const Vector truth = with(p, {{"alpha2", 1.0}, {"alpha4", 1.0}, {"beta1", 1.0}});
  CHECK(p.is_feasible(truth, 0.0));
  const Vector no_damping = with(p, {{"alpha2", 1.0}, {"beta1", 1.0}});
  CHECK_FALSE(p.is_feasible(no_damping, 0.0));
}

TEST_CASE("restriction keeps selected coordinates and scatters back") {
  const auto p = build_ks_library();
  const auto r = p.restrict_to({1, 3, 5});
  CHECK(r.free_dim() == 3);
  CHECK(r.free_names == std::vector<std::string>{"alpha2", "alpha4", "beta1"});
  Vector v(3);
  v << 1.0, 2.0, 3.0;
  const Vector back = r.expand_to_source(v);
  CHECK(back.size() == 10);
  CHECK(back(3) == 2.0);
  CHECK(back(0) == 0.0);
  // The alpha4 floor survives the restriction.
  CHECK(r.inequality_count() >= 1);
  const auto dropped = p.restrict_to({0, 1});
  CHECK(dropped.inequality_count() == 0);
}

TEST_CASE("compiled drift matches evaluate_rhs") {
  std::mt19937_64 rng(8);
  for (const auto& p : {build_l63_dictionary(), build_l96_structured(9, 8.0), build_l96_closure(6)}) {
    const Vector free = random_vector(rng, static_cast<Index>(p.free_dim()));
    const Vector x = random_vector(rng, static_cast<Index>(p.state_dim()), 2.0);
    const CompiledDrift drift(p, free);
    Vector dx(x.size());
    drift(x, dx);
    CHECK((dx - evaluate_rhs(p, free, x)).norm() <= 1e-12 * (1.0 + dx.norm()));
  }
}

TEST_CASE("dimension mismatch is rejected") {
  const auto p = build_l63_dictionary();
  CHECK_THROWS_AS((void)evaluate_rhs(p, Vector::Zero(5), Vector::Ones(3)), InvalidArgument);
  CHECK_THROWS_AS((void)evaluate_rhs(p, Vector::Zero(18), Vector::Ones(4)), InvalidArgument);
}
