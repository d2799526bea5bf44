#include "seki/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace seki {

namespace {

using Triplet = Eigen::Triplet<double>;

std::string state_name(int i) { return "X" + std::to_string(i + 1); }

int wrap(int i, int n) { return ((i % n) + n) % n; }

// Incrementally assembles a parameterization from (slot, free, coefficient) triplets.
class Builder {
 public:
  Builder(ModelFamily family, BasisDictionary dict, std::vector<std::string> aux)
      : family_(family), dict_(std::move(dict)), aux_(std::move(aux)) {}

  std::size_t add_free(const std::string& name, bool masked) {
    names_.push_back(name);
    mask_.push_back(masked);
    return names_.size() - 1;
  }

  std::size_t theta_slot(std::size_t component, std::size_t basis) const {
    return component * dict_.size() + basis;
  }

  std::size_t theta_slot(std::size_t component, const std::string& basis) const {
    auto idx = dict_.index_of(basis);
    if (!idx) throw InvalidArgument("unknown basis function " + basis);
    return theta_slot(component, *idx);
  }

  std::size_t aux_slot(const std::string& name) const {
    auto it = std::find(aux_.begin(), aux_.end(), name);
    if (it == aux_.end()) throw InvalidArgument("unknown auxiliary entry " + name);
    return dict_.state_dim() * dict_.size() + static_cast<std::size_t>(it - aux_.begin());
  }

  void link(std::size_t slot, std::size_t free, double coef) {
    triplets_.emplace_back(static_cast<int>(slot), static_cast<int>(free), coef);
  }

  void lower_bound(std::size_t free, double bound) { bounds_.emplace_back(free, bound); }

  ModelParameterization finish(double forcing) {
    ModelParameterization p;
    p.family = family_;
    p.dictionary = std::move(dict_);
    p.aux_names = std::move(aux_);
    p.free_names = std::move(names_);
    p.sparsity_mask = std::move(mask_);
    p.forcing = forcing;
    p.embed_matrix.resize(static_cast<Eigen::Index>(p.full_dim()),
                          static_cast<Eigen::Index>(p.free_dim()));
    p.embed_matrix.setFromTriplets(triplets_.begin(), triplets_.end());
    p.embed_matrix.makeCompressed();
    p.inequality_matrix = Matrix::Zero(static_cast<Eigen::Index>(bounds_.size()),
                                       static_cast<Eigen::Index>(p.free_dim()));
    p.inequality_bound = Vector::Zero(static_cast<Eigen::Index>(bounds_.size()));
    for (std::size_t r = 0; r < bounds_.size(); ++r) {
      p.inequality_matrix(static_cast<Eigen::Index>(r),
                          static_cast<Eigen::Index>(bounds_[r].first)) = 1.0;
      p.inequality_bound(static_cast<Eigen::Index>(r)) = bounds_[r].second;
    }
    p.source_dim = p.free_dim();
    p.source_index.resize(p.free_dim());
    for (std::size_t i = 0; i < p.free_dim(); ++i) p.source_index[i] = i;
    p.finalize_projection();
    p.validate();
    return p;
  }

 private:
  ModelFamily family_;
  BasisDictionary dict_;
  std::vector<std::string> aux_;
  std::vector<std::string> names_;
  std::vector<bool> mask_;
  std::vector<Triplet> triplets_;
  std::vector<std::pair<std::size_t, double>> bounds_;
};

BasisDictionary l63_basis() {
  std::vector<BasisFunction> f;
  for (int i = 0; i < 3; ++i) f.push_back(BasisFunction::linear(i, state_name(i)));
  for (int i = 0; i < 3; ++i)
    f.push_back(BasisFunction::quadratic(i, i, state_name(i) + "^2"));
  f.push_back(BasisFunction::quadratic(0, 1, "X1*X2"));
  f.push_back(BasisFunction::quadratic(0, 2, "X1*X3"));
  f.push_back(BasisFunction::quadratic(1, 2, "X2*X3"));
  return BasisDictionary(3, std::move(f));
}

std::string quad_name(int i, int j) {
  if (i > j) std::swap(i, j);
  if (i == j) return state_name(i) + "^2";
  return state_name(i) + "*" + state_name(j);
}

BasisDictionary l96_basis(int K, bool closure, double low, double high) {
  std::vector<BasisFunction> f;
  for (int i = 0; i < K; ++i) f.push_back(BasisFunction::linear(i, state_name(i)));
  for (int i = 0; i < K; ++i)
    for (int j = i; j < K; ++j) f.push_back(BasisFunction::quadratic(i, j, quad_name(i, j)));
  if (closure) {
    const double spacing = (high - low) / 9.0;
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < 10; ++i) {
        std::ostringstream name;
        name << "psi" << i << "(" << state_name(k) << ")";
        f.push_back(BasisFunction::bump(k, low + i * spacing, spacing, name.str()));
      }
  }
  return BasisDictionary(static_cast<std::size_t>(K), std::move(f));
}

ModelParameterization build_l96(int K, double forcing, bool closure, double low, double high) {
  if (K < 5) throw InvalidArgument("Lorenz 96 parameterization needs K >= 5");
  if (closure && !(high > low)) throw InvalidArgument("closure range must be increasing");
  Builder b(closure ? ModelFamily::Lorenz96Closure : ModelFamily::Lorenz96,
            l96_basis(K, closure, low, high), {});
  auto q = [&](int k, int i, int j) {
    return b.theta_slot(static_cast<std::size_t>(wrap(k, K)),
                        quad_name(wrap(i, K), wrap(j, K)));
  };
  // Each beta_k^{(g)} enters two equations with opposite signs, which is what
  // makes the quadratic part orthogonal to X.
  for (int g = 1; g <= 4; ++g) {
    for (int k = 0; k < K; ++k) {
      const auto idx = b.add_free("beta" + std::to_string(g) + "[" + std::to_string(k + 1) + "]",
                                  true);
      switch (g) {
        case 1:  // -beta_k X_{k-1} X_{k-2} in eq k, +beta_k X_{k-2} X_k in eq k-1
          b.link(q(k, k - 1, k - 2), idx, -1.0);
          b.link(q(k - 1, k - 2, k), idx, 1.0);
          break;
        case 2:  // -beta_k X_{k-1} X_k in eq k, +beta_k X_k^2 in eq k-1
          b.link(q(k, k - 1, k), idx, -1.0);
          b.link(q(k - 1, k, k), idx, 1.0);
          break;
        case 3:  // -beta_k X_k X_{k+1} in eq k, +beta_k X_k^2 in eq k+1
          b.link(q(k, k, k + 1), idx, -1.0);
          b.link(q(k + 1, k, k), idx, 1.0);
          break;
        default:  // -beta_k X_{k-1} X_{k+1} in eq k, +beta_k X_k X_{k+1} in eq k-1
          b.link(q(k, k - 1, k + 1), idx, -1.0);
          b.link(q(k - 1, k, k + 1), idx, 1.0);
          break;
      }
    }
  }
  for (int k = 0; k < K; ++k) {
    const auto idx = b.add_free("alpha[" + std::to_string(k + 1) + "]", true);
    b.link(b.theta_slot(static_cast<std::size_t>(k), state_name(k)), idx, -1.0);
  }
  if (closure) {
    for (int i = 0; i < 10; ++i) {
      const auto idx = b.add_free("g[" + std::to_string(i) + "]", false);
      for (int k = 0; k < K; ++k) {
        std::ostringstream name;
        name << "psi" << i << "(" << state_name(k) << ")";
        b.link(b.theta_slot(static_cast<std::size_t>(k), name.str()), idx, 1.0);
      }
    }
  }
  return b.finish(forcing);
}

}  // namespace

double BasisFunction::evaluate(std::span<const double> x) const {
  if (kind == Kind::GaussianBump) {
    const double z = (x[static_cast<std::size_t>(vars[0])] - center) / width;
    return std::exp(-0.5 * z * z);
  }
  double v = 1.0;
  for (int var : vars)
    if (var >= 0) v *= x[static_cast<std::size_t>(var)];
  return v;
}

BasisFunction BasisFunction::constant() {
  BasisFunction f;
  f.name = "1";
  return f;
}

BasisFunction BasisFunction::linear(int i, const std::string& name) {
  BasisFunction f;
  f.name = name;
  f.degree = 1;
  f.vars = {i, -1};
  return f;
}

BasisFunction BasisFunction::quadratic(int i, int j, const std::string& name) {
  BasisFunction f;
  f.name = name;
  f.degree = 2;
  f.vars = {i, j};
  return f;
}

BasisFunction BasisFunction::bump(int i, double center, double width, const std::string& name) {
  require(width > 0.0, "bump width must be positive");
  BasisFunction f;
  f.name = name;
  f.kind = Kind::GaussianBump;
  f.vars = {i, -1};
  f.center = center;
  f.width = width;
  return f;
}

BasisDictionary::BasisDictionary(std::size_t state_dim, std::vector<BasisFunction> functions)
    : state_dim_(state_dim), functions_(std::move(functions)) {
  for (std::size_t i = 0; i < functions_.size(); ++i) {
    const auto& f = functions_[i];
    for (int v : f.vars)
      if (v >= static_cast<int>(state_dim_))
        throw InvalidArgument("basis function " + f.name + " references a missing component");
    if (!index_.emplace(f.name, i).second)
      throw InvalidArgument("duplicate basis function " + f.name);
  }
}

std::optional<std::size_t> BasisDictionary::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::Lorenz63: return "l63";
    case ModelFamily::Lorenz96: return "l96";
    case ModelFamily::Lorenz96Closure: return "l96-closure";
    case ModelFamily::Coalescence: return "coalescence";
    case ModelFamily::KuramotoSivashinsky: return "ks";
  }
  return "unknown";
}

std::size_t ModelParameterization::masked_count() const {
  return static_cast<std::size_t>(std::count(sparsity_mask.begin(), sparsity_mask.end(), true));
}

Vector ModelParameterization::embed(const Vector& free) const {
  if (static_cast<std::size_t>(free.size()) != free_dim())
    throw InvalidArgument("free vector has wrong dimension");
  return embed_matrix * free;
}

Vector ModelParameterization::project(const Vector& full) const {
  if (static_cast<std::size_t>(full.size()) != full_dim())
    throw InvalidArgument("full vector has wrong dimension");
  Vector free(static_cast<Eigen::Index>(free_dim()));
  for (std::size_t j = 0; j < free_dim(); ++j)
    free(static_cast<Eigen::Index>(j)) =
        full(static_cast<Eigen::Index>(primary_slot[j])) / primary_coef[j];
  return free;
}

Matrix ModelParameterization::theta(const Vector& free) const {
  const Vector full = embed(free);
  Matrix t(static_cast<Eigen::Index>(state_dim()), static_cast<Eigen::Index>(basis_count()));
  for (std::size_t k = 0; k < state_dim(); ++k)
    for (std::size_t i = 0; i < basis_count(); ++i)
      t(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) =
          full(static_cast<Eigen::Index>(k * basis_count() + i));
  return t;
}

double ModelParameterization::aux(const Vector& free, const std::string& name) const {
  auto it = std::find(aux_names.begin(), aux_names.end(), name);
  if (it == aux_names.end()) throw InvalidArgument("unknown auxiliary entry " + name);
  const auto row = static_cast<Eigen::Index>(theta_size() + (it - aux_names.begin()));
  double v = 0.0;
  for (Eigen::Index c = 0; c < embed_matrix.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator e(embed_matrix, c); e; ++e)
      if (e.row() == row) v += e.value() * free(c);
  return v;
}

std::optional<std::size_t> ModelParameterization::free_index(const std::string& name) const {
  auto it = std::find(free_names.begin(), free_names.end(), name);
  if (it == free_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - free_names.begin());
}

double ModelParameterization::min_inequality_slack(const Vector& free) const {
  if (inequality_count() == 0) return kInf;
  return (inequality_matrix * free - inequality_bound).minCoeff();
}

double ModelParameterization::masked_l1(const Vector& free) const {
  double s = 0.0;
  for (std::size_t i = 0; i < free_dim(); ++i)
    if (sparsity_mask[i]) s += std::abs(free(static_cast<Eigen::Index>(i)));
  return s;
}

bool ModelParameterization::is_feasible(const Vector& free, double tol) const {
  if (min_inequality_slack(free) < -tol) return false;
  return !std::isfinite(l1_budget) || masked_l1(free) <= l1_budget + tol;
}

ModelParameterization ModelParameterization::restrict_to(
    const std::vector<std::size_t>& keep) const {
  ModelParameterization r;
  r.family = family;
  r.dictionary = dictionary;
  r.aux_names = aux_names;
  r.l1_budget = l1_budget;
  r.threshold = threshold;
  r.forcing = forcing;
  r.source_dim = source_dim;
  std::vector<Triplet> trip;
  for (std::size_t n = 0; n < keep.size(); ++n) {
    const auto j = keep[n];
    require(j < free_dim(), "restrict_to index out of range");
    if (n > 0) require(keep[n - 1] < j, "restrict_to indices must be increasing");
    r.free_names.push_back(free_names[j]);
    r.sparsity_mask.push_back(sparsity_mask[j]);
    r.source_index.push_back(source_index[j]);
    for (Eigen::SparseMatrix<double>::InnerIterator e(embed_matrix, static_cast<Eigen::Index>(j));
         e; ++e)
      trip.emplace_back(static_cast<int>(e.row()), static_cast<int>(n), e.value());
  }
  r.embed_matrix.resize(static_cast<Eigen::Index>(full_dim()),
                        static_cast<Eigen::Index>(keep.size()));
  r.embed_matrix.setFromTriplets(trip.begin(), trip.end());
  r.embed_matrix.makeCompressed();

  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < inequality_matrix.rows(); ++i) {
    bool touches = false;
    for (auto j : keep)
      if (inequality_matrix(i, static_cast<Eigen::Index>(j)) != 0.0) touches = true;
    if (touches) rows.push_back(i);
  }
  r.inequality_matrix = Matrix::Zero(static_cast<Eigen::Index>(rows.size()),
                                     static_cast<Eigen::Index>(keep.size()));
  r.inequality_bound = Vector::Zero(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t n = 0; n < keep.size(); ++n)
      r.inequality_matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) =
          inequality_matrix(rows[i], static_cast<Eigen::Index>(keep[n]));
    r.inequality_bound(static_cast<Eigen::Index>(i)) = inequality_bound(rows[i]);
  }
  r.finalize_projection();
  r.validate();
  return r;
}

Vector ModelParameterization::expand_to_source(const Vector& free) const {
  require(static_cast<std::size_t>(free.size()) == free_dim(), "free vector has wrong dimension");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(source_dim));
  for (std::size_t i = 0; i < free_dim(); ++i)
    out(static_cast<Eigen::Index>(source_index[i])) = free(static_cast<Eigen::Index>(i));
  return out;
}

void ModelParameterization::validate() const {
  require(sparsity_mask.size() == free_dim(), "sparsity mask length must equal free_dim");
  require(static_cast<std::size_t>(embed_matrix.rows()) == full_dim() &&
              static_cast<std::size_t>(embed_matrix.cols()) == free_dim(),
          "embedding matrix has wrong shape");
  require(static_cast<std::size_t>(inequality_matrix.cols()) == free_dim() ||
              inequality_matrix.rows() == 0,
          "inequality matrix has wrong width");
  require(inequality_bound.size() == inequality_matrix.rows(), "inequality bound length mismatch");
  require(source_index.size() == free_dim(), "source index length mismatch");
  require(primary_slot.size() == free_dim(), "projection not finalized");
  require(l1_budget >= 0.0, "l1 budget must be nonnegative");
  require(threshold >= 0.0, "threshold must be nonnegative");
}

void ModelParameterization::finalize_projection() {
  std::vector<int> row_count(static_cast<std::size_t>(embed_matrix.rows()), 0);
  for (Eigen::Index c = 0; c < embed_matrix.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator e(embed_matrix, c); e; ++e)
      if (e.value() != 0.0) ++row_count[static_cast<std::size_t>(e.row())];
  primary_slot.assign(free_dim(), 0);
  primary_coef.assign(free_dim(), 0.0);
  for (Eigen::Index c = 0; c < embed_matrix.outerSize(); ++c) {
    bool found = false;
    for (Eigen::SparseMatrix<double>::InnerIterator e(embed_matrix, c); e; ++e) {
      if (e.value() != 0.0 && row_count[static_cast<std::size_t>(e.row())] == 1) {
        primary_slot[static_cast<std::size_t>(c)] = static_cast<std::size_t>(e.row());
        primary_coef[static_cast<std::size_t>(c)] = e.value();
        found = true;
        break;
      }
    }
    if (!found)
      throw InvalidArgument("free coordinate " + free_names[static_cast<std::size_t>(c)] +
                            " has no exclusive slot");
  }
}

CompiledDrift::CompiledDrift(const ModelParameterization& param, const Vector& free,
                             std::optional<int> only_degree, bool include_forcing)
    : dim_(param.state_dim()), forcing_(include_forcing ? param.forcing : 0.0) {
  const Vector full = param.embed(free);
  const std::size_t p = param.basis_count();
  std::vector<long> remap(p, -1);
  for (std::size_t k = 0; k < dim_; ++k) {
    for (std::size_t i = 0; i < p; ++i) {
      const double c = full(static_cast<Eigen::Index>(k * p + i));
      if (c == 0.0) continue;
      const auto& f = param.dictionary[i];
      if (only_degree && (f.kind != BasisFunction::Kind::Monomial || f.degree != *only_degree))
        continue;
      if (remap[i] < 0) {
        remap[i] = static_cast<long>(basis_.size());
        basis_.push_back(f);
      }
      terms_.push_back({k, static_cast<std::size_t>(remap[i]), c});
    }
  }
}

void CompiledDrift::operator()(const Vector& x, Vector& dx) const {
  dx.setConstant(static_cast<Eigen::Index>(dim_), forcing_);
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (const auto& t : terms_)
    dx(static_cast<Eigen::Index>(t.component)) += t.coef * basis_[t.basis].evaluate(xs);
}

ModelParameterization build_l63_dictionary() {
  Builder b(ModelFamily::Lorenz63, l63_basis(), {"sigma"});
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 3; ++i) {
      const auto idx = b.add_free("eq" + std::to_string(k + 1) + "." + state_name(i), true);
      b.link(b.theta_slot(static_cast<std::size_t>(k), static_cast<std::size_t>(i)), idx, 1.0);
    }
  // One antisymmetric direction per mixed cubic X_a^2 X_b: +c on X_a*X_b in
  // equation a, -c on X_a^2 in equation b.
  const std::array<std::array<int, 2>, 6> pairs{{{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}}};
  for (auto [a, bb] : pairs) {
    const std::string cross = quad_name(a, bb);
    const auto idx = b.add_free("eq" + std::to_string(a + 1) + "." + cross, true);
    b.link(b.theta_slot(static_cast<std::size_t>(a), cross), idx, 1.0);
    b.link(b.theta_slot(static_cast<std::size_t>(bb), quad_name(a, a)), idx, -1.0);
  }
  // X1*X2*X3: theta_{1,X2X3} = -(theta_{2,X1X3} + theta_{3,X1X2}).
  const auto slot_1_23 = b.theta_slot(0, "X2*X3");
  for (auto [k, name] : {std::pair{1, "X1*X3"}, std::pair{2, "X1*X2"}}) {
    const auto idx = b.add_free("eq" + std::to_string(k + 1) + "." + name, true);
    b.link(b.theta_slot(static_cast<std::size_t>(k), name), idx, 1.0);
    b.link(slot_1_23, idx, -1.0);
  }
  const auto sigma = b.add_free("sigma", false);
  b.link(b.aux_slot("sigma"), sigma, 1.0);
  b.lower_bound(sigma, 0.0);
  return b.finish(0.0);
}

ModelParameterization build_l96_structured(int K, double forcing) {
  return build_l96(K, forcing, false, 0.0, 1.0);
}

ModelParameterization build_l96_closure(int K, double forcing, double range_low,
                                        double range_high) {
  return build_l96(K, forcing, true, range_low, range_high);
}

ModelParameterization build_coalescence_parameterization() {
  std::vector<std::string> aux;
  for (int a = 0; a < 4; ++a)
    for (int c = 0; c < 4; ++c) aux.push_back("c" + std::to_string(a) + std::to_string(c));
  Builder b(ModelFamily::Coalescence, BasisDictionary(3, {}), aux);
  for (int a = 0; a < 4; ++a)
    for (int c = a; c < 4; ++c) {
      if (a == 1 && c == 1) continue;
      const std::string name = "c" + std::to_string(a) + std::to_string(c);
      const auto idx = b.add_free(name, true);
      b.link(b.aux_slot(name), idx, 1.0);
      if (a != c) b.link(b.aux_slot("c" + std::to_string(c) + std::to_string(a)), idx, 1.0);
      b.lower_bound(idx, 0.0);
    }
  return b.finish(0.0);
}

ModelParameterization build_ks_library(double alpha4_floor) {
  std::vector<std::string> names;
  for (const char* g : {"alpha", "beta"})
    for (int j = 1; j <= 5; ++j) names.push_back(g + std::to_string(j));
  Builder b(ModelFamily::KuramotoSivashinsky, BasisDictionary(0, {}), names);
  for (const auto& n : names) {
    const auto idx = b.add_free(n, true);
    b.link(b.aux_slot(n), idx, 1.0);
    if (n == "alpha4") b.lower_bound(idx, alpha4_floor);
  }
  return b.finish(0.0);
}

ModelParameterization build_parameterization(const std::string& id, int K, double forcing) {
  if (id == "l63") return build_l63_dictionary();
  if (id == "l96") return build_l96_structured(K == 0 ? 36 : K, forcing == 0.0 ? 8.0 : forcing);
  if (id == "l96-closure")
    return build_l96_closure(K == 0 ? 36 : K, forcing == 0.0 ? 10.0 : forcing);
  if (id == "coalescence") return build_coalescence_parameterization();
  if (id == "ks") return build_ks_library();
  throw InvalidArgument("unknown dictionary id " + id);
}

Vector evaluate_rhs(const ModelParameterization& param, const Vector& free, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != param.state_dim())
    throw InvalidArgument("state has wrong dimension");
  Vector dx;
  CompiledDrift(param, free)(x, dx);
  return dx;
}

Vector quadratic_part(const ModelParameterization& param, const Vector& free, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != param.state_dim())
    throw InvalidArgument("state has wrong dimension");
  Vector dx;
  CompiledDrift(param, free, 2, false)(x, dx);
  return dx;
}

Vector l63_truth(double alpha, double rho, double beta, double sigma) {
  const auto p = build_l63_dictionary();
  Vector v = Vector::Zero(static_cast<Eigen::Index>(p.free_dim()));
  auto set = [&](const std::string& name, double value) {
    v(static_cast<Eigen::Index>(*p.free_index(name))) = value;
  };
  set("eq1.X1", -alpha);
  set("eq1.X2", alpha);
  set("eq2.X1", rho);
  set("eq2.X2", -1.0);
  set("eq3.X3", -beta);
  set("eq2.X1*X3", -1.0);
  set("eq3.X1*X2", 1.0);
  set("sigma", sigma);
  return v;
}

Vector l96_truth(const ModelParameterization& param) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(param.free_dim()));
  for (std::size_t i = 0; i < param.free_dim(); ++i) {
    const auto& n = param.free_names[i];
    if (n.rfind("beta1[", 0) == 0 || n.rfind("alpha[", 0) == 0) v(static_cast<Eigen::Index>(i)) = 1.0;
  }
  return v;
}

Eigen::Matrix4d coalescence_kernel(const ModelParameterization& param, const Vector& free) {
  require(param.family == ModelFamily::Coalescence, "not a coalescence parameterization");
  const Vector full =
      static_cast<std::size_t>(free.size()) == param.free_dim() ? param.embed(free) : free;
  require(static_cast<std::size_t>(full.size()) == param.full_dim(), "kernel vector has wrong size");
  Eigen::Matrix4d c;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) c(a, b) = full(param.theta_size() + 4 * a + b);
  return c;
}

double kernel_value(const Eigen::Matrix4d& c, double m, double m_prime) {
  double s = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) s += c(a, b) * std::pow(m, a) * std::pow(m_prime, b);
  return s;
}

}  // namespace seki
