#include "seki/qp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace seki {

namespace {

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Largest alpha in (0, 1] keeping x + alpha dx >= 0.
double max_step(const Vector& x, const Vector& dx) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (dx(i) < 0.0) a = std::min(a, -x(i) / dx(i));
  return a;
}

KktResiduals scaled_residuals(const QpProblem& p, const Vector& u, const Vector& z,
                              const KktResiduals& abs) {
  const Vector Qu = p.Q * u;
  const Vector Gtz = p.G.transpose() * z;
  const Vector Gu = p.G * u;
  KktResiduals s;
  s.stationarity = abs.stationarity / (1.0 + std::max({inf_norm(Qu), inf_norm(p.q), inf_norm(Gtz)}));
  s.primal = abs.primal / (1.0 + std::max(inf_norm(Gu), inf_norm(p.h)));
  s.complementarity = abs.complementarity / (1.0 + std::abs(p.objective(u)));
  return s;
}

class NewtonSystem {
 public:
  NewtonSystem(const QpProblem& p, double ridge) : p_(p), ridge_(ridge) {}

  bool factor(const Vector& s, const Vector& z) {
    d_ = z.cwiseQuotient(s);
    K_ = p_.Q;
    if (p_.G.rows() > 0) K_.noalias() += p_.G.transpose() * d_.asDiagonal() * p_.G;
    K_.diagonal().array() += ridge_;
    llt_.compute(K_);
    use_ldlt_ = llt_.info() != Eigen::Success;
    if (use_ldlt_) {
      ldlt_.compute(K_);
      if (ldlt_.info() != Eigen::Success) return false;
    }
    return true;
  }

  // Solves for (du, ds, dz) given the complementarity right-hand side rc.
  void solve(const Vector& rd, const Vector& rp, const Vector& s, const Vector& z,
             const Vector& rc, Vector& du, Vector& ds, Vector& dz) const {
    Vector rhs = -rd;
    if (p_.G.rows() > 0) rhs.noalias() += p_.G.transpose() * (rc - z.cwiseProduct(rp)).cwiseQuotient(s);
    du = use_ldlt_ ? Vector(ldlt_.solve(rhs)) : Vector(llt_.solve(rhs));
    ds = -rp - p_.G * du;
    dz = (-rc - z.cwiseProduct(ds)).cwiseQuotient(s);
  }

 private:
  const QpProblem& p_;
  double ridge_;
  Vector d_;
  Matrix K_;
  Eigen::LLT<Matrix> llt_;
  Eigen::LDLT<Matrix> ldlt_;
  bool use_ldlt_ = false;
};

double factor_ridge(const Matrix& Q) {
  const auto n = static_cast<double>(Q.rows());
  const double tr = Q.trace();
  return tr > 0.0 ? 1e-10 * tr / n : 1e-12;
}

QpSolution interior_point(const QpProblem& p, const QpOptions& opt) {
  const auto n = static_cast<Eigen::Index>(p.dim());
  const auto m = static_cast<Eigen::Index>(p.constraints());
  const double ridge = factor_ridge(p.Q);
  NewtonSystem newton(p, ridge);

  QpSolution sol;
  {
    Matrix K = p.Q;
    K.diagonal().array() += ridge;
    Eigen::LDLT<Matrix> ldlt(K);
    sol.u = ldlt.solve(-p.q);
    if (!sol.u.allFinite()) sol.u = Vector::Zero(n);
  }
  if (m == 0) {
    sol.z = Vector::Zero(0);
    sol.kkt = kkt_residuals(p, sol.u, sol.z);
    sol.scaled = scaled_residuals(p, sol.u, sol.z, sol.kkt);
    sol.iterations = 1;
    sol.objective_history.push_back(p.objective(sol.u));
    return sol;
  }
  Vector u = sol.u;
  Vector s = (p.h - p.G * u).cwiseMax(1.0);
  Vector z = Vector::Ones(m);
  Vector du, ds, dz, du2, ds2, dz2;

  QpSolution best;
  double best_score = kInf;
  const double target = 0.1 * opt.tol;
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Vector rd = p.Q * u + p.q + p.G.transpose() * z;
    const Vector rp = p.G * u + s - p.h;
    const double mu = s.dot(z) / static_cast<double>(m);

    QpSolution cur;
    cur.u = u;
    cur.z = z;
    cur.kkt = kkt_residuals(p, u, z);
    cur.scaled = scaled_residuals(p, u, z, cur.kkt);
    cur.iterations = it;
    sol.objective_history.push_back(p.objective(u));
    const double score = cur.scaled.max();
    if (score < best_score) {
      best_score = score;
      best = cur;
    }
    if (score <= target) break;

    if (!newton.factor(s, z)) break;
    // Predictor.
    Vector rc = s.cwiseProduct(z);
    newton.solve(rd, rp, s, z, rc, du, ds, dz);
    const double a_aff = std::min(max_step(s, ds), max_step(z, dz));
    const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(m);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
    // Corrector.
    rc.array() += ds.array() * dz.array() - sigma * mu;
    newton.solve(rd, rp, s, z, rc, du2, ds2, dz2);
    const double a = std::min(1.0, 0.99 * std::min(max_step(s, ds2), max_step(z, dz2)));
    if (!(a > 0.0) || !du2.allFinite()) break;
    u += a * du2;
    s += a * ds2;
    z += a * dz2;
    s = s.cwiseMax(1e-300);
    z = z.cwiseMax(1e-300);
  }
  best.objective_history = std::move(sol.objective_history);
  best.iterations = std::max(best.iterations, static_cast<int>(best.objective_history.size()));
  if (best_score <= opt.tol) return best;
  throw QpMaxIterations("interior point did not converge (scaled KKT " + std::to_string(best_score) + ")",
                        std::move(best));
}

// min t s.t. G u - t <= h, t >= -1, lightly regularized so the Newton system is definite.
double phase_one(const QpProblem& p) {
  const auto n = static_cast<Eigen::Index>(p.dim());
  const auto m = static_cast<Eigen::Index>(p.constraints());
  QpProblem lp;
  lp.Q = 1e-10 * Matrix::Identity(n + 1, n + 1);
  lp.q = Vector::Zero(n + 1);
  lp.q(n) = 1.0;
  lp.G = Matrix::Zero(m + 1, n + 1);
  lp.G.topLeftCorner(m, n) = p.G;
  lp.G.col(n).head(m).setConstant(-1.0);
  lp.G(m, n) = -1.0;
  lp.h.resize(m + 1);
  lp.h << p.h, 1.0;
  QpOptions o;
  o.tol = 1e-10;
  o.max_iterations = 100;
  try {
    const auto r = interior_point(lp, o);
    return r.u(n);
  } catch (const QpMaxIterations& e) {
    return e.best().u(n);
  }
}

// Re-solves the equality-constrained problem on the rows the interior point left
// active. A small proximal term pins the directions Q leaves free (split pairs),
// and a few proximal passes remove its bias elsewhere. The candidate replaces the
// interior-point answer only when its KKT residuals are smaller.
void polish(const QpProblem& p, QpSolution& sol) {
  const auto n = static_cast<Eigen::Index>(p.dim());
  std::vector<Eigen::Index> active;
  if (p.constraints() > 0) {
    const Vector slack = p.h - p.G * sol.u;
    for (Eigen::Index i = 0; i < slack.size(); ++i)
      if (sol.z(i) > slack(i)) active.push_back(i);
  }
  const auto a = static_cast<Eigen::Index>(active.size());
  const double rho = 1e-9 * (1.0 + (n > 0 ? p.Q.cwiseAbs().maxCoeff() : 0.0));
  Matrix K = Matrix::Zero(n + a, n + a);
  Vector rhs(n + a);
  K.topLeftCorner(n, n) = p.Q;
  K.topLeftCorner(n, n).diagonal().array() += rho;
  for (Eigen::Index k = 0; k < a; ++k) {
    const auto r = active[static_cast<std::size_t>(k)];
    K.block(0, n + k, n, 1) = p.G.row(r).transpose();
    K.block(n + k, 0, 1, n) = p.G.row(r);
    rhs(n + k) = p.h(r);
  }
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K);
  Vector x = Vector::Zero(n + a);
  x.head(n) = sol.u;
  for (int pass = 0; pass < 4; ++pass) {
    rhs.head(n) = rho * x.head(n) - p.q;
    x = cod.solve(rhs);
  }
  if (!x.allFinite()) return;
  QpSolution cand = sol;
  cand.u = x.head(n);
  cand.z = Vector::Zero(static_cast<Eigen::Index>(p.constraints()));
  for (Eigen::Index k = 0; k < a; ++k) cand.z(active[static_cast<std::size_t>(k)]) = std::max(0.0, x(n + k));
  cand.kkt = kkt_residuals(p, cand.u, cand.z);
  if (cand.kkt.max() >= sol.kkt.max()) return;
  cand.scaled = scaled_residuals(p, cand.u, cand.z, cand.kkt);
  cand.objective_history.push_back(p.objective(cand.u));
  sol = std::move(cand);
}

}  // namespace

double KktResiduals::max() const { return std::max({stationarity, primal, complementarity}); }

void QpProblem::validate() const {
  const auto n = q.size();
  require(Q.rows() == n && Q.cols() == n, "Q must be square and match q");
  require(G.cols() == n || G.rows() == 0, "G must have dim(q) columns");
  require(G.rows() == h.size(), "G and h disagree");
  require(Q.allFinite() && q.allFinite() && G.allFinite() && h.allFinite(),
          "QP data must be finite");
  const double scale = std::max(1.0, n == 0 ? 0.0 : Q.cwiseAbs().maxCoeff());
  require(n == 0 || (Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
          "Q must be symmetric");
}

KktResiduals kkt_residuals(const QpProblem& p, const Vector& u, const Vector& z) {
  KktResiduals r;
  Vector rd = p.Q * u + p.q;
  if (z.size() > 0) rd += p.G.transpose() * z;
  r.stationarity = inf_norm(rd);
  if (p.constraints() > 0) {
    const Vector viol = p.G * u - p.h;
    r.primal = std::max(0.0, viol.maxCoeff());
    r.complementarity = inf_norm(z.cwiseProduct(viol));
  }
  return r;
}

QpSolution solve_qp(const QpProblem& problem, const QpOptions& options) {
  problem.validate();
  const QpProblem* p = &problem;
  QpProblem shifted;
  // Unit-norm constraint rows keep slack and multiplier scales comparable.
  if (problem.constraints() > 0) {
    shifted = problem;
    for (Eigen::Index i = 0; i < shifted.G.rows(); ++i) {
      const double norm = shifted.G.row(i).norm();
      if (norm > 0.0) {
        shifted.G.row(i) /= norm;
        shifted.h(i) /= norm;
      } else if (shifted.h(i) < 0.0) {
        throw QpInfeasible("constraint row 0 <= " + std::to_string(shifted.h(i)) + " is violated",
                           -shifted.h(i));
      }
    }
    p = &shifted;
  }
  if (options.detect_infeasibility && p->constraints() > 0 && (p->h.array() <= 0.0).any()) {
    const double t = phase_one(*p);
    if (t > 1e-7 * (1.0 + inf_norm(p->h)))
      throw QpInfeasible("feasible set is empty (phase-1 violation " + std::to_string(t) + ")", t);
  }
  QpSolution sol = interior_point(*p, options);
  if (p != &problem) {
    // Undo the row scaling on the multipliers.
    for (Eigen::Index i = 0; i < problem.G.rows(); ++i) {
      const double norm = problem.G.row(i).norm();
      if (norm > 0.0) sol.z(i) /= norm;
    }
    sol.kkt = kkt_residuals(problem, sol.u, sol.z);
    sol.scaled = scaled_residuals(problem, sol.u, sol.z, sol.kkt);
  }
  polish(problem, sol);
  return sol;
}

QpSolution solve_qp(const QpProblem& problem, double tol) {
  QpOptions o;
  o.tol = tol;
  return solve_qp(problem, o);
}

Vector SplitProblem::recover(const Vector& u) const {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(original_dim));
  const auto nf = free_coords.size();
  const auto nb = budgeted.size();
  for (std::size_t i = 0; i < nf; ++i) v(static_cast<Eigen::Index>(free_coords[i])) = u(static_cast<Eigen::Index>(i));
  for (std::size_t j = 0; j < nb; ++j)
    v(static_cast<Eigen::Index>(budgeted[j])) =
        u(static_cast<Eigen::Index>(nf + j)) - u(static_cast<Eigen::Index>(nf + nb + j));
  return v;
}

Vector SplitProblem::lift(const Vector& v) const {
  const auto nf = free_coords.size();
  const auto nb = budgeted.size();
  Vector u(static_cast<Eigen::Index>(nf + 2 * nb));
  for (std::size_t i = 0; i < nf; ++i) u(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(free_coords[i]));
  for (std::size_t j = 0; j < nb; ++j) {
    const double x = v(static_cast<Eigen::Index>(budgeted[j]));
    u(static_cast<Eigen::Index>(nf + j)) = std::max(x, 0.0);
    u(static_cast<Eigen::Index>(nf + nb + j)) = std::max(-x, 0.0);
  }
  return u;
}

SplitProblem l1_split(const Matrix& Q, const Vector& q, const std::vector<bool>& budgeted,
                      double gamma, const Matrix& extra_G, const Vector& extra_h) {
  const auto n = q.size();
  require(Q.rows() == n && Q.cols() == n, "Q must match q");
  require(static_cast<Eigen::Index>(budgeted.size()) == n, "budget selector has wrong length");
  require(gamma > 0.0, "l1 budget must be positive");
  require(extra_G.rows() == extra_h.size() && (extra_G.rows() == 0 || extra_G.cols() == n),
          "extra inequalities have wrong shape");
  SplitProblem sp;
  sp.original_dim = static_cast<std::size_t>(n);
  if (!std::isfinite(gamma)) {
    for (Eigen::Index i = 0; i < n; ++i) sp.free_coords.push_back(static_cast<std::size_t>(i));
    sp.problem = {Q, q, extra_G.rows() > 0 ? extra_G : Matrix(0, n), extra_h};
    return sp;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    (budgeted[static_cast<std::size_t>(i)] ? sp.budgeted : sp.free_coords).push_back(static_cast<std::size_t>(i));
  const auto nf = static_cast<Eigen::Index>(sp.free_coords.size());
  const auto nb = static_cast<Eigen::Index>(sp.budgeted.size());
  Matrix M = Matrix::Zero(n, nf + 2 * nb);
  for (Eigen::Index i = 0; i < nf; ++i) M(static_cast<Eigen::Index>(sp.free_coords[static_cast<std::size_t>(i)]), i) = 1.0;
  for (Eigen::Index j = 0; j < nb; ++j) {
    const auto r = static_cast<Eigen::Index>(sp.budgeted[static_cast<std::size_t>(j)]);
    M(r, nf + j) = 1.0;
    M(r, nf + nb + j) = -1.0;
  }
  QpProblem& p = sp.problem;
  p.Q = M.transpose() * Q * M;
  p.Q = 0.5 * (p.Q + p.Q.transpose());
  p.q = M.transpose() * q;
  const Eigen::Index me = extra_G.rows();
  p.G = Matrix::Zero(me + 2 * nb + 1, nf + 2 * nb);
  p.h = Vector::Zero(me + 2 * nb + 1);
  if (me > 0) {
    p.G.topRows(me) = extra_G * M;
    p.h.head(me) = extra_h;
  }
  for (Eigen::Index j = 0; j < 2 * nb; ++j) p.G(me + j, nf + j) = -1.0;
  p.G.row(me + 2 * nb).tail(2 * nb).setOnes();
  p.h(me + 2 * nb) = gamma;
  return sp;
}

void to_json(nlohmann::json& j, const QpProblem& p) {
  auto mat = [](const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> r(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) r[static_cast<std::size_t>(c)] = m(i, c);
      rows.push_back(r);
    }
    return rows;
  };
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  j = nlohmann::json{{"Q", mat(p.Q)}, {"q", vec(p.q)}, {"G", mat(p.G)}, {"h", vec(p.h)}};
}

}  // namespace seki
