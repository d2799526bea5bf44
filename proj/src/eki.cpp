#include "seki/eki.hpp"

#include <algorithm>
#include <cmath>

#include "seki/parallel.hpp"

namespace seki {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

Matrix sample_covariance(const Matrix& a, const Matrix& b) {
  const Index J = a.cols();
  const Matrix da = a.colwise() - a.rowwise().mean();
  const Matrix db = b.colwise() - b.rowwise().mean();
  return da * db.transpose() / static_cast<double>(J - 1);
}

void add_jitter(Matrix& c, double jitter) {
  if (jitter > 0.0) c.diagonal().array() += jitter * (1.0 + c.diagonal().array());
}

Matrix spd_inverse(const Matrix& a, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw Error(std::string(what) + " is not positive definite");
  return llt.solve(Matrix::Identity(a.rows(), a.cols()));
}

double effective_budget(const EkiConfig& cfg, const ModelParameterization& param) {
  return std::min(cfg.gamma, param.l1_budget);
}

Vector sample_spread(const Matrix& members) {
  const Index J = members.cols();
  if (J < 2) return Vector::Zero(members.rows());
  const Matrix d = members.colwise() - members.rowwise().mean();
  return (d.rowwise().squaredNorm() / static_cast<double>(J - 1)).cwiseSqrt();
}

Vector perturbed_draw(const Vector& mean, const Vector& spread, const ModelParameterization& param,
                      double budget, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector x = mean;
  for (Index i = 0; i < x.size(); ++i) x(i) += spread(i) * normal(rng);
  return project_feasible(x, param, budget);
}

Vector draw_prior_member(const ModelParameterization& param, const EkiConfig& cfg, double budget,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector x(cfg.prior_lower.size());
  for (Index i = 0; i < x.size(); ++i) {
    std::uniform_real_distribution<double> u(cfg.prior_lower(i), cfg.prior_upper(i));
    x(i) = cfg.prior_lower(i) == cfg.prior_upper(i) ? cfg.prior_lower(i) : u(rng);
  }
  return project_feasible(x, param, budget);
}

// Replaces flagged columns by draws around the mean and spread of the others.
void resample_failed(Matrix& members, const std::vector<bool>& failed, const ModelParameterization& param,
                     double budget, std::uint64_t seed) {
  std::vector<Index> ok;
  for (std::size_t j = 0; j < failed.size(); ++j)
    if (!failed[j]) ok.push_back(idx(j));
  if (ok.empty()) throw Error("every ensemble member failed");
  Matrix good(members.rows(), idx(ok.size()));
  for (std::size_t n = 0; n < ok.size(); ++n) good.col(idx(n)) = members.col(ok[n]);
  const Vector mean = good.rowwise().mean();
  const Vector spread = sample_spread(good);
  for (std::size_t j = 0; j < failed.size(); ++j)
    if (failed[j]) members.col(idx(j)) = perturbed_draw(mean, spread, param, budget, derive_seed(seed, j));
}

// Evaluates G on every member, resampling members whose forward run fails.
Matrix evaluate_ensemble(const ForwardModel& forward, const ModelParameterization& param, Matrix& members,
                         std::size_t data_dim, int iteration, const EkiConfig& cfg, std::size_t& failures,
                         const Matrix* previous, const Matrix* previous_g) {
  const std::size_t J = static_cast<std::size_t>(members.cols());
  Matrix g(idx(data_dim), idx(J));
  std::vector<bool> pending(J, true);
  const double budget = effective_budget(cfg, param);
  for (int round = 0;; ++round) {
    std::vector<bool> failed(J, false);
    std::vector<std::size_t> bad_size(J, 0);
    parallel_for(
        J,
        [&](std::size_t j) {
          if (!pending[j]) return;
          const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(iteration),
                                              j + J * static_cast<std::size_t>(round));
          try {
            Vector out = forward(param, members.col(idx(j)), s);
            if (static_cast<std::size_t>(out.size()) != data_dim) {
              bad_size[j] = static_cast<std::size_t>(out.size()) + 1;
              return;
            }
            if (!out.allFinite()) {
              failed[j] = true;
              return;
            }
            g.col(idx(j)) = out;
          } catch (const std::exception&) {
            failed[j] = true;
          }
        },
        cfg.threads);
    for (std::size_t j = 0; j < J; ++j)
      if (bad_size[j] != 0)
        throw InvalidArgument("forward model returned " + std::to_string(bad_size[j] - 1) +
                              " entries, expected " + std::to_string(data_dim));
    const auto n_failed = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), true));
    failures += n_failed;
    if (n_failed == 0) return g;
    const bool backtrack = cfg.failure_policy == EkiConfig::FailurePolicy::Backtrack && previous != nullptr;
    if (backtrack && round >= cfg.max_resample_rounds) {
      // Out of halvings: the member keeps its last accepted state and output.
      for (std::size_t j = 0; j < J; ++j)
        if (failed[j]) {
          members.col(idx(j)) = previous->col(idx(j));
          g.col(idx(j)) = previous_g->col(idx(j));
        }
      return g;
    }
    if (round >= (iteration == 0 ? 10 * cfg.max_resample_rounds : cfg.max_resample_rounds))
      throw Error("forward model kept failing after " + std::to_string(round) + " resampling rounds");
    if (iteration == 0) {
      // Rejection from the prior: the starting ensemble only holds members with a usable forward run.
      for (std::size_t j = 0; j < J; ++j)
        if (failed[j])
          members.col(idx(j)) = draw_prior_member(param, cfg, budget, derive_seed(cfg.seed, 0x1417ULL, j + J * (round + 1)));
    } else if (backtrack) {
      for (std::size_t j = 0; j < J; ++j)
        if (failed[j]) members.col(idx(j)) = 0.5 * (members.col(idx(j)) + previous->col(idx(j)));
    } else {
      resample_failed(members, failed, param, budget,
                      derive_seed(cfg.seed ^ 0x7e5a3b1dULL, static_cast<std::uint64_t>(iteration),
                                  static_cast<std::uint64_t>(round)));
    }
    pending = failed;
  }
}

}  // namespace

void EkiConfig::validate(std::size_t free_dim) const {
  require(ensemble_size >= 2, "ensemble needs at least two members");
  require(max_iterations >= 0, "max_iterations must be nonnegative");
  require(jitter >= 0.0, "jitter must be nonnegative");
  require(gamma > 0.0, "l1 budget must be positive");
  require(lambda >= 0.0, "threshold lambda must be nonnegative");
  require(static_cast<std::size_t>(prior_lower.size()) == free_dim &&
              static_cast<std::size_t>(prior_upper.size()) == free_dim,
          "prior box must have one interval per free coordinate");
  require((prior_lower.array() <= prior_upper.array()).all(), "prior box lower bound exceeds upper bound");
  require(prior_lower.allFinite() && prior_upper.allFinite(), "prior box must be finite");
  require(qp_tol > 0.0, "qp tolerance must be positive");
  require(max_resample_rounds >= 0, "max_resample_rounds must be nonnegative");
}

Vector Ensemble::spread() const { return sample_spread(members); }

Matrix eki_update(const Matrix& members, const Matrix& g_evals, const Matrix& observations,
                  const Matrix& gamma, double jitter) {
  const Index J = members.cols();
  require(J >= 2, "ensemble needs at least two members");
  require(g_evals.cols() == J && observations.cols() == J, "ensemble, G and observations disagree in size");
  require(g_evals.rows() == observations.rows() && gamma.rows() == g_evals.rows() &&
              gamma.cols() == g_evals.rows(),
          "data dimension mismatch");
  const Matrix c_tg = sample_covariance(members, g_evals);
  Matrix c_gg = sample_covariance(g_evals, g_evals);
  add_jitter(c_gg, jitter);
  const Matrix s = c_gg + gamma;
  Eigen::LDLT<Matrix> ldlt(s);
  if (ldlt.info() != Eigen::Success) throw Error("innovation covariance factorization failed");
  const Matrix innov = observations - g_evals;
  return members + c_tg * ldlt.solve(innov);
}

Matrix member_observations(const Vector& y, const Matrix& gamma, std::size_t members, bool perturb,
                           std::uint64_t seed) {
  Matrix out = y.replicate(1, idx(members));
  if (!perturb) return out;
  Eigen::LLT<Matrix> llt(gamma);
  if (llt.info() != Eigen::Success) throw Error("noise covariance is not positive definite");
  const Matrix L = llt.matrixL();
  std::normal_distribution<double> normal;
  for (std::size_t j = 0; j < members; ++j) {
    std::mt19937_64 rng(derive_seed(seed, j));
    Vector xi(y.size());
    for (Index i = 0; i < xi.size(); ++i) xi(i) = normal(rng);
    out.col(idx(j)) += L * xi;
  }
  return out;
}

SparseStep::SparseStep(const Matrix& members, const Matrix& g_evals, const Matrix& gamma,
                       const ModelParameterization& param, double gamma_budget, double jitter)
    : p_(static_cast<std::size_t>(members.rows())), d_(static_cast<std::size_t>(g_evals.rows())) {
  require(members.cols() == g_evals.cols() && members.cols() >= 2, "ensemble and G disagree in size");
  require(p_ == param.free_dim(), "ensemble dimension does not match the parameterization");
  require(gamma.rows() == idx(d_) && gamma.cols() == idx(d_), "noise covariance has wrong shape");
  const Index n = idx(p_ + d_);
  Matrix psi(n, members.cols());
  psi.topRows(idx(p_)) = members;
  psi.bottomRows(idx(d_)) = g_evals;
  c_psi_ = sample_covariance(psi, psi);
  Matrix reg = c_psi_;
  add_jitter(reg, jitter > 0.0 ? jitter : 1e-12);
  c_inv_ = spd_inverse(reg, "augmented ensemble covariance");
  gamma_inv_ = spd_inverse(gamma, "noise covariance");

  Matrix Q = c_inv_;
  Q.bottomRightCorner(idx(d_), idx(d_)) += gamma_inv_;
  Q = 0.5 * (Q + Q.transpose());
  std::vector<bool> budgeted(p_ + d_, false);
  for (std::size_t i = 0; i < p_; ++i) budgeted[i] = param.sparsity_mask[i];
  const Index m = idx(param.inequality_count());
  Matrix G = Matrix::Zero(m, n);
  if (m > 0) G.leftCols(idx(p_)) = -param.inequality_matrix;
  const Vector h = -param.inequality_bound;
  split_ = l1_split(Q, Vector::Zero(n), budgeted, gamma_budget, G, h);
}

QpSolution SparseStep::solve(const Vector& theta, const Vector& g_eval, const Vector& y_j, double tol) const {
  Vector psi(idx(p_ + d_));
  psi << theta, g_eval;
  Vector q = -(c_inv_ * psi);
  q.tail(idx(d_)) -= gamma_inv_ * y_j;
  // M' q for the split variables (free, +, -).
  const auto nf = split_.free_coords.size();
  const auto nb = split_.budgeted.size();
  QpProblem prob = split_.problem;
  for (std::size_t i = 0; i < nf; ++i) prob.q(idx(i)) = q(idx(split_.free_coords[i]));
  for (std::size_t j = 0; j < nb; ++j) {
    prob.q(idx(nf + j)) = q(idx(split_.budgeted[j]));
    prob.q(idx(nf + nb + j)) = -q(idx(split_.budgeted[j]));
  }
  QpOptions opt;
  opt.tol = tol;
  opt.max_iterations = 200;
  return solve_qp(prob, opt);
}

Vector SparseStep::theta_block(const QpSolution& s) const { return split_.recover(s.u).head(idx(p_)); }

Vector sparse_member_step(const Matrix& members, const Matrix& g_evals, std::size_t member, const Vector& y_j,
                          const Matrix& gamma, const ModelParameterization& param, const EkiConfig& cfg) {
  require(member < static_cast<std::size_t>(members.cols()), "member index out of range");
  const SparseStep step(members, g_evals, gamma, param, effective_budget(cfg, param), cfg.jitter);
  return step.theta_block(step.solve(members.col(idx(member)), g_evals.col(idx(member)), y_j, cfg.qp_tol));
}

Vector threshold(const Vector& theta, double lambda, const std::vector<bool>& mask) {
  require(static_cast<std::size_t>(theta.size()) == mask.size(), "mask length does not match theta");
  require(lambda >= 0.0, "threshold lambda must be nonnegative");
  const double cut = std::sqrt(2.0 * lambda);
  Vector out = theta;
  for (Index i = 0; i < out.size(); ++i)
    if (mask[static_cast<std::size_t>(i)] && std::abs(out(i)) < cut) out(i) = 0.0;
  return out;
}

Vector threshold_feasible(const Vector& theta, double lambda, const ModelParameterization& param) {
  Vector out = threshold(theta, lambda, param.sparsity_mask);
  if (param.inequality_count() == 0) return out;
  const Matrix& A = param.inequality_matrix;
  const Vector& a = param.inequality_bound;
  const Vector before = A * theta - a;
  for (std::size_t pass = 0; pass < param.free_dim(); ++pass) {
    const Vector slack = A * out - a;
    bool changed = false;
    for (Index r = 0; r < A.rows(); ++r) {
      // Only rows the thresholding itself broke.
      if (slack(r) >= 0.0 || slack(r) >= before(r)) continue;
      for (Index i = 0; i < A.cols(); ++i)
        if (A(r, i) != 0.0 && out(i) == 0.0 && theta(i) != 0.0) {
          out(i) = theta(i);
          changed = true;
        }
    }
    if (!changed) break;
  }
  return out;
}

Vector project_feasible(const Vector& theta, const ModelParameterization& param, double gamma) {
  require(static_cast<std::size_t>(theta.size()) == param.free_dim(), "theta has wrong dimension");
  const double budget = std::min(gamma, param.l1_budget);
  if (param.is_feasible(theta, 0.0) && param.masked_l1(theta) <= budget) return theta;
  const Index n = theta.size();
  const Matrix G = -param.inequality_matrix;
  const Vector h = -param.inequality_bound;
  const SplitProblem sp = l1_split(Matrix::Identity(n, n), -theta, param.sparsity_mask, budget,
                                   G.rows() > 0 ? G : Matrix(0, n), h);
  QpSolution s;
  try {
    s = solve_qp(sp.problem, 1e-10);
  } catch (const QpMaxIterations& e) {
    s = e.best();
  }
  Vector out = sp.recover(s.u);
  // Clean up interior-point residue on the inequality rows.
  for (Index r = 0; r < param.inequality_matrix.rows(); ++r) {
    const double slack = param.inequality_matrix.row(r).dot(out) - param.inequality_bound(r);
    if (slack < 0.0) {
      const Vector row = param.inequality_matrix.row(r).transpose();
      out -= slack * row / row.squaredNorm();
    }
  }
  return out;
}

Ensemble initialize_ensemble(const ModelParameterization& param, const EkiConfig& cfg) {
  cfg.validate(param.free_dim());
  const Index p = idx(param.free_dim());
  const double budget = effective_budget(cfg, param);
  Ensemble e;
  e.members.resize(p, idx(cfg.ensemble_size));
  for (std::size_t j = 0; j < cfg.ensemble_size; ++j)
    e.members.col(idx(j)) = draw_prior_member(param, cfg, budget, derive_seed(cfg.seed, 0x1417ULL, j));
  return e;
}

double data_misfit(const Vector& y, const Vector& g, const Eigen::LLT<Matrix>& gamma_llt) {
  const Vector r = gamma_llt.matrixL().solve(y - g);
  return 0.5 * r.squaredNorm();
}

EkiResult run_sparse_eki(const ForwardModel& forward, const Vector& y, const Matrix& gamma,
                         const ModelParameterization& param, const EkiConfig& cfg) {
  return run_sparse_eki(forward, y, gamma, param, cfg, initialize_ensemble(param, cfg));
}

EkiResult run_sparse_eki(const ForwardModel& forward, const Vector& y, const Matrix& gamma,
                         const ModelParameterization& param, const EkiConfig& cfg, Ensemble initial) {
  cfg.validate(param.free_dim());
  require(static_cast<std::size_t>(initial.members.rows()) == param.free_dim(),
          "initial ensemble has wrong dimension");
  require(initial.members.cols() >= 2, "ensemble needs at least two members");
  require(gamma.rows() == y.size() && gamma.cols() == y.size(), "noise covariance does not match data");
  const Eigen::LLT<Matrix> gamma_llt(gamma);
  require(gamma_llt.info() == Eigen::Success, "noise covariance must be positive definite");

  const std::size_t d = static_cast<std::size_t>(y.size());
  const double budget = effective_budget(cfg, param);
  EkiResult res;
  res.ensemble = std::move(initial);
  ConvergenceReport& rep = res.report;
  rep.names = param.free_names;
  Matrix& X = res.ensemble.members;
  const std::size_t J = static_cast<std::size_t>(X.cols());
  std::size_t fallbacks = 0;
  Matrix previous, previous_g, G;

  for (int m = 0;; ++m) {
    std::size_t failures = 0;
    G = evaluate_ensemble(forward, param, X, d, m, cfg, failures, m > 0 ? &previous : nullptr,
                          m > 0 ? &previous_g : nullptr);
    rep.total_failures += failures;

    IterationRecord rec;
    rec.iteration = m;
    rec.mean = X.rowwise().mean();
    rec.spread = sample_spread(X);
    rec.masked_l1 = param.masked_l1(rec.mean);
    rec.failed_members = failures;
    rec.qp_fallbacks = fallbacks;
    try {
      const Vector gm = forward(param, rec.mean, derive_seed(cfg.seed, static_cast<std::uint64_t>(m), J * 1000));
      rec.misfit = gm.allFinite() && gm.size() == y.size() ? data_misfit(y, gm, gamma_llt)
                                                           : data_misfit(y, G.rowwise().mean(), gamma_llt);
    } catch (const std::exception&) {
      rec.misfit = data_misfit(y, G.rowwise().mean(), gamma_llt);
    }
    rep.history.push_back(rec);

    if (cfg.discrepancy_stop && rec.misfit <= 0.5 * static_cast<double>(d)) {
      rep.stopped_early = true;
      rep.stop_reason = "discrepancy";
      break;
    }
    if (m >= cfg.max_iterations) {
      rep.stop_reason = "max_iterations";
      break;
    }

    previous = X;
    previous_g = G;
    const Matrix Y = member_observations(y, gamma, J, cfg.perturb_observations,
                                         derive_seed(cfg.seed ^ 0x0b5e7a11ULL, static_cast<std::uint64_t>(m)));
    if (!cfg.sparse) {
      X = eki_update(X, G, Y, gamma, cfg.jitter);
    } else {
      const SparseStep step(X, G, gamma, param, budget, cfg.jitter);
      Matrix next(X.rows(), X.cols());
      std::vector<bool> failed(J, false);
      std::vector<bool> fell_back(J, false);
      parallel_for(
          J,
          [&](std::size_t j) {
            Vector theta;
            try {
              theta = step.theta_block(step.solve(X.col(idx(j)), G.col(idx(j)), Y.col(idx(j)), cfg.qp_tol));
            } catch (const QpMaxIterations& e) {
              // Accept a nearly converged iterate if it is feasible.
              if (e.best().kkt.primal > 1e-6 || e.best().scaled.max() > 1e-4) {
                failed[j] = true;
                return;
              }
              theta = step.theta_block(e.best());
              fell_back[j] = true;
            } catch (const Error&) {
              failed[j] = true;
              return;
            }
            if (!theta.allFinite()) {
              failed[j] = true;
              return;
            }
            next.col(idx(j)) = threshold_feasible(theta, cfg.lambda, param);
          },
          cfg.threads);
      fallbacks = static_cast<std::size_t>(std::count(fell_back.begin(), fell_back.end(), true));
      const auto n_failed = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), true));
      rep.total_failures += n_failed;
      if (n_failed > 0)
        resample_failed(next, failed, param, budget,
                        derive_seed(cfg.seed ^ 0x9f1c2d3eULL, static_cast<std::uint64_t>(m)));
      X = std::move(next);
    }
    res.ensemble.iteration = m + 1;
    rep.iterations = m + 1;
  }
  const Vector mean = X.rowwise().mean();
  res.estimate = cfg.sparse ? threshold_feasible(mean, cfg.lambda, param) : mean;
  return res;
}

Vector PruneResult::estimate_in_source() const {
  require(!batches.empty(), "no batches were run");
  const Batch& b = batches.back();
  return b.param.expand_to_source(b.result.estimate);
}

std::vector<std::size_t> surviving_coordinates(const Vector& mean, const ModelParameterization& param,
                                               double lambda) {
  const Vector t = threshold_feasible(mean, lambda, param);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < param.free_dim(); ++i)
    if (!param.sparsity_mask[i] || t(idx(i)) != 0.0) keep.push_back(i);
  return keep;
}

PruneResult prune_and_refit(EkiResult first, const ModelParameterization& param, const ForwardModel& forward,
                            const Vector& y, const Matrix& gamma, const EkiConfig& cfg, int max_batches) {
  require(max_batches >= 1, "max_batches must be at least one");
  require(static_cast<std::size_t>(cfg.prior_lower.size()) == param.source_dim,
          "prior box must be given in the source coordinates");
  PruneResult out;
  out.batches.push_back({param, std::move(first)});
  while (static_cast<int>(out.batches.size()) < max_batches) {
    const Batch& last = out.batches.back();
    const auto keep = surviving_coordinates(last.result.ensemble.mean(), last.param, cfg.lambda);
    if (keep.size() == last.param.free_dim()) break;
    if (keep.empty()) throw Error("no coordinates survive thresholding");
    ModelParameterization reduced = last.param.restrict_to(keep);
    EkiConfig sub = cfg;
    sub.prior_lower.resize(idx(reduced.free_dim()));
    sub.prior_upper.resize(idx(reduced.free_dim()));
    for (std::size_t i = 0; i < reduced.free_dim(); ++i) {
      sub.prior_lower(idx(i)) = cfg.prior_lower(idx(reduced.source_index[i]));
      sub.prior_upper(idx(i)) = cfg.prior_upper(idx(reduced.source_index[i]));
    }
    sub.seed = derive_seed(cfg.seed, 0xba7cULL, out.batches.size());
    EkiResult r = run_sparse_eki(forward, y, gamma, reduced, sub);
    out.batches.push_back({std::move(reduced), std::move(r)});
  }
  return out;
}

void to_json(nlohmann::json& j, const IterationRecord& r) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  j = nlohmann::json{{"iteration", r.iteration},       {"mean", vec(r.mean)},
                     {"spread", vec(r.spread)},        {"misfit", r.misfit},
                     {"masked_l1", r.masked_l1},       {"failed_members", r.failed_members},
                     {"qp_fallbacks", r.qp_fallbacks}};
}

void to_json(nlohmann::json& j, const ConvergenceReport& r) {
  j = nlohmann::json{{"iterations", r.iterations},
                     {"stopped_early", r.stopped_early},
                     {"stop_reason", r.stop_reason},
                     {"names", r.names},
                     {"total_failures", r.total_failures},
                     {"history", r.history}};
}

}  // namespace seki
