#include "seki/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "seki/parallel.hpp"
#include "seki/plot.hpp"

namespace seki {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Index = Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

Vector to_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), idx(v.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

template <class T>
T value_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw InvalidArgument("unknown key '" + k + "' in " + where);
}

IntegratorConfig parse_integrator(const json& j, IntegratorConfig base) {
  check_keys(j, {"dt", "T", "spinup", "sample_interval", "blowup_threshold", "clip"}, "integrator");
  base.dt = value_or(j, "dt", base.dt);
  const double T = value_or(j, "T", base.horizon - base.spinup);
  base.spinup = value_or(j, "spinup", base.spinup);
  base.horizon = base.spinup + T;
  base.sample_interval = value_or(j, "sample_interval", base.sample_interval);
  base.blowup_threshold = value_or(j, "blowup_threshold", base.blowup_threshold);
  if (j.contains("clip")) {
    if (j.at("clip").is_null()) {
      base.clip_bounds.reset();
    } else {
      const auto c = j.at("clip").get<std::vector<double>>();
      require(c.size() == 2, "clip must be [lower, upper]");
      base.clip_bounds = std::pair{c[0], c[1]};
    }
  }
  return base;
}

ObservableSpec parse_observables(const json& j) {
  check_keys(j, {"first", "second", "pairs", "higher", "autocorr_locations", "lags", "spatial_corr_points",
                 "n_windows"},
             "observables");
  ObservableSpec s;
  s.moments.first = value_or(j, "first", std::vector<std::size_t>{});
  s.moments.second = value_or(j, "second", std::vector<std::size_t>{});
  const auto pairs = value_or<std::string>(j, "pairs", "all");
  require(pairs == "all" || pairs == "diagonal", "pairs must be 'all' or 'diagonal'");
  s.moments.pairs = pairs == "all" ? MomentSpec::Pairs::All : MomentSpec::Pairs::Diagonal;
  s.moments.higher = value_or(j, "higher", false);
  s.autocorr_locations = value_or(j, "autocorr_locations", std::vector<std::size_t>{});
  s.lags = value_or(j, "lags", std::vector<double>{});
  s.spatial_corr_points = value_or<std::size_t>(j, "spatial_corr_points", 0);
  s.n_windows = value_or<std::size_t>(j, "n_windows", 10);
  return s;
}

EkiConfig parse_eki(const json& j) {
  check_keys(j, {"ensemble_size", "max_iterations", "perturb_observations", "jitter", "gamma", "lambda",
                 "discrepancy_stop", "qp_tol", "threads", "max_resample_rounds",
                 "failure_policy"},
             "eki");
  EkiConfig e;
  e.ensemble_size = value_or(j, "ensemble_size", e.ensemble_size);
  e.max_iterations = value_or(j, "max_iterations", e.max_iterations);
  e.perturb_observations = value_or(j, "perturb_observations", e.perturb_observations);
  e.jitter = value_or(j, "jitter", e.jitter);
  // null (or absence) means no budget.
  e.gamma = j.contains("gamma") && !j.at("gamma").is_null() ? j.at("gamma").get<double>() : kInf;
  e.lambda = value_or(j, "lambda", e.lambda);
  e.discrepancy_stop = value_or(j, "discrepancy_stop", e.discrepancy_stop);
  e.qp_tol = value_or(j, "qp_tol", e.qp_tol);
  e.threads = value_or(j, "threads", e.threads);
  e.max_resample_rounds = value_or(j, "max_resample_rounds", e.max_resample_rounds);
  const auto policy = value_or<std::string>(j, "failure_policy", "resample");
  require(policy == "resample" || policy == "backtrack", "failure_policy must be 'resample' or 'backtrack'");
  e.failure_policy = policy == "resample" ? EkiConfig::FailurePolicy::Resample : EkiConfig::FailurePolicy::Backtrack;
  return e;
}

std::pair<double, double> parse_interval(const json& j) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == 2 && v[0] <= v[1], "prior interval must be [lower, upper] with lower <= upper");
  return {v[0], v[1]};
}

bool is_coalescence(const std::string& id) { return id.rfind("coalescence", 0) == 0; }
bool is_l96(const std::string& id) { return id == "l96-single" || id == "l96-multiscale"; }

std::string dictionary_id(const std::string& case_id) {
  if (case_id == "l63") return "l63";
  if (case_id == "l96-single") return "l96";
  if (case_id == "l96-multiscale") return "l96-closure";
  if (is_coalescence(case_id)) return "coalescence";
  return "ks";
}

Vector default_l96_ic(int K, double F) {
  Vector x = Vector::Constant(K, F);
  x(0) += 0.01;
  return x;
}

CoalescenceModel coalescence_truth_model(const ExperimentConfig& cfg, const ModelParameterization& param,
                                         const Vector& truth_free) {
  CoalescenceModel m;
  m.kernel = coalescence_kernel(param, truth_free);
  m.resolved = value_or(cfg.truth, "resolved", 2);
  m.closure = closure_from_string(value_or<std::string>(cfg.truth, "closure", "gamma"));
  return m;
}

ClosureBounds parse_bounds(const json& j) {
  ClosureBounds b;
  if (!j.is_object()) return b;
  b.kappa_min = value_or(j, "kappa_min", b.kappa_min);
  b.kappa_max = value_or(j, "kappa_max", b.kappa_max);
  b.eta_min = value_or(j, "eta_min", b.eta_min);
  b.eta_max = value_or(j, "eta_max", b.eta_max);
  return b;
}

KsConfig ks_config(const ExperimentConfig& cfg, const IntegratorConfig& integ) {
  KsConfig k;
  const json model = cfg.source.value("model", json::object());
  k.n = value_or<std::size_t>(model, "n", 128);
  k.length = value_or(model, "length", 128.0);
  k.scheme = ks_scheme_from_string(value_or<std::string>(model, "scheme", "cnab2"));
  k.integrator = integ;
  return k;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char b[40];
  std::snprintf(b, sizeof b, "%.10g", v);
  return b;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

}  // namespace

Mode mode_from_string(const std::string& name) {
  if (name == "standard") return Mode::Standard;
  if (name == "sparse") return Mode::Sparse;
  throw InvalidArgument("mode must be 'standard' or 'sparse', got '" + name + "'");
}

std::string to_string(Mode mode) { return mode == Mode::Standard ? "standard" : "sparse"; }

const std::vector<std::string>& case_ids() {
  static const std::vector<std::string> ids{"l63",           "l96-single",     "l96-multiscale", "coalescence-sim",
                                            "coalescence-k3", "coalescence-exp", "ks"};
  return ids;
}

std::pair<Vector, Vector> PriorBox::bounds(const ModelParameterization& param) const {
  Vector lo(idx(param.free_dim())), hi(idx(param.free_dim()));
  std::set<std::string> used;
  for (std::size_t i = 0; i < param.free_dim(); ++i) {
    auto iv = fallback;
    const auto& name = param.free_names[i];
    if (auto it = overrides.find(name); it != overrides.end()) {
      iv = it->second;
      used.insert(name);
    } else {
      // Group overrides: "beta1" matches "beta1[3]", "g" matches "g[0]".
      const auto bracket = name.find('[');
      if (bracket != std::string::npos)
        if (auto g = overrides.find(name.substr(0, bracket)); g != overrides.end()) {
          iv = g->second;
          used.insert(g->first);
        }
    }
    lo(idx(i)) = iv.first;
    hi(idx(i)) = iv.second;
  }
  for (const auto& [name, iv] : overrides)
    if (!used.count(name)) throw InvalidArgument("prior override '" + name + "' matches no free coordinate");
  return {lo, hi};
}

void ExperimentConfig::validate() const {
  const auto& ids = case_ids();
  require(std::find(ids.begin(), ids.end(), case_id) != ids.end(), "unknown case '" + case_id + "'");
  integrator.validate();
  truth_integrator.validate();
  require(!initial_conditions.empty() || case_id == "ks", "at least one initial condition is required");
  require(noise_model == "batch_means" || noise_model == "relative", "noise model must be batch_means or relative");
  require(noise_model != "relative" || relative_noise > 0.0, "relative noise level must be positive");
  require(batches >= 1, "batches must be at least one");
  require(histogram_bins >= 1, "histogram bins must be positive");
  const auto param = build_parameterization(dictionary_id(case_id), K, forcing);
  for (const auto& ic : initial_conditions)
    require(case_id == "coalescence-k3" || static_cast<std::size_t>(ic.size()) == param.state_dim() ||
                (case_id == "ks" && static_cast<std::size_t>(ic.size()) == value_or<std::size_t>(
                                                                           source.value("model", json::object()),
                                                                           "n", 128)),
            "initial condition has wrong dimension");
  const std::size_t dim = case_id == "ks" ? value_or<std::size_t>(source.value("model", json::object()), "n", 128)
                                          : param.state_dim();
  observables.validate(dim);
  const auto [lo, hi] = prior.bounds(param);
  EkiConfig e = eki;
  e.prior_lower = lo;
  e.prior_upper = hi;
  e.validate(param.free_dim());
}

ExperimentConfig parse_config(const json& input, const std::string& preset) {
  json j = input;
  if (!preset.empty()) {
    if (!j.contains("presets") || !j["presets"].contains(preset))
      throw InvalidArgument("config has no preset '" + preset + "'");
    j.merge_patch(j["presets"][preset]);
  }
  j.erase("presets");
  check_keys(j, {"case", "name", "seed", "model", "integrator", "initial_conditions", "common_noise", "truth",
                 "observables", "noise", "eki", "prior", "batches", "diagnostics", "description"},
             "config");

  ExperimentConfig c;
  c.source = j;
  c.case_id = j.at("case").get<std::string>();
  c.name = value_or<std::string>(j, "name", c.case_id);
  c.seed = value_or<std::uint64_t>(j, "seed", 0);
  const json model = j.value("model", json::object());
  c.K = value_or(model, "K", 0);
  c.forcing = value_or(model, "forcing", 0.0);
  c.common_noise = value_or(j, "common_noise", true);

  IntegratorConfig base;
  base.dt = 1e-3;
  c.integrator = parse_integrator(j.value("integrator", json::object()), base);
  c.truth = j.value("truth", json::object());
  c.truth_integrator = c.truth.contains("integrator") ? parse_integrator(c.truth.at("integrator"), c.integrator)
                                                      : c.integrator;

  const auto param = build_parameterization(dictionary_id(c.case_id), c.K, c.forcing);
  if (j.contains("initial_conditions")) {
    for (const auto& ic : j.at("initial_conditions")) c.initial_conditions.push_back(to_vector(ic));
  } else if (is_l96(c.case_id)) {
    c.initial_conditions.push_back(default_l96_ic(static_cast<int>(param.state_dim()),
                                                  value_or(c.truth, "F", param.forcing)));
  } else if (c.case_id == "ks") {
    // One random field shared by truth and model.
    c.initial_conditions.push_back(
        ks_initial_condition(value_or<std::size_t>(model, "n", 128), derive_seed(c.seed, 4)));
  }

  c.observables = parse_observables(j.value("observables", json::object()));
  const json noise = j.value("noise", json::object());
  check_keys(noise, {"model", "relative", "structure"}, "noise");
  c.noise_model = value_or<std::string>(noise, "model", "batch_means");
  c.relative_noise = value_or(noise, "relative", 0.0);
  const auto structure = value_or<std::string>(noise, "structure", "full");
  require(structure == "full" || structure == "diagonal", "noise structure must be 'full' or 'diagonal'");
  c.diagonal_noise = structure == "diagonal";

  c.eki = parse_eki(j.value("eki", json::object()));
  c.eki.seed = derive_seed(c.seed, 3);
  const json prior = j.value("prior", json::object());
  check_keys(prior, {"default", "overrides"}, "prior");
  if (prior.contains("default")) c.prior.fallback = parse_interval(prior.at("default"));
  if (prior.contains("overrides"))
    for (const auto& [k, v] : prior.at("overrides").items()) c.prior.overrides[k] = parse_interval(v);
  c.batches = value_or(j, "batches", 1);

  const json diag = j.value("diagnostics", json::object());
  check_keys(diag, {"bins", "horizon", "heldout_initial_conditions", "heldout_horizon", "members"}, "diagnostics");
  c.histogram_bins = value_or<std::size_t>(diag, "bins", 40);
  c.comparison_horizon = value_or(diag, "horizon", c.integrator.horizon - c.integrator.spinup);
  if (diag.contains("heldout_initial_conditions"))
    for (const auto& ic : diag.at("heldout_initial_conditions")) c.heldout_initial_conditions.push_back(to_vector(ic));
  c.heldout_horizon = value_or(diag, "heldout_horizon", c.integrator.horizon);
  c.diagnostic_members = value_or<std::size_t>(diag, "members", 10);
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path, const std::string& preset) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j, preset);
}

CaseModel::CaseModel(const ExperimentConfig& cfg)
    : cfg_(cfg),
      param_(build_parameterization(dictionary_id(cfg.case_id), cfg.K, cfg.forcing)),
      forward_seed_(derive_seed(cfg.seed, 2)) {
  const json& t = cfg.truth;
  if (cfg.case_id == "l63") {
    truth_free_ = l63_truth(value_or(t, "alpha", 10.0), value_or(t, "rho", 28.0), value_or(t, "beta", 8.0 / 3.0),
                            value_or(t, "sigma", 10.0));
  } else if (cfg.case_id == "l96-single") {
    truth_free_ = l96_truth(param_);
  } else if (is_coalescence(cfg.case_id)) {
    Vector v = Vector::Zero(idx(param_.free_dim()));
    const json kernel = t.value("kernel", json::object());
    for (const auto& [name, value] : kernel.items()) {
      const auto i = param_.free_index(name);
      require(i.has_value(), "unknown kernel coefficient " + name);
      v(idx(*i)) = value.get<double>();
    }
    truth_free_ = v;
  } else if (cfg.case_id == "ks") {
    const KsParams truth = KsParams::truth();
    const auto a = value_or(t, "alpha", std::vector<double>(truth.alpha.begin(), truth.alpha.end()));
    const auto b = value_or(t, "beta", std::vector<double>(truth.beta.begin(), truth.beta.end()));
    require(a.size() == 5 && b.size() == 5, "K-S truth needs five alpha and five beta values");
    Vector v(10);
    for (int i = 0; i < 5; ++i) {
      v(i) = a[static_cast<std::size_t>(i)];
      v(5 + i) = b[static_cast<std::size_t>(i)];
    }
    truth_free_ = v;
  }
}

std::vector<Trajectory> CaseModel::simulate_truth() const {
  return simulate_truth(cfg_.initial_conditions, cfg_.truth_integrator);
}

std::vector<Trajectory> CaseModel::simulate_truth(const std::vector<Vector>& ics_in,
                                                  const IntegratorConfig& integ_in) const {
  const std::string& id = cfg_.case_id;
  std::vector<Vector> ics = ics_in;
  if (ics.empty() && id == "ks") ics.push_back(Vector());
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < ics.size(); ++i) {
    IntegratorConfig integ = integ_in;
    integ.seed = derive_seed(cfg_.seed, 1, i);
    if (id == "l63" || id == "ks") {
      auto t = simulate_model(param_, *truth_free_, integ.seed, {ics[i]}, integ);
      out.push_back(std::move(t.front()));
    } else if (id == "l96-single") {
      const double F = value_or(cfg_.truth, "F", param_.forcing);
      out.push_back(rk4([F](const Vector& x, Vector& dx) { lorenz96_rhs(x, F, dx); }, ics[i], integ));
    } else if (id == "l96-multiscale") {
      MultiscaleL96 m;
      m.K = static_cast<int>(param_.state_dim());
      m.J = value_or(cfg_.truth, "J", m.J);
      m.h = value_or(cfg_.truth, "h", m.h);
      m.c = value_or(cfg_.truth, "c", m.c);
      m.b = value_or(cfg_.truth, "b", m.b);
      m.F = value_or(cfg_.truth, "F", m.F);
      std::mt19937_64 rng(derive_seed(integ.seed, 5));
      std::normal_distribution<double> normal(0.0, 0.1);
      Vector y0(m.J * m.K);
      for (Index k = 0; k < y0.size(); ++k) y0(k) = normal(rng);
      out.push_back(simulate_multiscale_l96(m, ics[i], y0, integ));
    } else {
      CoalescenceModel m = coalescence_truth_model(cfg_, param_, *truth_free_);
      m.bounds = parse_bounds(cfg_.truth.value("bounds", json()));
      out.push_back(simulate_coalescence(m, ics[i], integ));
    }
  }
  return out;
}

std::vector<Trajectory> CaseModel::simulate_model(const ModelParameterization& param, const Vector& free,
                                                  std::uint64_t seed) const {
  return simulate_model(param, free, seed, cfg_.initial_conditions, cfg_.integrator);
}

std::vector<Trajectory> CaseModel::simulate_model(const ModelParameterization& param, const Vector& free,
                                                  std::uint64_t seed, const std::vector<Vector>& ics_in,
                                                  const IntegratorConfig& integ_in) const {
  const std::string& id = cfg_.case_id;
  std::vector<Vector> ics = ics_in;
  if (ics.empty() && id == "ks") ics.push_back(Vector());
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < ics.size(); ++i) {
    IntegratorConfig integ = integ_in;
    integ.seed = derive_seed(seed, i);
    if (id == "l63") {
      const CompiledDrift drift(param, free);
      // sigma is the diffusion variance; |sigma| keeps off-constraint QP round-off harmless.
      const double amplitude = std::sqrt(std::abs(param.aux(free, "sigma")));
      out.push_back(euler_maruyama([&drift](const Vector& x, Vector& dx) { drift(x, dx); },
                                   Vector::Constant(3, amplitude), ics[i], integ));
    } else if (is_l96(id)) {
      const CompiledDrift drift(param, free);
      out.push_back(rk4([&drift](const Vector& x, Vector& dx) { drift(x, dx); }, ics[i], integ));
    } else if (is_coalescence(id)) {
      CoalescenceModel m;
      m.kernel = coalescence_kernel(param, free);
      m.resolved = 2;
      m.closure = Closure::Gamma;
      m.bounds = parse_bounds(cfg_.source.value("model", json::object()).value("bounds", json()));
      out.push_back(simulate_coalescence(m, ics[i].head(3), integ));
    } else {
      const KsConfig kc = ks_config(cfg_, integ);
      const Vector u0 = ics[i].size() > 0 ? ics[i] : ks_initial_condition(kc.n, derive_seed(integ.seed, 11));
      const Vector full = param.embed(free);
      out.push_back(simulate_ks(KsParams::from_vector(full.tail(10)), u0, kc));
    }
  }
  return out;
}

Vector CaseModel::data_from(const std::vector<Trajectory>& trajs) const {
  DataVector d;
  for (const auto& t : trajs) d.append(compute_observables(t, cfg_.observables));
  return d.values;
}

ForwardModel CaseModel::forward() const {
  return [this](const ModelParameterization& param, const Vector& free, std::uint64_t seed) {
    return data_from(simulate_model(param, free, cfg_.common_noise ? forward_seed_ : seed));
  };
}

std::string truth_hash(const ExperimentConfig& cfg) {
  const json& s = cfg.source;
  json key = json::object();
  for (const char* k : {"case", "seed", "model", "truth", "observables", "noise"})
    if (s.contains(k)) key[k] = s.at(k);
  json ics = json::array();
  for (const auto& ic : cfg.initial_conditions) ics.push_back(std::vector<double>(ic.begin(), ic.end()));
  key["initial_conditions"] = ics;
  // The truth integrator defaults to the fitted-model one.
  key["truth_integrator"] = json{{"dt", cfg.truth_integrator.dt},
                                 {"horizon", cfg.truth_integrator.horizon},
                                 {"spinup", cfg.truth_integrator.spinup},
                                 {"sample_interval", cfg.truth_integrator.sample_interval}};
  if (cfg.truth_integrator.clip_bounds)
    key["truth_integrator"]["clip"] = {cfg.truth_integrator.clip_bounds->first, cfg.truth_integrator.clip_bounds->second};
  return hex64(fnv1a(key.dump()));
}

void save_trajectory(const Trajectory& traj, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  const std::uint64_t header[3] = {traj.size(), traj.dim(), traj.spinup_index};
  os.write("SEKT", 4);
  os.write(reinterpret_cast<const char*>(header), sizeof header);
  os.write(reinterpret_cast<const char*>(traj.times.data()), static_cast<std::streamsize>(traj.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(traj.states.data()),
           static_cast<std::streamsize>(traj.size() * traj.dim() * sizeof(double)));
}

Trajectory load_trajectory(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  char magic[4];
  std::uint64_t header[3];
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(header), sizeof header);
  if (!is || std::string(magic, 4) != "SEKT") throw Error(path.string() + " is not a trajectory file");
  Trajectory t;
  t.times.resize(header[0]);
  t.states.resize(idx(header[0]), idx(header[1]));
  t.spinup_index = header[2];
  is.read(reinterpret_cast<char*>(t.times.data()), static_cast<std::streamsize>(header[0] * sizeof(double)));
  is.read(reinterpret_cast<char*>(t.states.data()), static_cast<std::streamsize>(header[0] * header[1] * sizeof(double)));
  if (!is) throw Error(path.string() + " is truncated");
  t.validate();
  return t;
}

TruthData generate_truth(const ExperimentConfig& cfg, const std::optional<fs::path>& cache_dir) {
  TruthData td;
  td.hash = truth_hash(cfg);
  fs::path dir;
  if (cache_dir) {
    dir = *cache_dir / (cfg.case_id + "-" + td.hash);
    const fs::path meta = dir / "data.json";
    if (fs::exists(meta)) {
      std::ifstream is(meta);
      json j;
      is >> j;
      j.at("y").get_to(td.y);
      j.at("gamma").get_to(td.gamma);
      for (std::size_t i = 0; i < j.at("trajectories").get<std::size_t>(); ++i)
        td.trajectories.push_back(load_trajectory(dir / ("truth_" + std::to_string(i) + ".bin")));
      td.from_cache = true;
      return td;
    }
  }
  const CaseModel model(cfg);
  try {
    td.trajectories = model.simulate_truth();
  } catch (const BlowUpError& e) {
    throw Error(std::string("truth simulation blew up: ") + e.what());
  }
  auto [y, g] = assemble_data(cfg.case_id, td.trajectories, cfg.observables,
                              cfg.noise_model == "relative" ? cfg.relative_noise : 0.0);
  td.y = std::move(y);
  td.gamma = std::move(g);
  if (cfg.diagonal_noise) td.gamma.matrix = Matrix(td.gamma.matrix.diagonal().asDiagonal());
  if (cache_dir) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < td.trajectories.size(); ++i)
      save_trajectory(td.trajectories[i], dir / ("truth_" + std::to_string(i) + ".bin"));
    json j{{"hash", td.hash}, {"case", cfg.case_id}, {"y", td.y}, {"gamma", td.gamma},
           {"trajectories", td.trajectories.size()}};
    // Written last so a partial cache entry is never picked up.
    write_text(dir / "data.json", j.dump(1));
  }
  return td;
}

Vector compare_invariant_measure(const Trajectory& a, const Trajectory& b, std::size_t bins) {
  require(bins >= 1, "need at least one bin");
  require(a.dim() == b.dim(), "trajectories have different dimensions");
  const Trajectory wa = a.window(), wb = b.window();
  require(wa.size() > 0 && wb.size() > 0, "empty statistics window");
  Vector out(idx(a.dim()));
  for (std::size_t c = 0; c < a.dim(); ++c) {
    const auto ca = wa.states.col(idx(c)), cb = wb.states.col(idx(c));
    const double lo = std::min(ca.minCoeff(), cb.minCoeff());
    const double hi = std::max(ca.maxCoeff(), cb.maxCoeff());
    if (!(hi > lo)) {
      out(idx(c)) = 0.0;
      continue;
    }
    Vector pa = Vector::Zero(idx(bins)), pb = Vector::Zero(idx(bins));
    auto bin = [&](double v) {
      const auto k = static_cast<Index>((v - lo) / (hi - lo) * static_cast<double>(bins));
      return std::clamp<Index>(k, 0, idx(bins) - 1);
    };
    for (Index i = 0; i < ca.size(); ++i) pa(bin(ca(i))) += 1.0;
    for (Index i = 0; i < cb.size(); ++i) pb(bin(cb(i))) += 1.0;
    pa /= static_cast<double>(ca.size());
    pb /= static_cast<double>(cb.size());
    out(idx(c)) = (pa - pb).cwiseAbs().sum();
  }
  return out;
}

HeldoutResult heldout_trajectory_test(const CaseModel& model, const ModelParameterization& param,
                                      const std::vector<Vector>& members, const Vector& ic, double horizon) {
  require(!members.empty(), "no parameter vectors to simulate");
  IntegratorConfig integ = model.config().integrator;
  integ.horizon = horizon;
  integ.spinup = 0.0;
  HeldoutResult r;
  r.truth = model.simulate_truth({ic}, integ).front();
  std::vector<std::optional<Trajectory>> sims(members.size());
  parallel_for(members.size(), [&](std::size_t j) {
    try {
      sims[j] = model.simulate_model(param, members[j], derive_seed(model.config().seed, 21, j), {ic}, integ).front();
    } catch (const Error&) {
      sims[j].reset();
    }
  });
  RowMatrix sum = RowMatrix::Zero(r.truth.states.rows(), r.truth.states.cols());
  std::size_t ok = 0;
  for (auto& s : sims) {
    if (!s || s->states.rows() != sum.rows()) {
      ++r.blown_up;
      continue;
    }
    sum += s->states;
    ++ok;
    r.members.push_back(std::move(*s));
  }
  if (ok == 0) throw Error("every held-out simulation failed");
  r.ensemble_mean = r.truth;
  r.ensemble_mean.states = sum / static_cast<double>(ok);
  r.deviation.resize(idx(r.truth.dim()));
  for (std::size_t c = 0; c < r.truth.dim(); ++c) {
    const double scale = r.truth.states.col(idx(c)).cwiseAbs().maxCoeff();
    const double dev = (r.ensemble_mean.states.col(idx(c)) - r.truth.states.col(idx(c))).cwiseAbs().maxCoeff();
    r.deviation(idx(c)) = scale > 0.0 ? dev / scale : dev;
  }
  return r;
}

const CoefficientRow& ExperimentReport::row(const std::string& name) const {
  for (const auto& r : coefficients)
    if (r.name == name) return r;
  throw InvalidArgument("no coefficient named " + name);
}

namespace {

std::vector<double> iota_vec(std::size_t n, double start = 0.0, double step = 1.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + step * static_cast<double>(i);
  return v;
}

void histogram_figure(const Trajectory& truth, const Trajectory& model, std::size_t comp, std::size_t bins,
                      const fs::path& path) {
  const Trajectory wa = truth.window(), wb = model.window();
  const auto ca = wa.states.col(idx(comp)), cb = wb.states.col(idx(comp));
  const double lo = std::min(ca.minCoeff(), cb.minCoeff()), hi = std::max(ca.maxCoeff(), cb.maxCoeff());
  const double w = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  auto density = [&](const auto& col) {
    std::vector<double> d(bins, 0.0);
    for (Index i = 0; i < col.size(); ++i)
      d[static_cast<std::size_t>(std::clamp<Index>(static_cast<Index>((col(i) - lo) / w), 0, idx(bins) - 1))] += 1.0;
    for (auto& v : d) v /= static_cast<double>(col.size()) * w;
    return d;
  };
  Figure f;
  f.title = "invariant measure x" + std::to_string(comp + 1);
  f.xlabel = "x" + std::to_string(comp + 1);
  f.ylabel = "density";
  const auto centers = iota_vec(bins, lo + 0.5 * w, w);
  f.add("truth", centers, density(ca), Series::Style::Steps);
  f.add("recovered", centers, density(cb), Series::Style::Steps);
  f.save_png(path);
}

}  // namespace

ExperimentReport run_case(const ExperimentConfig& cfg, Mode mode, const RunOptions& options) {
  const TruthData truth = generate_truth(cfg, options.cache_dir);
  const CaseModel model(cfg);
  const ModelParameterization& root = model.parameterization();
  const ForwardModel forward = model.forward();

  EkiConfig e = cfg.eki;
  std::tie(e.prior_lower, e.prior_upper) = cfg.prior.bounds(root);
  if (mode == Mode::Standard) {
    e.sparse = false;
    e.lambda = 0.0;
    e.gamma = kInf;
  }
  const Vector& y = truth.y.values;
  const Matrix& gamma = truth.gamma.matrix;
  EkiResult first = run_sparse_eki(forward, y, gamma, root, e);
  PruneResult pr;
  if (mode == Mode::Sparse && cfg.batches > 1)
    pr = prune_and_refit(std::move(first), root, forward, y, gamma, e, cfg.batches);
  else
    pr.batches.push_back({root, std::move(first)});
  const Batch& last = pr.final_batch();

  ExperimentReport rep;
  rep.case_id = cfg.case_id;
  rep.mode = mode;
  rep.y = truth.y;
  rep.estimate = pr.estimate_in_source();
  const Vector mean = last.param.expand_to_source(last.result.ensemble.mean());
  const Vector spread = last.param.expand_to_source(last.result.ensemble.spread());
  std::vector<bool> present(root.free_dim(), false);
  for (auto s : last.param.source_index) present[s] = true;
  for (std::size_t i = 0; i < root.free_dim(); ++i) {
    CoefficientRow r;
    r.name = root.free_names[i];
    r.truth = model.truth_free() ? (*model.truth_free())(idx(i)) : std::nan("");
    r.mean = mean(idx(i));
    r.std = spread(idx(i));
    r.surviving = present[i] && (!root.sparsity_mask[i] || rep.estimate(idx(i)) != 0.0);
    rep.coefficients.push_back(r);
  }
  for (const auto& b : pr.batches) {
    rep.batches.push_back(b.result.report);
    rep.survivors_per_batch.push_back(b.param.free_dim());
  }
  try {
    rep.fitted_data = forward(last.param, last.result.estimate, derive_seed(cfg.seed, 8));
  } catch (const Error&) {
    rep.fitted_data = Vector::Constant(y.size(), std::nan(""));
  }

  const fs::path& out = options.out_dir;
  const fs::path figs = out / "figures";
  json diag = json::object();
  const bool chaotic = cfg.case_id == "l63" || is_l96(cfg.case_id);
  if (options.diagnostics && chaotic) {
    IntegratorConfig integ = cfg.integrator;
    integ.horizon = integ.spinup + cfg.comparison_horizon;
    const auto truth_long = model.simulate_truth(cfg.initial_conditions, integ).front();
    try {
      const auto fitted = model.simulate_model(last.param, last.result.estimate, derive_seed(cfg.seed, 9),
                                               {cfg.initial_conditions.front()}, integ)
                              .front();
      const Vector dist = compare_invariant_measure(truth_long, fitted, cfg.histogram_bins);
      diag["invariant_measure_l1"] = to_std(dist);
      std::vector<double> lags;
      const double dt = truth_long.sample_interval();
      const std::size_t n_lags = 21;
      const double lag_step = std::max(dt, std::round((cfg.case_id == "l63" ? 0.05 : 0.1) / dt) * dt);
      for (std::size_t k = 0; k < n_lags; ++k) lags.push_back(static_cast<double>(k) * lag_step);
      const auto acf_t = autocorrelation(truth_long, 0, lags).values;
      const auto acf_m = autocorrelation(fitted, 0, lags).values;
      diag["autocorrelation"] = {{"lags", lags}, {"truth", to_std(acf_t)}, {"recovered", to_std(acf_m)}};
      if (options.write_figures) {
        const std::size_t shown = std::min<std::size_t>(3, truth_long.dim());
        for (std::size_t c = 0; c < shown; ++c) {
          const fs::path p = figs / ("histogram_x" + std::to_string(c + 1) + ".png");
          histogram_figure(truth_long, fitted, c, cfg.histogram_bins, p);
          rep.files.push_back(fs::relative(p, out).string());
        }
        Figure f;
        f.title = "autocorrelation x1";
        f.xlabel = "lag";
        f.add("truth", lags, to_std(acf_t));
        f.add("recovered", lags, to_std(acf_m));
        f.save_png(figs / "autocorrelation.png");
        rep.files.push_back("figures/autocorrelation.png");
      }
    } catch (const Error& err) {
      diag["invariant_measure_error"] = err.what();
    }
  }
  if (options.diagnostics && is_coalescence(cfg.case_id)) {
    json held = json::array();
    const Matrix& X = last.result.ensemble.members;
    std::vector<Vector> members;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(X.cols()),
                                                std::max<std::size_t>(cfg.diagnostic_members, 1));
    for (std::size_t j = 0; j < n; ++j) members.push_back(X.col(idx(j)));
    members.resize(n);
    for (std::size_t k = 0; k < cfg.heldout_initial_conditions.size(); ++k) {
      const Vector& ic = cfg.heldout_initial_conditions[k];
      // The full ensemble rather than a subset: the criterion is on its mean.
      std::vector<Vector> all;
      for (Index j = 0; j < X.cols(); ++j) all.push_back(X.col(j));
      const HeldoutResult h = heldout_trajectory_test(model, last.param, all, ic, cfg.heldout_horizon);
      const HeldoutResult hm = heldout_trajectory_test(model, last.param, {last.result.estimate}, ic, cfg.heldout_horizon);
      held.push_back({{"initial_condition", to_std(ic)},
                      {"deviation", to_std(h.deviation)},
                      {"estimate_deviation", to_std(hm.deviation)},
                      {"blown_up", h.blown_up}});
      if (options.write_figures) {
        for (std::size_t c = 0; c < 3; ++c) {
          Figure f;
          f.title = "held-out X" + std::to_string(c) + " ic " + std::to_string(k + 1);
          f.xlabel = "t";
          const auto col = [&](const Trajectory& t) {
            std::vector<double> v(t.size());
            for (std::size_t i = 0; i < t.size(); ++i) v[i] = t.states(idx(i), idx(c));
            return v;
          };
          f.add("truth", h.truth.times, col(h.truth));
          f.add("ensemble mean", h.ensemble_mean.times, col(h.ensemble_mean));
          for (std::size_t j = 0; j < std::min(members.size(), h.members.size()); ++j) {
            auto& s = f.add("", h.members[j].times, col(h.members[j]));
            s.color = {190, 190, 190};
          }
          std::rotate(f.series.begin(), f.series.begin() + 2, f.series.end());
          const fs::path p = figs / ("heldout_ic" + std::to_string(k + 1) + "_X" + std::to_string(c) + ".png");
          f.save_png(p);
          rep.files.push_back(fs::relative(p, out).string());
        }
      }
    }
    diag["heldout"] = held;
  }
  rep.diagnostics = diag;

  if (!out.empty()) {
    fs::create_directories(out);
    std::ostringstream csv;
    csv << "name,truth,mean,std,surviving\n";
    for (const auto& r : rep.coefficients)
      csv << r.name << ',' << format_double(r.truth) << ',' << format_double(r.mean) << ','
          << format_double(r.std) << ',' << (r.surviving ? 1 : 0) << '\n';
    write_text(out / "coefficients.csv", csv.str());
    rep.files.push_back("coefficients.csv");

    json trace = json::array();
    for (std::size_t b = 0; b < rep.batches.size(); ++b) {
      json jb = rep.batches[b];
      jb["batch"] = b + 1;
      jb["names"] = pr.batches[b].param.free_names;
      trace.push_back(jb);
    }
    write_text(out / "trace.json", trace.dump(1));
    rep.files.push_back("trace.json");

    if (options.write_figures) {
      Figure fit;
      fit.title = cfg.case_id + " data fit (" + to_string(mode) + ")";
      fit.xlabel = "data index";
      fit.add("truth y", iota_vec(static_cast<std::size_t>(y.size())), to_std(y), Series::Style::Points);
      fit.add("G(estimate)", iota_vec(static_cast<std::size_t>(y.size())), to_std(rep.fitted_data),
              Series::Style::Points);
      fit.save_png(figs / "data_fit.png");
      rep.files.push_back("figures/data_fit.png");

      Figure l1;
      l1.title = "masked l1 norm of ensemble mean";
      l1.xlabel = "iteration";
      Figure mis;
      mis.title = "data misfit";
      mis.xlabel = "iteration";
      mis.log_y = true;
      double offset = 0.0;
      for (std::size_t b = 0; b < rep.batches.size(); ++b) {
        std::vector<double> it, v, m;
        for (const auto& h : rep.batches[b].history) {
          it.push_back(offset + h.iteration);
          v.push_back(h.masked_l1);
          m.push_back(h.misfit);
        }
        offset += static_cast<double>(rep.batches[b].history.size());
        l1.add("batch " + std::to_string(b + 1), it, v);
        mis.add("batch " + std::to_string(b + 1), it, m);
      }
      l1.save_png(figs / "l1_trace.png");
      mis.save_png(figs / "misfit_trace.png");
      rep.files.push_back("figures/l1_trace.png");
      rep.files.push_back("figures/misfit_trace.png");

      Figure coef;
      coef.title = "coefficients";
      coef.xlabel = "free coordinate index";
      std::vector<double> t, m;
      for (const auto& r : rep.coefficients) {
        t.push_back(r.truth);
        m.push_back(r.mean);
      }
      coef.add("ensemble mean", iota_vec(m.size()), m, Series::Style::Bars);
      if (model.truth_free()) coef.add("truth", iota_vec(t.size()), t, Series::Style::Points);
      coef.save_png(figs / "coefficients.png");
      rep.files.push_back("figures/coefficients.png");
    }
    rep.files.push_back("report.json");
    json j = rep;
    j["truth_hash"] = truth.hash;
    j["config"] = cfg.source;
    write_text(out / "report.json", j.dump(1));
  }
  return rep;
}

void to_json(json& j, const ExperimentReport& r) {
  json coefs = json::array();
  for (const auto& c : r.coefficients)
    coefs.push_back({{"name", c.name},
                     {"truth", std::isnan(c.truth) ? json(nullptr) : json(c.truth)},
                     {"mean", c.mean},
                     {"std", c.std},
                     {"surviving", c.surviving}});
  json batches = json::array();
  for (const auto& b : r.batches)
    batches.push_back({{"iterations", b.iterations},
                       {"stop_reason", b.stop_reason},
                       {"final_misfit", b.history.empty() ? 0.0 : b.history.back().misfit},
                       {"final_masked_l1", b.history.empty() ? 0.0 : b.history.back().masked_l1},
                       {"failures", b.total_failures}});
  std::vector<double> fitted;
  for (Index i = 0; i < r.fitted_data.size(); ++i) fitted.push_back(r.fitted_data(i));
  json fitted_json = json::array();
  for (double v : fitted) fitted_json.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  j = json{{"case", r.case_id},
           {"mode", to_string(r.mode)},
           {"coefficients", coefs},
           {"estimate", to_std(r.estimate)},
           {"batches", batches},
           {"survivors_per_batch", r.survivors_per_batch},
           {"data", r.y},
           {"fitted_data", fitted_json},
           {"diagnostics", r.diagnostics},
           {"files", r.files}};
}

}  // namespace seki
