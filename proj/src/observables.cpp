#include "seki/observables.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "seki/ks.hpp"

namespace seki {

namespace {

std::string component(std::size_t k) { return "x" + std::to_string(k + 1); }

void check_index(std::size_t k, std::size_t dim) {
  if (k >= dim) throw InvalidArgument("observable index " + std::to_string(k) + " out of range");
}

std::size_t lag_steps(double lag, double interval) {
  require(lag >= 0.0, "lags must be nonnegative");
  return static_cast<std::size_t>(std::llround(lag / interval));
}

}  // namespace

void DataVector::append(const DataVector& other) {
  Vector v(values.size() + other.values.size());
  v << values, other.values;
  values = std::move(v);
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

void DataVector::validate() const {
  require(static_cast<std::size_t>(values.size()) == labels.size(), "data labels do not match values");
  require(values.allFinite(), "data vector has non-finite entries");
  std::set<std::string> seen(labels.begin(), labels.end());
  require(seen.size() == labels.size(), "data labels must be unique");
}

bool NoiseCovariance::is_spd() const {
  if (matrix.rows() != matrix.cols() || matrix.rows() == 0) return false;
  const double scale = std::max(1.0, matrix.cwiseAbs().maxCoeff());
  if ((matrix - matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  Eigen::LLT<Matrix> llt(matrix);
  return llt.info() == Eigen::Success;
}

std::size_t ObservableSpec::data_size() const {
  const auto& m = moments;
  std::size_t n = m.first.size();
  const std::size_t s = m.second.size();
  n += m.pairs == MomentSpec::Pairs::All ? s * (s + 1) / 2 : s;
  if (m.higher) n += 2 * m.first.size();
  n += autocorr_locations.size() * lags.size();
  n += spatial_corr_points;
  return n;
}

void ObservableSpec::validate(std::size_t state_dim) const {
  for (auto k : moments.first) check_index(k, state_dim);
  for (auto k : moments.second) check_index(k, state_dim);
  for (auto k : autocorr_locations) check_index(k, state_dim);
  for (double l : lags) require(l >= 0.0, "lags must be nonnegative");
  require(n_windows >= 2, "need at least two batch-means windows");
  if (spatial_corr_points > 0)
    require(spatial_corr_points >= 2 && spatial_corr_points <= state_dim / 2 + 1,
            "spatial correlation points out of range");
}

DataVector moments(const Trajectory& traj, const MomentSpec& spec) {
  const auto begin = static_cast<Eigen::Index>(traj.spinup_index);
  const auto n = static_cast<Eigen::Index>(traj.size()) - begin;
  require(n >= 1, "statistics window is empty");
  const auto w = traj.states.middleRows(begin, n);
  for (auto k : spec.first) check_index(k, traj.dim());
  for (auto k : spec.second) check_index(k, traj.dim());

  std::vector<double> vals;
  DataVector out;
  auto col = [&](std::size_t k) { return w.col(static_cast<Eigen::Index>(k)).array(); };
  for (auto k : spec.first) {
    vals.push_back(col(k).mean());
    out.labels.push_back("mean(" + component(k) + ")");
  }
  if (spec.pairs == MomentSpec::Pairs::All) {
    for (std::size_t a = 0; a < spec.second.size(); ++a)
      for (std::size_t b = a; b < spec.second.size(); ++b) {
        const auto i = spec.second[a], j = spec.second[b];
        vals.push_back((col(i) * col(j)).mean());
        out.labels.push_back("mean(" + component(i) + "*" + component(j) + ")");
      }
  } else {
    for (auto k : spec.second) {
      vals.push_back(col(k).square().mean());
      out.labels.push_back("mean(" + component(k) + "^2)");
    }
  }
  if (spec.higher) {
    for (auto k : spec.first) {
      vals.push_back(col(k).cube().mean());
      out.labels.push_back("mean(" + component(k) + "^3)");
    }
    for (auto k : spec.first) {
      vals.push_back(col(k).square().square().mean());
      out.labels.push_back("mean(" + component(k) + "^4)");
    }
  }
  out.values = Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return out;
}

DataVector autocorrelation(const Trajectory& traj, std::size_t location,
                           const std::vector<double>& lags) {
  check_index(location, traj.dim());
  const auto begin = static_cast<Eigen::Index>(traj.spinup_index);
  const auto n = static_cast<Eigen::Index>(traj.size()) - begin;
  require(n >= 2, "statistics window too short for autocorrelation");
  const Vector z = traj.states.col(static_cast<Eigen::Index>(location)).segment(begin, n);
  const Vector d = z.array() - z.mean();
  const double var = d.squaredNorm();
  if (!(var > 0.0)) throw InvalidArgument("autocorrelation of a constant signal");
  const double interval = traj.sample_interval();
  DataVector out;
  out.values.resize(static_cast<Eigen::Index>(lags.size()));
  for (std::size_t i = 0; i < lags.size(); ++i) {
    const auto l = static_cast<Eigen::Index>(lag_steps(lags[i], interval));
    require(l < n, "lag exceeds statistics window");
    out.values(static_cast<Eigen::Index>(i)) = d.head(n - l).dot(d.tail(n - l)) / var;
    std::ostringstream label;
    label << "acf(" << component(location) << "," << lags[i] << ")";
    out.labels.push_back(label.str());
  }
  return out;
}

Vector spatial_correlation_full(const Trajectory& field) {
  const std::size_t N = field.dim();
  const SpectralGrid grid(N, 1.0);
  ComplexVector power = ComplexVector::Zero(static_cast<Eigen::Index>(grid.modes()));
  ComplexVector u_hat;
  const std::size_t begin = field.spinup_index;
  require(begin < field.size(), "statistics window is empty");
  for (std::size_t t = begin; t < field.size(); ++t) {
    grid.forward(field.state(t), u_hat);
    power.array() += u_hat.array().abs2();
  }
  Vector c = grid.inverse(power);
  const double peak = c.maxCoeff();
  require(peak > 0.0, "spatial correlation of a zero field");
  return c / peak;
}

std::vector<std::size_t> spatial_offsets(std::size_t n_points, std::size_t grid_size) {
  require(n_points >= 2, "need at least two correlation offsets");
  std::vector<std::size_t> out(n_points);
  const double half = static_cast<double>(grid_size / 2);
  for (std::size_t i = 0; i < n_points; ++i)
    out[i] = static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * half / static_cast<double>(n_points - 1)));
  return out;
}

DataVector spatial_correlation(const Trajectory& field, std::size_t n_points) {
  const Vector c = spatial_correlation_full(field);
  DataVector out;
  const auto offsets = spatial_offsets(n_points, field.dim());
  out.values.resize(static_cast<Eigen::Index>(offsets.size()));
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    out.values(static_cast<Eigen::Index>(i)) = c(static_cast<Eigen::Index>(offsets[i]));
    out.labels.push_back("corr(" + std::to_string(offsets[i]) + ")");
  }
  return out;
}

Vector spatial_correlation_direct(const Trajectory& field) {
  const auto N = static_cast<Eigen::Index>(field.dim());
  Vector c = Vector::Zero(N);
  for (std::size_t t = field.spinup_index; t < field.size(); ++t) {
    const auto u = field.states.row(static_cast<Eigen::Index>(t));
    for (Eigen::Index x = 0; x < N; ++x)
      for (Eigen::Index z = 0; z < N; ++z) c(x) += u(z) * u((z + x) % N);
  }
  return c / c.maxCoeff();
}

DataVector compute_observables(const Trajectory& traj, const ObservableSpec& spec) {
  DataVector out = moments(traj, spec.moments);
  for (auto loc : spec.autocorr_locations) out.append(autocorrelation(traj, loc, spec.lags));
  if (spec.spatial_corr_points > 0) out.append(spatial_correlation(traj, spec.spatial_corr_points));
  return out;
}

NoiseCovariance estimate_noise_covariance(const Trajectory& traj, const ObservableSpec& spec,
                                          std::size_t n_windows) {
  require(n_windows >= 2, "need at least two batch-means windows");
  const std::size_t begin = traj.spinup_index;
  const std::size_t total = traj.size() - begin;
  const std::size_t block = total / n_windows;
  if (block < 2) throw InvalidArgument("fewer samples than batch-means windows");
  const Vector y = compute_observables(traj, spec).values;
  Matrix blocks(y.size(), static_cast<Eigen::Index>(n_windows));
  for (std::size_t w = 0; w < n_windows; ++w) {
    const Trajectory part = traj.slice(begin + w * block, begin + (w + 1) * block);
    blocks.col(static_cast<Eigen::Index>(w)) = compute_observables(part, spec).values;
  }
  const Vector mean = blocks.rowwise().mean();
  const Matrix centered = blocks.colwise() - mean;
  Matrix cov = centered * centered.transpose() / static_cast<double>(n_windows - 1);
  cov /= static_cast<double>(n_windows);
  cov.diagonal().array() += kCovarianceFloor * (1.0 + y.array().square());
  NoiseCovariance g;
  g.matrix = 0.5 * (cov + cov.transpose());
  return g;
}

NoiseCovariance relative_noise_covariance(const Vector& y, double relative, double floor) {
  require(relative >= 0.0 && floor > 0.0, "noise levels must be positive");
  NoiseCovariance g;
  const Vector d = (relative * y).array().square() + floor * (1.0 + y.array().square());
  g.matrix = d.asDiagonal();
  return g;
}

std::size_t expected_data_size(const std::string& case_id, std::size_t n_trajectories) {
  if (case_id == "l63") return 9;
  if (case_id == "l96-single" || case_id == "l96-multiscale") return 44;
  if (case_id.rfind("coalescence", 0) == 0) return 5 * n_trajectories;
  if (case_id == "ks") return 114;
  return 0;
}

std::pair<DataVector, NoiseCovariance> assemble_data(const std::string& case_id,
                                                     const std::vector<Trajectory>& trajs,
                                                     const ObservableSpec& spec,
                                                     double relative_noise) {
  require(!trajs.empty(), "no trajectories to assemble");
  DataVector data;
  std::vector<Matrix> blocks;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    DataVector d = compute_observables(trajs[i], spec);
    if (trajs.size() > 1)
      for (auto& l : d.labels) l = "ic" + std::to_string(i + 1) + ":" + l;
    blocks.push_back(relative_noise > 0.0
                         ? relative_noise_covariance(d.values, relative_noise).matrix
                         : estimate_noise_covariance(trajs[i], spec, spec.n_windows).matrix);
    data.append(d);
  }
  const std::size_t expected = expected_data_size(case_id, trajs.size());
  if (expected != 0 && expected != data.size())
    throw InvalidArgument("case " + case_id + " expects " + std::to_string(expected) +
                          " data entries, got " + std::to_string(data.size()));
  NoiseCovariance g;
  g.matrix = Matrix::Zero(data.values.size(), data.values.size());
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    g.matrix.block(at, at, b.rows(), b.cols()) = b;
    at += b.rows();
  }
  data.validate();
  return {data, g};
}

void to_json(nlohmann::json& j, const DataVector& d) {
  j = nlohmann::json{{"values", std::vector<double>(d.values.data(), d.values.data() + d.values.size())},
                     {"labels", d.labels}};
}

void to_json(nlohmann::json& j, const NoiseCovariance& g) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < g.matrix.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(g.matrix.cols()));
    for (Eigen::Index c = 0; c < g.matrix.cols(); ++c) r[static_cast<std::size_t>(c)] = g.matrix(i, c);
    rows.push_back(r);
  }
  j = nlohmann::json{{"matrix", rows}};
}

void from_json(const nlohmann::json& j, DataVector& d) {
  const auto v = j.at("values").get<std::vector<double>>();
  d.values = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  d.labels = j.at("labels").get<std::vector<std::string>>();
}

void from_json(const nlohmann::json& j, NoiseCovariance& g) {
  const auto& rows = j.at("matrix");
  const auto n = static_cast<Eigen::Index>(rows.size());
  g.matrix.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = rows[static_cast<std::size_t>(i)].get<std::vector<double>>();
    require(static_cast<Eigen::Index>(r.size()) == n, "covariance must be square");
    for (Eigen::Index c = 0; c < n; ++c) g.matrix(i, c) = r[static_cast<std::size_t>(c)];
  }
}

}  // namespace seki
