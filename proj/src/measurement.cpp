#include "fasdm/measurement.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fasdm {

void SwitchSchedule::validate(int total_ports) const {
  if (l < 1 || m < 1) throw std::invalid_argument("SwitchSchedule: l and m must be positive");
  if (static_cast<int>(ports.size()) != l * m)
    throw std::invalid_argument("SwitchSchedule: port list length is not l*m");
  if (l * m > total_ports) throw std::invalid_argument("SwitchSchedule: l*m exceeds port count");
  std::vector<char> seen(total_ports, 0);
  for (int p : ports) {
    if (p < 0 || p >= total_ports) throw std::out_of_range("SwitchSchedule: port index out of range");
    if (seen[p]) throw std::invalid_argument("SwitchSchedule: port observed twice");
    seen[p] = 1;
  }
}

SwitchSchedule build_schedule(const FasGeometry& geom, int m, int l, Rng& rng) {
  geom.validate();
  const int n = geom.ports();
  if (m < 1 || l < 1) throw std::invalid_argument("build_schedule: l and m must be positive");
  if (static_cast<long long>(l) * m > n)
    throw std::invalid_argument("build_schedule: l*m = " + std::to_string(l * m) +
                                " exceeds N = " + std::to_string(n));
  // Partial Fisher-Yates: the first l*m entries form a uniform draw without replacement.
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  const int k = l * m;
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  SwitchSchedule s;
  s.l = l;
  s.m = m;
  s.ports.assign(all.begin(), all.begin() + k);
  return s;
}

Eigen::VectorXd realify(const Eigen::VectorXcd& h) {
  Eigen::VectorXd x(2 * h.size());
  x.head(h.size()) = h.real();
  x.tail(h.size()) = h.imag();
  return x;
}

Eigen::VectorXcd complexify(const Eigen::VectorXd& x) {
  if (x.size() % 2 != 0) throw std::invalid_argument("complexify: odd-length input");
  const Eigen::Index k = x.size() / 2;
  Eigen::VectorXcd h(k);
  h.real() = x.head(k);
  h.imag() = x.tail(k);
  return h;
}

Observation observe(const ChannelSample& sample, const SwitchSchedule& sched, double sigma, Rng& rng) {
  if (sigma < 0) throw std::invalid_argument("observe: sigma must be nonnegative");
  const int n = static_cast<int>(sample.h_flat.size());
  sched.validate(n);
  const int k = sched.size();
  Observation obs;
  obs.sigma = sigma;
  obs.schedule = sched;
  obs.y.resize(2 * k);
  for (int i = 0; i < k; ++i) {
    obs.y[i] = sample.h_real[sched.ports[i]];
    obs.y[k + i] = sample.h_real[n + sched.ports[i]];
  }
  if (sigma > 0)
    for (Eigen::Index i = 0; i < obs.y.size(); ++i) obs.y[i] += sigma * standard_normal(rng);
  return obs;
}

Eigen::VectorXd observe_complex(const Eigen::VectorXcd& h_flat, const SwitchSchedule& sched) {
  sched.validate(static_cast<int>(h_flat.size()));
  Eigen::VectorXcd z(sched.size());
  for (int i = 0; i < sched.size(); ++i) z[i] = h_flat[sched.ports[i]];
  return realify(z);
}

SpectralMaps build_spectral_maps(const SwitchSchedule& sched, const FasGeometry& geom) {
  const int n = geom.ports();
  sched.validate(n);
  const int k = sched.size();
  SpectralMaps maps;
  maps.n_bar = 2 * n;
  maps.m_bar = 2 * k;
  maps.perm.reserve(maps.n_bar);
  std::vector<char> used(maps.n_bar, 0);
  for (int i = 0; i < k; ++i) maps.perm.push_back(sched.ports[i]);
  for (int i = 0; i < k; ++i) maps.perm.push_back(n + sched.ports[i]);
  for (int p : maps.perm) used[p] = 1;
  for (int i = 0; i < maps.n_bar; ++i)
    if (!used[i]) maps.perm.push_back(i);
  maps.inverse.assign(maps.n_bar, 0);
  for (int i = 0; i < maps.n_bar; ++i) maps.inverse[maps.perm[i]] = i;
  return maps;
}

namespace {

void check_rows(Eigen::Index rows, const SpectralMaps& maps, const char* who) {
  if (rows != maps.n_bar)
    throw std::invalid_argument(std::string(who) + ": expected length " + std::to_string(maps.n_bar) +
                                ", got " + std::to_string(rows));
}

}  // namespace

Eigen::VectorXd to_spectral(const Eigen::VectorXd& x, const SpectralMaps& maps) {
  check_rows(x.size(), maps, "to_spectral");
  Eigen::VectorXd z(maps.n_bar);
  for (int i = 0; i < maps.n_bar; ++i) z[i] = x[maps.perm[i]];
  return z;
}

Eigen::VectorXd from_spectral(const Eigen::VectorXd& z, const SpectralMaps& maps) {
  check_rows(z.size(), maps, "from_spectral");
  Eigen::VectorXd x(maps.n_bar);
  for (int i = 0; i < maps.n_bar; ++i) x[maps.perm[i]] = z[i];
  return x;
}

Eigen::MatrixXd to_spectral(const Eigen::MatrixXd& x, const SpectralMaps& maps) {
  check_rows(x.rows(), maps, "to_spectral");
  Eigen::MatrixXd z(maps.n_bar, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (int i = 0; i < maps.n_bar; ++i) z(i, c) = x(maps.perm[i], c);
  return z;
}

Eigen::MatrixXd from_spectral(const Eigen::MatrixXd& z, const SpectralMaps& maps) {
  check_rows(z.rows(), maps, "from_spectral");
  Eigen::MatrixXd x(maps.n_bar, z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c)
    for (int i = 0; i < maps.n_bar; ++i) x(maps.perm[i], c) = z(i, c);
  return x;
}

Eigen::VectorXd pad_observation(const Eigen::VectorXd& y, const SpectralMaps& maps) {
  if (y.size() != maps.m_bar) throw std::invalid_argument("pad_observation: y length is not m_bar");
  Eigen::VectorXd z = Eigen::VectorXd::Zero(maps.n_bar);
  z.head(maps.m_bar) = y;
  return z;
}

// ---------------------------------------------------------------------------

void save_schedule(const SwitchSchedule& sched, const std::filesystem::path& path) {
  nlohmann::json rows = nlohmann::json::array();
  for (int s = 0; s < sched.l; ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < sched.m; ++c) row.push_back(sched.port(s, c));
    rows.push_back(std::move(row));
  }
  const nlohmann::json j = {{"l", sched.l}, {"m", sched.m}, {"ports", rows}, {"seed", sched.seed}};
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("save_schedule: cannot write " + path.string());
}

SwitchSchedule load_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_schedule: cannot open " + path.string());
  const auto j = nlohmann::json::parse(in);
  SwitchSchedule s;
  s.l = j.at("l");
  s.m = j.at("m");
  s.seed = j.value("seed", std::uint64_t{0});
  for (const auto& row : j.at("ports")) {
    if (static_cast<int>(row.size()) != s.m) throw std::runtime_error("load_schedule: ragged port matrix");
    for (const auto& p : row) s.ports.push_back(p.get<int>());
  }
  if (static_cast<int>(s.ports.size()) != s.l * s.m)
    throw std::runtime_error("load_schedule: port matrix is not l x m");
  return s;
}

void write_f32(const std::filesystem::path& path, const Eigen::VectorXd& v) {
  const Eigen::VectorXf f = v.cast<float>();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write_f32: cannot write " + path.string());
}

Eigen::VectorXd read_f32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("read_f32: cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0) throw std::runtime_error("read_f32: size is not a multiple of 4");
  Eigen::VectorXf f(static_cast<Eigen::Index>(bytes / sizeof(float)));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(bytes));
  return f.cast<double>();
}

void save_observation(const Observation& obs, const std::filesystem::path& path,
                      const std::filesystem::path& schedule_ref) {
  write_f32(path, obs.y);
  const nlohmann::json j = {
      {"sigma", obs.sigma}, {"length", obs.y.size()}, {"schedule_ref", schedule_ref.string()}};
  std::ofstream out(path.string() + ".json");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("save_observation: cannot write sidecar for " + path.string());
}

Observation load_observation(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw std::runtime_error("load_observation: missing sidecar for " + path.string());
  const auto j = nlohmann::json::parse(in);
  Observation obs;
  obs.sigma = j.at("sigma");
  obs.y = read_f32(path);
  if (obs.y.size() != j.at("length").get<Eigen::Index>())
    throw std::runtime_error("load_observation: length mismatch in " + path.string());
  std::filesystem::path ref = j.at("schedule_ref").get<std::string>();
  if (ref.is_relative()) ref = path.parent_path() / ref;
  obs.schedule = load_schedule(ref);
  if (obs.y.size() != 2 * obs.schedule.size())
    throw std::runtime_error("load_observation: y length does not match schedule");
  return obs;
}

}  // namespace fasdm
