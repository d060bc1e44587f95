#include "fasdm/channel.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace fasdm {

void FasGeometry::validate() const {
  if (n1 < 2 || n2 < 2) throw std::invalid_argument("FasGeometry: need at least 2 ports per axis");
  if (!(w1 > 0.0) || !(w2 > 0.0)) throw std::invalid_argument("FasGeometry: aperture must be positive");
}

void PathSet::validate() const {
  if (gains.empty()) throw std::invalid_argument("PathSet: no paths");
  if (azimuths.size() != gains.size() || elevations.size() != gains.size())
    throw std::invalid_argument("PathSet: list lengths differ");
  constexpr double half_pi = std::numbers::pi / 2;
  for (std::size_t i = 0; i < gains.size(); ++i) {
    if (std::abs(azimuths[i]) > half_pi || std::abs(elevations[i]) > half_pi)
      throw std::invalid_argument("PathSet: angle outside [-pi/2, pi/2]");
  }
}

ChannelSample ChannelSample::from_matrix(const Eigen::MatrixXcd& h) {
  ChannelSample s;
  s.h_mat = h;
  s.h_flat = Eigen::Map<const Eigen::VectorXcd>(h.data(), h.size());  // column-major
  const Eigen::Index n = s.h_flat.size();
  s.h_real.resize(2 * n);
  s.h_real.head(n) = s.h_flat.real();
  s.h_real.tail(n) = s.h_flat.imag();
  return s;
}

ChannelSample ChannelSample::from_real(const FasGeometry& geom, const Eigen::VectorXd& h_real) {
  const Eigen::Index n = geom.ports();
  if (h_real.size() != 2 * n) throw std::invalid_argument("ChannelSample: length is not 2N");
  Eigen::MatrixXcd h(geom.n1, geom.n2);
  for (Eigen::Index i = 0; i < n; ++i) h.data()[i] = cdouble(h_real[i], h_real[n + i]);
  return from_matrix(h);
}

bool ChannelSample::consistent() const {
  const Eigen::Index n = h_mat.size();
  if (h_flat.size() != n || h_real.size() != 2 * n) return false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const cdouble v = h_mat.data()[i];
    if (h_flat[i] != v || h_real[i] != v.real() || h_real[n + i] != v.imag()) return false;
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  }
  return true;
}

double elevation_from_uniform(double u) { return std::asin(2.0 * u - 1.0); }

Aoa sample_aoa(Rng& rng) {
  const double theta = std::numbers::pi * (uniform01(rng) - 0.5);
  const double phi = elevation_from_uniform(uniform01(rng));
  return {theta, phi};
}

namespace {

Eigen::VectorXcd linear_phase(int count, double spacing, double direction_cosine) {
  Eigen::VectorXcd a(count);
  a[0] = 1.0;
  for (int k = 1; k < count; ++k)
    a[k] = std::polar(1.0, -2.0 * std::numbers::pi * k * spacing * direction_cosine);
  return a;
}

}  // namespace

Eigen::VectorXcd steering_x(double theta, double phi, const FasGeometry& geom) {
  return linear_phase(geom.n1, geom.w1 / (geom.n1 - 1), std::cos(phi) * std::sin(theta));
}

Eigen::VectorXcd steering_y(double /*theta*/, double phi, const FasGeometry& geom) {
  return linear_phase(geom.n2, geom.w2 / (geom.n2 - 1), std::sin(phi));
}

PathSet sample_paths(int np, Rng& rng) {
  if (np < 1) throw std::invalid_argument("sample_paths: need at least one path");
  PathSet p;
  p.gains.reserve(np);
  p.azimuths.reserve(np);
  p.elevations.reserve(np);
  const double s = std::sqrt(0.5);
  for (int i = 0; i < np; ++i) {
    const Aoa a = sample_aoa(rng);
    const double re = standard_normal(rng), im = standard_normal(rng);
    p.azimuths.push_back(a.azimuth);
    p.elevations.push_back(a.elevation);
    p.gains.emplace_back(s * re, s * im);
  }
  return p;
}

ChannelSample channel_from_paths(const FasGeometry& geom, const PathSet& paths) {
  geom.validate();
  paths.validate();
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(geom.n1, geom.n2);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const double th = paths.azimuths[i], ph = paths.elevations[i];
    h.noalias() += paths.gains[i] * steering_x(th, ph, geom) * steering_y(th, ph, geom).transpose();
  }
  h *= std::sqrt(1.0 / static_cast<double>(paths.size()));
  return ChannelSample::from_matrix(h);
}

ChannelSample generate_channel(const FasGeometry& geom, int np, Rng& rng) {
  return channel_from_paths(geom, sample_paths(np, rng));
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[6] = {'F', 'A', 'S', 'D', 'S', '1'};
constexpr char kDtypeF32[4] = {'f', '3', '2', '\0'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".json");
}

}  // namespace

Dataset make_dataset(const FasGeometry& geom, int np, std::size_t count, std::uint64_t seed) {
  geom.validate();
  if (count < 1) throw std::invalid_argument("make_dataset: count must be positive");
  Dataset ds;
  ds.n1 = geom.n1;
  ds.n2 = geom.n2;
  ds.count = count;
  ds.values.resize(count * ds.record_length());
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {0x64617461ull, i});
    const ChannelSample s = generate_channel(geom, np, rng);
    float* dst = ds.values.data() + i * ds.record_length();
    for (Eigen::Index k = 0; k < s.h_real.size(); ++k) dst[k] = static_cast<float>(s.h_real[k]);
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  if (ds.values.size() != ds.count * ds.record_length())
    throw std::invalid_argument("write_dataset: value count does not match header");
  const auto tmp = std::filesystem::path(path.string() + ".partial");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_dataset: cannot open " + tmp.string());
    out.write(kDatasetMagic, sizeof(kDatasetMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.n1));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.n2));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(ds.count));
    out.write(kDtypeF32, sizeof(kDtypeF32));
    out.write(reinterpret_cast<const char*>(ds.values.data()),
              static_cast<std::streamsize>(ds.values.size() * sizeof(float)));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write_dataset: write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + path.string());
  char magic[6];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0)
    throw std::runtime_error("read_dataset: not a dataset file: " + path.string());
  Dataset ds;
  ds.n1 = static_cast<int>(get<std::uint32_t>(in));
  ds.n2 = static_cast<int>(get<std::uint32_t>(in));
  ds.count = static_cast<std::size_t>(get<std::uint64_t>(in));
  char dtype[4];
  in.read(dtype, sizeof(dtype));
  if (!in || std::memcmp(dtype, kDtypeF32, sizeof(dtype)) != 0)
    throw std::runtime_error("read_dataset: unsupported dtype");
  ds.values.resize(ds.count * ds.record_length());
  in.read(reinterpret_cast<char*>(ds.values.data()),
          static_cast<std::streamsize>(ds.values.size() * sizeof(float)));
  if (!in) throw std::runtime_error("read_dataset: truncated file " + path.string());
  return ds;
}

Dataset generate_dataset(const DatasetInfo& info, const std::filesystem::path& path) {
  Dataset ds = make_dataset(info.geometry, info.np, info.count, info.seed);
  write_dataset(ds, path);
  const nlohmann::json meta = {
      {"geometry",
       {{"n1", info.geometry.n1}, {"n2", info.geometry.n2}, {"w1", info.geometry.w1},
        {"w2", info.geometry.w2}}},
      {"np", info.np},
      {"seed", info.seed},
      {"count", info.count},
      {"created", utc_timestamp()}};
  std::ofstream out(sidecar_path(path));
  out << meta.dump(2) << '\n';
  if (!out) {
    std::error_code ec;
    std::filesystem::remove(path, ec);
    std::filesystem::remove(sidecar_path(path), ec);
    throw std::runtime_error("generate_dataset: cannot write metadata for " + path.string());
  }
  return ds;
}

DatasetInfo read_dataset_info(const std::filesystem::path& dataset_path) {
  std::ifstream in(sidecar_path(dataset_path));
  if (!in) throw std::runtime_error("read_dataset_info: missing sidecar for " + dataset_path.string());
  const auto j = nlohmann::json::parse(in);
  DatasetInfo info;
  const auto& g = j.at("geometry");
  info.geometry = FasGeometry{g.at("n1"), g.at("n2"), g.at("w1"), g.at("w2")};
  info.np = j.at("np");
  info.seed = j.at("seed");
  info.count = j.at("count");
  return info;
}

}  // namespace fasdm
