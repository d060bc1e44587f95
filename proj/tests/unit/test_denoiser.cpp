#include "fasdm/denoiser.hpp"
#include "fasdm/rng.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

using namespace fasdm;

TEST_CASE("time embedding values and bounds") {
  auto e0 = time_embedding(0.0, 128);
  REQUIRE(e0.size() == 128);
  for (int k = 0; k < 64; ++k) {
    CHECK(e0[2 * k] == 0.0);
    CHECK(e0[2 * k + 1] == 1.0);
  }
  auto e = time_embedding(37.0, 16);
  CHECK(e[0] == doctest::Approx(std::sin(37.0)));
  CHECK(e[3] == doctest::Approx(std::cos(37.0 * std::pow(10000.0, -2.0 / 16))));
  for (int t = 1; t <= 500; ++t)
    for (double v : time_embedding(t, 128)) CHECK_MESSAGE(std::abs(v) <= 1.0, "t=" << t);
}

TEST_CASE("time embedding is injective over 1..500") {
  std::set<std::vector<double>> seen;
  for (int t = 1; t <= 500; ++t) seen.insert(time_embedding(t, 128));
  CHECK(seen.size() == 500);
}

TEST_CASE("padding and cropping") {
  nn::Tensor<double> x(2, 1, 51, 51);
  std::mt19937_64 g(1);
  std::normal_distribution<double> d;
  for (auto& v : x.data) v = d(g);
  CropDescriptor c;
  auto p = pad_input(x, 8, &c);
  CHECK(p.height == 56);
  CHECK(p.width == 56);
  // reflect: row 51 mirrors row 49
  CHECK(p.at(0, 0, 51, 3) == x.at(0, 0, 49, 3));
  CHECK(p.at(1, 0, 7, 52) == x.at(1, 0, 7, 48));
  auto back = crop_output(p, c);
  CHECK(back.height == 51);
  CHECK(back.data == x.data);

  nn::Tensor<double> y(2, 2, 64, 64);
  auto q = pad_input(y, 8, &c);
  CHECK(q.height == 64);
  CHECK(q.width == 64);
}

TEST_CASE("vectors to images follows column-major flattening") {
  std::mt19937_64 g(4);
  Eigen::MatrixXd v(2 * 6 * 4, 3);
  for (Eigen::Index j = 0; j < 3; ++j) v.col(j) = testutil::random_vector(48, g);
  auto img = vectors_to_images<double>(v, 6, 4);
  CHECK(img.channels == 2);
  CHECK(img.batch == 3);
  CHECK(img.height == 4);
  CHECK(img.width == 6);
  // port (u, v) = (5, 2) of sample 1
  CHECK(img.at(0, 1, 2, 5) == v(5 + 6 * 2, 1));
  CHECK(img.at(1, 1, 2, 5) == v(24 + 5 + 6 * 2, 1));
  CHECK(images_to_vectors(img) == v);
}

TEST_CASE("zero head predicts zero, shapes follow the input") {
  for (int grid : {8, 11}) {
    auto arch = testutil::tiny_arch(grid);
    UNetDenoiser den(make_denoiser_params(arch, 3));
    std::mt19937_64 g(2);
    Eigen::MatrixXd x(2 * grid * grid, 3);
    for (Eigen::Index j = 0; j < 3; ++j) x.col(j) = testutil::random_vector(x.rows(), g);
    std::vector<int> t{1, 20, 50};
    auto out = den.predict(x, t);
    CHECK(out.rows() == x.rows());
    CHECK(out.cols() == 3);
    CHECK(out.isZero(0));
  }
}

TEST_CASE("resolution ladder of the network") {
  auto arch = testutil::tiny_arch(16);
  UNet<float> net(arch);
  net.initialize(1);
  nn::Tensor<float> x(2, 1, 16, 16);
  UNet<float>::Cache cache;
  std::vector<int> t{3};
  auto out = net.forward(x, t, &cache);
  CHECK(out.same_shape(x));
  auto shapes = UNet<float>::probe_shapes(cache);
  REQUIRE(shapes.size() == 7);
  CHECK(shapes[0] == std::pair{16, 16});
  CHECK(shapes[3] == std::pair{2, 2});
  CHECK(shapes[4] == std::pair{4, 4});
  CHECK(shapes[6] == std::pair{16, 16});
  nn::Tensor<float> odd(2, 1, 24, 16);
  CHECK_NOTHROW(net.forward(odd, t, nullptr));
  nn::Tensor<float> bad(2, 1, 10, 16);
  CHECK_THROWS(net.forward(bad, t, nullptr));
}

namespace {

// Random weights everywhere, including the zero-initialized head.
UNet<double> random_net(std::uint64_t seed) {
  UNet<double> net(testutil::tiny_arch(8));
  net.initialize(seed);
  std::mt19937_64 g(seed + 1);
  std::normal_distribution<double> d(0.0, 0.05);
  for (auto& w : net.weights())
    if (w == 0.0) w = d(g);
  return net;
}

double loss(const UNet<double>& net, const nn::Tensor<double>& x, const nn::Tensor<double>& eps,
            std::span<const int> t) {
  auto out = net.forward(x, t, nullptr);
  double l = 0;
  for (std::size_t i = 0; i < out.size(); ++i) l += (eps.data[i] - out.data[i]) * (eps.data[i] - out.data[i]);
  return l;
}

}  // namespace

TEST_CASE("analytic gradients match central differences") {
  auto net = random_net(7);
  std::mt19937_64 g(8);
  std::normal_distribution<double> d;
  nn::Tensor<double> x(2, 2, 8, 8), eps(2, 2, 8, 8);
  for (auto& v : x.data) v = d(g);
  for (auto& v : eps.data) v = d(g);
  std::vector<int> t{4, 37};

  UNet<double>::Cache cache;
  auto out = net.forward(x, t, &cache);
  nn::Tensor<double> dout = out;
  for (std::size_t i = 0; i < out.size(); ++i) dout.data[i] = -2.0 * (eps.data[i] - out.data[i]);
  nn::Buffer<double> grads(net.parameter_count(), 0.0);
  net.backward(cache, dout, grads);

  // one probe per parameter tensor kind plus random picks
  std::vector<std::size_t> probe;
  for (const char* name : {"in_conv.weight", "out_conv.weight", "out_conv.bias", "time_proj.weight",
                           "enc0.res0.norm1.gamma", "enc1.res0.time.weight", "down0.weight"}) {
    const auto* e = net.layout().find(name);
    REQUIRE_MESSAGE(e != nullptr, name);
    probe.push_back(e->offset + e->count / 3);
  }
  std::uniform_int_distribution<std::size_t> pick(0, net.parameter_count() - 1);
  while (probe.size() < 16) probe.push_back(pick(g));

  const double h = 1e-4;
  auto w = net.weights();
  for (std::size_t i : probe) {
    const double keep = w[i];
    w[i] = keep + h;
    const double lp = loss(net, x, eps, t);
    w[i] = keep - h;
    const double lm = loss(net, x, eps, t);
    w[i] = keep;
    const double fd = (lp - lm) / (2 * h);
    const double rel = std::abs(fd - grads[i]) / std::max({std::abs(fd), std::abs(grads[i]), 1e-6});
    CHECK_MESSAGE(rel < 1e-3, "weight " << i << " analytic " << grads[i] << " fd " << fd);
  }
}

TEST_CASE("network output is Lipschitz-sane at initialization") {
  auto net = random_net(3);
  std::mt19937_64 g(5);
  std::normal_distribution<double> d;
  nn::Tensor<double> x(2, 1, 8, 8);
  for (auto& v : x.data) v = d(g);
  std::vector<int> t{10};
  auto base = net.forward(x, t, nullptr);
  double kmax = 0;
  for (int trial = 0; trial < 5; ++trial) {
    nn::Tensor<double> xp = x;
    double dn = 0, on = 0;
    for (auto& v : xp.data) {
      const double step = 1e-4 * d(g);
      v += step;
      dn += step * step;
    }
    auto o = net.forward(xp, t, nullptr);
    for (std::size_t i = 0; i < o.size(); ++i) on += (o.data[i] - base.data[i]) * (o.data[i] - base.data[i]);
    kmax = std::max(kmax, std::sqrt(on / dn));
  }
  CHECK(std::isfinite(kmax));
  CHECK(kmax < 100.0);
}

TEST_CASE("checkpoint round trip and corruption detection") {
  auto dir = testutil::temp_dir("ckpt");
  auto p = make_denoiser_params(testutil::tiny_arch(), 9);
  p.schedule_fingerprint = "linear:test";
  p.dataset_fingerprint = "abc";
  save_checkpoint(p, dir / "m.ckpt");
  CHECK_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));
  auto q = load_checkpoint(dir / "m.ckpt");
  CHECK(q.arch == p.arch);
  CHECK(q.weights == p.weights);
  CHECK(q.schedule_fingerprint == "linear:test");
  CHECK(q.dataset_fingerprint == "abc");
  CHECK(fingerprint(q.weights) == fingerprint(p.weights));

  // flip one byte in the weight payload
  std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(-10, std::ios::end);
  char c;
  f.read(&c, 1);
  c ^= 0x5a;
  f.seekp(-10, std::ios::end);
  f.write(&c, 1);
  f.close();
  CHECK_THROWS(load_checkpoint(dir / "m.ckpt"));
  CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
}

TEST_CASE("initialization is deterministic per seed") {
  auto a = make_denoiser_params(testutil::tiny_arch(), 4);
  auto b = make_denoiser_params(testutil::tiny_arch(), 4);
  auto c = make_denoiser_params(testutil::tiny_arch(), 5);
  CHECK(a.weights == b.weights);
  CHECK(a.weights != c.weights);
  UNetArch bad = testutil::tiny_arch();
  bad.base_width = 6;  // not divisible into 8 groups
  CHECK_THROWS(bad.validate());
}
