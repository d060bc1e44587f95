#include "fasdm/denoiser.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fasdm {

using nn::Tensor;

void UNetArch::validate() const {
  if (grid_width < 1 || grid_height < 1) throw std::invalid_argument("UNetArch: empty grid");
  if (channel_multipliers.empty()) throw std::invalid_argument("UNetArch: no levels");
  if (base_width < 1 || resblocks_per_level < 1) throw std::invalid_argument("UNetArch: bad widths");
  if (d_emb <= 0 || d_emb % 2 != 0) throw std::invalid_argument("UNetArch: d_emb must be even");
  for (int l = 0; l < levels(); ++l) {
    if (width_at(l) % groups != 0)
      throw std::invalid_argument("UNetArch: level width not divisible by group count");
  }
}

std::vector<double> time_embedding(double t, int d_emb) {
  if (d_emb <= 0 || d_emb % 2 != 0)
    throw std::invalid_argument("time_embedding: d_emb must be a positive even number");
  if (t < 0) throw std::invalid_argument("time_embedding: negative time step");
  std::vector<double> e(static_cast<std::size_t>(d_emb));
  for (int k = 0; k < d_emb / 2; ++k) {
    const double omega = std::pow(10000.0, -2.0 * k / d_emb);
    e[2 * k] = std::sin(t * omega);
    e[2 * k + 1] = std::cos(t * omega);
  }
  return e;
}

namespace {

int round_up(int v, int multiple) { return (v + multiple - 1) / multiple * multiple; }

// Mirror index without repeating the edge sample (numpy "reflect").
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

template <typename T>
Tensor<T> pad_input(const Tensor<T>& x, int multiple, CropDescriptor* crop) {
  const int ph = round_up(x.height, multiple), pw = round_up(x.width, multiple);
  if (crop) *crop = CropDescriptor{x.height, x.width, ph, pw};
  if (ph == x.height && pw == x.width) return x;
  Tensor<T> y(x.channels, x.batch, ph, pw);
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n)
      for (int yy = 0; yy < ph; ++yy) {
        const int sy = reflect_index(yy, x.height);
        for (int xx = 0; xx < pw; ++xx) y.at(c, n, yy, xx) = x.at(c, n, sy, reflect_index(xx, x.width));
      }
  return y;
}

template <typename T>
Tensor<T> crop_output(const Tensor<T>& x, const CropDescriptor& crop) {
  if (x.height != crop.padded_height || x.width != crop.padded_width)
    throw std::invalid_argument("crop_output: tensor does not match crop descriptor");
  if (crop.height == x.height && crop.width == x.width) return x;
  Tensor<T> y(x.channels, x.batch, crop.height, crop.width);
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n)
      for (int yy = 0; yy < crop.height; ++yy)
        for (int xx = 0; xx < crop.width; ++xx) y.at(c, n, yy, xx) = x.at(c, n, yy, xx);
  return y;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void uniform_fill(std::span<T> w, std::size_t offset, std::size_t count, double bound,
                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < count; ++i) w[offset + i] = static_cast<T>(dist(rng));
}

// GN -> SiLU -> conv -> +time bias -> GN -> SiLU -> conv, plus a (projected) residual.
template <typename T>
struct ResBlock {
  nn::GroupNorm<T> norm1;
  nn::Conv2d<T> conv1;
  nn::Linear<T> time_bias;
  nn::GroupNorm<T> norm2;
  nn::Conv2d<T> conv2;
  std::optional<nn::Conv2d<T>> shortcut;

  struct Cache {
    Tensor<T> x;
    typename nn::GroupNorm<T>::Cache n1, n2;
    Tensor<T> pre1, act1, pre2, act2;
  };

  ResBlock(nn::ParamLayout& layout, const std::string& name, int in, int out, int d_emb,
           int groups)
      : norm1(layout, name + ".norm1", in, groups),
        conv1(layout, name + ".conv1", in, out, 3, 1),
        time_bias(layout, name + ".time", d_emb, out),
        norm2(layout, name + ".norm2", out, groups),
        conv2(layout, name + ".conv2", out, out, 3, 1) {
    if (in != out) shortcut.emplace(layout, name + ".shortcut", in, out, 1, 1);
  }

  Tensor<T> forward(std::span<const T> w, const Tensor<T>& x, const nn::Matrix<T>& temb_act,
                    Cache* cache) const {
    Tensor<T> pre1 = norm1.forward(w, x, cache ? &cache->n1 : nullptr);
    Tensor<T> act1 = pre1;
    nn::silu_inplace<T>(act1.data);
    Tensor<T> h = conv1.forward(w, act1);
    const nn::Matrix<T> tb = time_bias.forward(w, temb_act);
    const std::size_t plane = h.plane();
    for (int c = 0; c < h.channels; ++c)
      for (int n = 0; n < h.batch; ++n) {
        T* p = h.data.data() + c * h.channel_stride() + n * plane;
        const T b = tb(n, c);
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
      }
    Tensor<T> pre2 = norm2.forward(w, h, cache ? &cache->n2 : nullptr);
    Tensor<T> act2 = pre2;
    nn::silu_inplace<T>(act2.data);
    Tensor<T> out = conv2.forward(w, act2);
    if (shortcut) {
      const Tensor<T> s = shortcut->forward(w, x);
      for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += s.data[i];
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += x.data[i];
    }
    if (cache) {
      cache->x = x;
      cache->pre1 = std::move(pre1);
      cache->act1 = std::move(act1);
      cache->pre2 = std::move(pre2);
      cache->act2 = std::move(act2);
    }
    return out;
  }

  Tensor<T> backward(std::span<const T> w, std::span<T> g, const Cache& cache,
                     const nn::Matrix<T>& temb_act, const Tensor<T>& dout,
                     nn::Matrix<T>& dtemb_act) const {
    Tensor<T> dact2 = conv2.backward(w, g, cache.act2, dout);
    Tensor<T> dpre2(dact2.channels, dact2.batch, dact2.height, dact2.width);
    nn::silu_backward<T>(cache.pre2.data, dact2.data, dpre2.data);
    Tensor<T> dh = norm2.backward(w, g, cache.n2, dpre2);

    nn::Matrix<T> dtb(dh.batch, dh.channels);
    const std::size_t plane = dh.plane();
    for (int c = 0; c < dh.channels; ++c)
      for (int n = 0; n < dh.batch; ++n) {
        const T* p = dh.data.data() + c * dh.channel_stride() + n * plane;
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        dtb(n, c) = s;
      }
    const nn::Matrix<T> dta = time_bias.backward(w, g, temb_act, dtb);
    for (std::size_t i = 0; i < dta.data.size(); ++i) dtemb_act.data[i] += dta.data[i];

    Tensor<T> dact1 = conv1.backward(w, g, cache.act1, dh);
    Tensor<T> dpre1(dact1.channels, dact1.batch, dact1.height, dact1.width);
    nn::silu_backward<T>(cache.pre1.data, dact1.data, dpre1.data);
    Tensor<T> dx = norm1.backward(w, g, cache.n1, dpre1);
    if (shortcut) {
      const Tensor<T> ds = shortcut->backward(w, g, cache.x, dout);
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
    } else {
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dout.data[i];
    }
    return dx;
  }

  void initialize(std::span<T> w, std::mt19937_64& rng) const {
    init_norm(w, norm1);
    init_conv(w, conv1, rng);
    init_linear(w, time_bias, rng);
    init_norm(w, norm2);
    init_conv(w, conv2, rng);
    if (shortcut) init_conv(w, *shortcut, rng);
  }

  static void init_norm(std::span<T> w, const nn::GroupNorm<T>& n) {
    for (int c = 0; c < n.channels(); ++c) {
      w[n.gamma_offset() + c] = T(1);
      w[n.beta_offset() + c] = T(0);
    }
  }
  static void init_conv(std::span<T> w, const nn::Conv2d<T>& c, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c.fan_in()));
    uniform_fill(w, c.weight_offset(), c.fan_in() * c.out_channels(), bound, rng);
    uniform_fill(w, c.bias_offset(), static_cast<std::size_t>(c.out_channels()), bound, rng);
  }
  static void init_linear(std::span<T> w, const nn::Linear<T>& l, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_features()));
    uniform_fill(w, l.weight_offset(),
                 static_cast<std::size_t>(l.in_features()) * l.out_features(), bound, rng);
    uniform_fill(w, l.bias_offset(), static_cast<std::size_t>(l.out_features()), bound, rng);
  }
};

}  // namespace

template <typename T>
struct UNet<T>::Layers {
  nn::Linear<T> time_proj;
  nn::Conv2d<T> in_conv;
  std::vector<std::vector<ResBlock<T>>> encoder;  // one entry per level
  std::vector<nn::Conv2d<T>> down;                // level i -> i+1
  std::vector<nn::Conv2d<T>> up;                  // level i+1 -> i
  std::vector<std::vector<ResBlock<T>>> decoder;  // levels 0 .. L-2
  nn::GroupNorm<T> out_norm;
  nn::Conv2d<T> out_conv;
};

template <typename T>
struct UNet<T>::Cache::Impl {
  nn::Matrix<T> emb, temb_pre, temb_act;
  Tensor<T> input;
  std::vector<std::vector<typename ResBlock<T>::Cache>> encoder, decoder;
  std::vector<Tensor<T>> down_in, up_in;
  std::vector<int> skip_channels;
  typename nn::GroupNorm<T>::Cache out_norm;
  Tensor<T> out_pre, out_act;
  std::vector<std::pair<int, int>> shapes;
};

template <typename T>
UNet<T>::Cache::Cache() : impl_(std::make_unique<Impl>()) {}
template <typename T>
UNet<T>::Cache::~Cache() = default;
template <typename T>
UNet<T>::Cache::Cache(Cache&&) noexcept = default;
template <typename T>
typename UNet<T>::Cache& UNet<T>::Cache::operator=(Cache&&) noexcept = default;

template <typename T>
UNet<T>::UNet(UNetArch arch) : arch_(std::move(arch)), layers_(std::make_unique<Layers>()) {
  arch_.validate();
  const int levels = arch_.levels();
  auto& L = *layers_;
  L.time_proj = nn::Linear<T>(layout_, "time_proj", arch_.d_emb, arch_.d_emb);
  L.in_conv = nn::Conv2d<T>(layout_, "in_conv", 2, arch_.width_at(0), 3, 1);
  int ch = arch_.width_at(0);
  L.encoder.resize(static_cast<std::size_t>(levels));
  for (int l = 0; l < levels; ++l) {
    const int w = arch_.width_at(l);
    for (int b = 0; b < arch_.resblocks_per_level; ++b) {
      L.encoder[l].emplace_back(layout_, "enc" + std::to_string(l) + ".res" + std::to_string(b),
                                ch, w, arch_.d_emb, arch_.groups);
      ch = w;
    }
    if (l + 1 < levels)
      L.down.emplace_back(layout_, "down" + std::to_string(l), w, w, 3, 2);
  }
  L.up.resize(static_cast<std::size_t>(levels - 1));
  L.decoder.resize(static_cast<std::size_t>(levels - 1));
  for (int l = levels - 2; l >= 0; --l) {
    const int w = arch_.width_at(l);
    L.up[l] = nn::Conv2d<T>(layout_, "up" + std::to_string(l), ch, w, 3, 1);
    ch = 2 * w;
    for (int b = 0; b < arch_.resblocks_per_level; ++b) {
      L.decoder[l].emplace_back(layout_, "dec" + std::to_string(l) + ".res" + std::to_string(b),
                                ch, w, arch_.d_emb, arch_.groups);
      ch = w;
    }
  }
  L.out_norm = nn::GroupNorm<T>(layout_, "out_norm", ch, arch_.groups);
  L.out_conv = nn::Conv2d<T>(layout_, "out_conv", ch, 2, 3, 1);
  weights_.assign(layout_.total(), T(0));
}

template <typename T>
UNet<T>::~UNet() = default;
template <typename T>
UNet<T>::UNet(UNet&&) noexcept = default;
template <typename T>
UNet<T>& UNet<T>::operator=(UNet&&) noexcept = default;

template <typename T>
void UNet<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& L = *layers_;
  std::span<T> w = weights_;
  std::fill(weights_.begin(), weights_.end(), T(0));
  ResBlock<T>::init_linear(w, L.time_proj, rng);
  ResBlock<T>::init_conv(w, L.in_conv, rng);
  for (std::size_t l = 0; l < L.encoder.size(); ++l) {
    for (const auto& blk : L.encoder[l]) blk.initialize(w, rng);
    if (l < L.down.size()) ResBlock<T>::init_conv(w, L.down[l], rng);
  }
  for (int l = static_cast<int>(L.decoder.size()) - 1; l >= 0; --l) {
    ResBlock<T>::init_conv(w, L.up[l], rng);
    for (const auto& blk : L.decoder[l]) blk.initialize(w, rng);
  }
  ResBlock<T>::init_norm(w, L.out_norm);
  // out_conv stays zero: an untrained model predicts zero noise.
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, std::span<const int> t, Cache* cache) const {
  const int mult = arch_.spatial_multiple();
  if (x.channels != 2) throw std::invalid_argument("UNet: input must have 2 channels");
  if (x.height % mult != 0 || x.width % mult != 0)
    throw std::invalid_argument("UNet: spatial extent not divisible by " + std::to_string(mult));
  if (static_cast<int>(t.size()) != x.batch)
    throw std::invalid_argument("UNet: one time step per batch item required");
  const auto& L = *layers_;
  std::span<const T> w = weights_;
  using Impl = typename Cache::Impl;
  Impl* c = cache ? cache->impl_.get() : nullptr;
  if (c) *c = Impl{};

  nn::Matrix<T> emb(x.batch, arch_.d_emb);
  for (int n = 0; n < x.batch; ++n) {
    const auto e = time_embedding(t[n], arch_.d_emb);
    for (int k = 0; k < arch_.d_emb; ++k) emb(n, k) = static_cast<T>(e[k]);
  }
  nn::Matrix<T> temb_pre = L.time_proj.forward(w, emb);
  nn::Matrix<T> temb_act = temb_pre;
  nn::silu_inplace<T>(temb_act.data);

  const int levels = arch_.levels();
  Tensor<T> h = L.in_conv.forward(w, x);
  std::vector<Tensor<T>> skips(static_cast<std::size_t>(levels));
  if (c) {
    c->encoder.resize(L.encoder.size());
    c->decoder.resize(L.decoder.size());
    c->down_in.resize(L.down.size());
    c->up_in.resize(L.up.size());
    c->skip_channels.resize(L.decoder.size());
  }
  for (int l = 0; l < levels; ++l) {
    if (c) c->encoder[l].resize(L.encoder[l].size());
    for (std::size_t b = 0; b < L.encoder[l].size(); ++b)
      h = L.encoder[l][b].forward(w, h, temb_act, c ? &c->encoder[l][b] : nullptr);
    if (c) c->shapes.emplace_back(h.height, h.width);
    if (l + 1 < levels) {
      skips[l] = h;
      Tensor<T> next = L.down[l].forward(w, h);
      if (c) c->down_in[l] = std::move(h);
      h = std::move(next);
    }
  }
  for (int l = levels - 2; l >= 0; --l) {
    Tensor<T> u = nn::upsample_nearest2x(h);
    h = L.up[l].forward(w, u);
    if (c) {
      c->up_in[l] = std::move(u);
      c->skip_channels[l] = skips[l].channels;
    }
    h = nn::concat_channels(h, skips[l]);
    if (c) c->decoder[l].resize(L.decoder[l].size());
    for (std::size_t b = 0; b < L.decoder[l].size(); ++b)
      h = L.decoder[l][b].forward(w, h, temb_act, c ? &c->decoder[l][b] : nullptr);
    if (c) c->shapes.emplace_back(h.height, h.width);
  }
  Tensor<T> pre = L.out_norm.forward(w, h, c ? &c->out_norm : nullptr);
  Tensor<T> act = pre;
  nn::silu_inplace<T>(act.data);
  Tensor<T> out = L.out_conv.forward(w, act);
  if (c) {
    c->emb = std::move(emb);
    c->temb_pre = std::move(temb_pre);
    c->temb_act = std::move(temb_act);
    c->input = x;
    c->out_pre = std::move(pre);
    c->out_act = std::move(act);
  }
  return out;
}

template <typename T>
void UNet<T>::backward(const Cache& cache, const Tensor<T>& dout, std::span<T> grads) const {
  if (grads.size() != weights_.size()) throw std::invalid_argument("UNet: gradient size mismatch");
  const typename Cache::Impl& c = *cache.impl_;
  if (c.out_act.data.empty()) throw std::logic_error("UNet: backward without cached forward");
  const auto& L = *layers_;
  std::span<const T> w = weights_;
  const int levels = arch_.levels();

  nn::Matrix<T> dtemb_act(c.temb_act.rows, c.temb_act.cols);
  Tensor<T> dact = L.out_conv.backward(w, grads, c.out_act, dout);
  Tensor<T> dpre(dact.channels, dact.batch, dact.height, dact.width);
  nn::silu_backward<T>(c.out_pre.data, dact.data, dpre.data);
  Tensor<T> dh = L.out_norm.backward(w, grads, c.out_norm, dpre);

  std::vector<Tensor<T>> dskips(static_cast<std::size_t>(levels));
  for (int l = 0; l <= levels - 2; ++l) {
    for (int b = static_cast<int>(L.decoder[l].size()) - 1; b >= 0; --b)
      dh = L.decoder[l][b].backward(w, grads, c.decoder[l][b], c.temb_act, dh, dtemb_act);
    Tensor<T> dcur;
    nn::split_channels(dh, dh.channels - c.skip_channels[l], dcur, dskips[l]);
    Tensor<T> du = L.up[l].backward(w, grads, c.up_in[l], dcur);
    dh = nn::upsample_nearest2x_backward(du);
  }
  for (int l = levels - 1; l >= 0; --l) {
    if (l + 1 < levels) {
      Tensor<T> d = L.down[l].backward(w, grads, c.down_in[l], dh);
      for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dskips[l].data[i];
      dh = std::move(d);
    }
    for (int b = static_cast<int>(L.encoder[l].size()) - 1; b >= 0; --b)
      dh = L.encoder[l][b].backward(w, grads, c.encoder[l][b], c.temb_act, dh, dtemb_act);
  }
  L.in_conv.backward(w, grads, c.input, dh, /*need_input_grad=*/false);

  nn::Matrix<T> dtemb_pre(dtemb_act.rows, dtemb_act.cols);
  nn::silu_backward<T>(c.temb_pre.data, dtemb_act.data, dtemb_pre.data);
  L.time_proj.backward(w, grads, c.emb, dtemb_pre);
}

template <typename T>
std::vector<std::pair<int, int>> UNet<T>::probe_shapes(const Cache& cache) {
  return cache.impl_->shapes;
}

template class UNet<float>;
template class UNet<double>;
template Tensor<float> pad_input<float>(const Tensor<float>&, int, CropDescriptor*);
template Tensor<double> pad_input<double>(const Tensor<double>&, int, CropDescriptor*);
template Tensor<float> crop_output<float>(const Tensor<float>&, const CropDescriptor&);
template Tensor<double> crop_output<double>(const Tensor<double>&, const CropDescriptor&);

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> vectors_to_images(const Eigen::MatrixXd& x, int grid_width, int grid_height) {
  const Eigen::Index n = static_cast<Eigen::Index>(grid_width) * grid_height;
  if (x.rows() != 2 * n) throw std::invalid_argument("vectors_to_images: length is not 2*n1*n2");
  Tensor<T> img(2, static_cast<int>(x.cols()), grid_height, grid_width);
  for (int c = 0; c < 2; ++c)
    for (Eigen::Index b = 0; b < x.cols(); ++b) {
      T* dst = img.data.data() + c * img.channel_stride() + b * img.plane();
      for (Eigen::Index i = 0; i < n; ++i) dst[i] = static_cast<T>(x(c * n + i, b));
    }
  return img;
}

template <typename T>
Eigen::MatrixXd images_to_vectors(const Tensor<T>& img) {
  if (img.channels != 2) throw std::invalid_argument("images_to_vectors: expected 2 channels");
  const auto n = static_cast<Eigen::Index>(img.plane());
  Eigen::MatrixXd x(2 * n, img.batch);
  for (int c = 0; c < 2; ++c)
    for (int b = 0; b < img.batch; ++b) {
      const T* src = img.data.data() + c * img.channel_stride() + b * img.plane();
      for (Eigen::Index i = 0; i < n; ++i) x(c * n + i, b) = static_cast<double>(src[i]);
    }
  return x;
}

template Tensor<float> vectors_to_images<float>(const Eigen::MatrixXd&, int, int);
template Tensor<double> vectors_to_images<double>(const Eigen::MatrixXd&, int, int);
template Eigen::MatrixXd images_to_vectors<float>(const Tensor<float>&);
template Eigen::MatrixXd images_to_vectors<double>(const Tensor<double>&);

DenoiserParams make_denoiser_params(const UNetArch& arch, std::uint64_t seed) {
  UNet<float> net(arch);
  net.initialize(seed);
  DenoiserParams p;
  p.arch = arch;
  p.weights.assign(net.weights().begin(), net.weights().end());
  return p;
}

UNetDenoiser::UNetDenoiser(DenoiserParams params) : params_(std::move(params)), net_(params_.arch) {
  if (params_.weights.size() != net_.parameter_count())
    throw std::invalid_argument("UNetDenoiser: weight count does not match architecture");
  std::copy(params_.weights.begin(), params_.weights.end(), net_.weights().begin());
}

Eigen::MatrixXd UNetDenoiser::predict(const Eigen::MatrixXd& x, std::span<const int> t) const {
  const auto& a = params_.arch;
  if (x.rows() != 2 * static_cast<Eigen::Index>(a.grid_width) * a.grid_height)
    throw std::invalid_argument("UNetDenoiser: input does not match the trained geometry");
  CropDescriptor crop;
  const Tensor<float> img =
      pad_input(vectors_to_images<float>(x, a.grid_width, a.grid_height), a.spatial_multiple(), &crop);
  const Tensor<float> out = net_.forward(img, t, nullptr);
  return images_to_vectors(crop_output(out, crop));
}

// ---------------------------------------------------------------------------
// Checkpoint container: "FASCKPT1", u64 header length, JSON header, f32 tensors
// in header order (little-endian).

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'A', 'S', 'C', 'K', 'P', 'T', '1'};

nlohmann::json arch_to_json(const UNetArch& a) {
  return {{"grid_width", a.grid_width},     {"grid_height", a.grid_height},
          {"base_width", a.base_width},     {"channel_multipliers", a.channel_multipliers},
          {"d_emb", a.d_emb},               {"resblocks_per_level", a.resblocks_per_level},
          {"groups", a.groups}};
}

UNetArch arch_from_json(const nlohmann::json& j) {
  UNetArch a;
  a.grid_width = j.at("grid_width");
  a.grid_height = j.at("grid_height");
  a.base_width = j.at("base_width");
  a.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  a.d_emb = j.at("d_emb");
  a.resblocks_per_level = j.at("resblocks_per_level");
  a.groups = j.at("groups");
  return a;
}

}  // namespace

std::string fingerprint(std::span<const float> values) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path) {
  const UNet<float> net(params.arch);
  if (params.weights.size() != net.parameter_count())
    throw std::invalid_argument("save_checkpoint: weight count does not match architecture");
  nlohmann::json header;
  header["version"] = 1;
  header["arch"] = arch_to_json(params.arch);
  header["schedule_fingerprint"] = params.schedule_fingerprint;
  header["dataset_fingerprint"] = params.dataset_fingerprint;
  header["weights_fingerprint"] = fingerprint(params.weights);
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& e : net.layout().entries())
    tensors.push_back({{"name", e.name}, {"shape", e.shape}});
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : net.layout().entries())
      out.write(reinterpret_cast<const char*>(params.weights.data() + e.offset),
                static_cast<std::streamsize>(e.count * sizeof(float)));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("save_checkpoint: write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

DenoiserParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);
  if (header.at("version") != 1) throw std::runtime_error("load_checkpoint: unsupported version");

  DenoiserParams p;
  p.arch = arch_from_json(header.at("arch"));
  p.schedule_fingerprint = header.value("schedule_fingerprint", "");
  p.dataset_fingerprint = header.value("dataset_fingerprint", "");
  const UNet<float> net(p.arch);
  p.weights.assign(net.parameter_count(), 0.0f);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != net.layout().entries().size())
    throw std::runtime_error("load_checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& e = net.layout().entries()[i];
    if (tensors[i].at("name") != e.name || tensors[i].at("shape").get<std::vector<int>>() != e.shape)
      throw std::runtime_error("load_checkpoint: unexpected tensor " +
                               tensors[i].at("name").get<std::string>());
    in.read(reinterpret_cast<char*>(p.weights.data() + e.offset),
            static_cast<std::streamsize>(e.count * sizeof(float)));
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated tensor data");
  if (header.contains("weights_fingerprint") &&
      header["weights_fingerprint"] != fingerprint(p.weights))
    throw std::runtime_error("load_checkpoint: weights fingerprint mismatch");
  return p;
}

}  // namespace fasdm
