#include "fasdm/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fasdm::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using ConstArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;

}  // namespace

std::size_t ParamLayout::add(std::string name, std::vector<int> shape) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  ParamEntry e{std::move(name), std::move(shape), total_, count};
  entries_.push_back(e);
  total_ += count;
  return e.offset;
}

const ParamEntry* ParamLayout::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width)
    throw std::invalid_argument("concat_channels: shape mismatch");
  Tensor<T> out(a.channels + b.channels, a.batch, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& g, int first_channels, Tensor<T>& ga, Tensor<T>& gb) {
  ga = Tensor<T>(first_channels, g.batch, g.height, g.width);
  gb = Tensor<T>(g.channels - first_channels, g.batch, g.height, g.width);
  auto mid = g.data.begin() + static_cast<std::ptrdiff_t>(ga.size());
  std::copy(g.data.begin(), mid, ga.data.begin());
  std::copy(mid, g.data.end(), gb.data.begin());
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(ParamLayout& layout, const std::string& name, int in, int out, int kernel,
                  int stride)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(kernel / 2) {
  if (kernel != 1 && kernel != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
  w_off_ = layout.add(name + ".weight", {out, in, kernel, kernel});
  b_off_ = layout.add(name + ".bias", {out});
}

template <typename T>
int Conv2d<T>::chunk_size(int batch, int oh, int ow) const {
  // Keep the im2col scratch around 1 MiB so it stays cache resident.
  constexpr std::size_t kScratchBytes = std::size_t{1} << 20;
  const std::size_t per_sample = fan_in() * static_cast<std::size_t>(oh) * ow * sizeof(T);
  const auto n = static_cast<int>(std::max<std::size_t>(1, kScratchBytes / per_sample));
  return std::min(n, batch);
}

template <typename T>
void Conv2d<T>::im2col(const Tensor<T>& x, int n0, int n1, int oh, int ow,
                       Buffer<T>& cols) const {
  const int h = x.height, w = x.width;
  const std::size_t ncols = static_cast<std::size_t>(n1 - n0) * oh * ow;
  if (cols.size() < fan_in() * ncols) cols.resize(fan_in() * ncols);
  std::size_t row = 0;
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx, ++row) {
        T* dst = cols.data() + row * ncols;
        const auto [lo, hi] = valid_range(ow, w, kx);
        for (int n = n0; n < n1; ++n) {
          const T* src = x.data.data() + c * x.channel_stride() + n * x.plane();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            T* drow = dst + (static_cast<std::size_t>(n - n0) * oh + oy) * ow;
            if (iy < 0 || iy >= h) {
              std::fill(drow, drow + ow, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * w;
            std::fill(drow, drow + lo, T(0));
            std::fill(drow + hi, drow + ow, T(0));
            if (stride_ == 1) {
              std::copy(srow + lo - pad_ + kx, srow + hi - pad_ + kx, drow + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) drow[ox] = srow[ox * stride_ - pad_ + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const Buffer<T>& cols, int n0, int n1, int oh, int ow,
                       Tensor<T>& dx) const {
  const int h = dx.height, w = dx.width;
  const std::size_t ncols = static_cast<std::size_t>(n1 - n0) * oh * ow;
  std::size_t row = 0;
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx, ++row) {
        const T* src = cols.data() + row * ncols;
        const auto [lo, hi] = valid_range(ow, w, kx);
        for (int n = n0; n < n1; ++n) {
          T* dst = dx.data.data() + c * dx.channel_stride() + n * dx.plane();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            const T* srow = src + (static_cast<std::size_t>(n - n0) * oh + oy) * ow;
            T* drow = dst + static_cast<std::size_t>(iy) * w;
            for (int ox = lo; ox < hi; ++ox) drow[ox * stride_ - pad_ + kx] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(std::span<const T> w, const Tensor<T>& x) const {
  if (x.channels != in_) throw std::invalid_argument("Conv2d: input channel mismatch");
  const int oh = out_height(x.height), ow = out_height(x.width);
  Tensor<T> y(out_, x.batch, oh, ow);
  const Eigen::Index ncols = static_cast<Eigen::Index>(x.batch) * oh * ow;
  const auto fan = static_cast<Eigen::Index>(fan_in());
  ConstMapMat<T> weight(w.data() + w_off_, out_, fan);
  MapMat<T> out(y.data.data(), out_, ncols);
  if (kernel_ == 1 && stride_ == 1) {
    ConstMapMat<T> in(x.data.data(), in_, ncols);
    out.noalias() = weight * in;
  } else {
    thread_local Buffer<T> cols;
    const int chunk = chunk_size(x.batch, oh, ow);
    const Eigen::Index per = static_cast<Eigen::Index>(oh) * ow;
    for (int n0 = 0; n0 < x.batch; n0 += chunk) {
      const int n1 = std::min(n0 + chunk, x.batch);
      im2col(x, n0, n1, oh, ow, cols);
      const Eigen::Index nc = per * (n1 - n0);
      ConstMapMat<T> in(cols.data(), fan, nc);
      out.middleCols(per * n0, nc).noalias() = weight * in;
    }
  }
  const T* bias = w.data() + b_off_;
  for (int c = 0; c < out_; ++c) out.row(c).array() += bias[c];
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(std::span<const T> w, std::span<T> g, const Tensor<T>& x,
                              const Tensor<T>& dout, bool need_input_grad) const {
  const int oh = dout.height, ow = dout.width;
  const Eigen::Index ncols = static_cast<Eigen::Index>(x.batch) * oh * ow;
  const auto fan = static_cast<Eigen::Index>(fan_in());
  ConstMapMat<T> weight(w.data() + w_off_, out_, fan);
  MapMat<T> gweight(g.data() + w_off_, out_, fan);
  ConstMapMat<T> dy(dout.data.data(), out_, ncols);

  T* gbias = g.data() + b_off_;
  for (int c = 0; c < out_; ++c) gbias[c] += dy.row(c).sum();

  Tensor<T> dx;
  if (kernel_ == 1 && stride_ == 1) {
    ConstMapMat<T> in(x.data.data(), in_, ncols);
    gweight.noalias() += dy * in.transpose();
    if (need_input_grad) {
      dx = Tensor<T>(in_, x.batch, x.height, x.width);
      MapMat<T> dxm(dx.data.data(), in_, ncols);
      dxm.noalias() = weight.transpose() * dy;
    }
    return dx;
  }
  if (need_input_grad) dx = Tensor<T>(in_, x.batch, x.height, x.width);
  thread_local Buffer<T> cols;
  const int chunk = chunk_size(x.batch, oh, ow);
  const Eigen::Index per = static_cast<Eigen::Index>(oh) * ow;
  for (int n0 = 0; n0 < x.batch; n0 += chunk) {
    const int n1 = std::min(n0 + chunk, x.batch);
    const Eigen::Index nc = per * (n1 - n0);
    im2col(x, n0, n1, oh, ow, cols);
    const auto dy_chunk = dy.middleCols(per * n0, nc);
    {
      ConstMapMat<T> in(cols.data(), fan, nc);
      gweight.noalias() += dy_chunk * in.transpose();
    }
    if (need_input_grad) {
      MapMat<T> dcols(cols.data(), fan, nc);
      dcols.noalias() = weight.transpose() * dy_chunk;
      col2im(cols, n0, n1, oh, ow, dx);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// GroupNorm

template <typename T>
GroupNorm<T>::GroupNorm(ParamLayout& layout, const std::string& name, int channels, int groups)
    : channels_(channels), groups_(groups) {
  if (groups <= 0 || channels % groups != 0)
    throw std::invalid_argument("GroupNorm: channels must be divisible by groups");
  gamma_off_ = layout.add(name + ".gamma", {channels});
  beta_off_ = layout.add(name + ".beta", {channels});
}

template <typename T>
Tensor<T> GroupNorm<T>::forward(std::span<const T> w, const Tensor<T>& x, Cache* cache) const {
  if (x.channels != channels_) throw std::invalid_argument("GroupNorm: channel mismatch");
  const int cpg = channels_ / groups_;
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(cpg) * plane;
  Tensor<T> y(x.channels, x.batch, x.height, x.width);
  if (cache) {
    cache->normalized = Tensor<T>(x.channels, x.batch, x.height, x.width);
    cache->inv_std.assign(static_cast<std::size_t>(x.batch) * groups_, T(0));
  }
  const T* gamma = w.data() + gamma_off_;
  const T* beta = w.data() + beta_off_;
  for (int n = 0; n < x.batch; ++n) {
    for (int gr = 0; gr < groups_; ++gr) {
      double sum = 0.0, sq = 0.0;
      for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
        ConstArr<T> p(x.data.data() + c * x.channel_stride() + n * plane,
                      static_cast<Eigen::Index>(plane));
        sum += static_cast<double>(p.sum());
        sq += static_cast<double>(p.square().sum());
      }
      const double mean = sum / count;
      const double var = std::max(sq / count - mean * mean, 0.0);
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
      const T m = static_cast<T>(mean);
      if (cache) cache->inv_std[static_cast<std::size_t>(n) * groups_ + gr] = inv;
      for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
        const std::size_t base = c * x.channel_stride() + n * plane;
        const auto len = static_cast<Eigen::Index>(plane);
        ConstArr<T> p(x.data.data() + base, len);
        Arr<T> q(y.data.data() + base, len);
        if (cache) {
          Arr<T> xn(cache->normalized.data.data() + base, len);
          xn = (p - m) * inv;
          q = gamma[c] * xn + beta[c];
        } else {
          q = (p - m) * (inv * gamma[c]) + beta[c];
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> GroupNorm<T>::backward(std::span<const T> w, std::span<T> g, const Cache& cache,
                                 const Tensor<T>& dout) const {
  const Tensor<T>& xn = cache.normalized;
  const int cpg = channels_ / groups_;
  const std::size_t plane = xn.plane();
  const double count = static_cast<double>(cpg) * plane;
  Tensor<T> dx(xn.channels, xn.batch, xn.height, xn.width);
  const T* gamma = w.data() + gamma_off_;
  T* ggamma = g.data() + gamma_off_;
  T* gbeta = g.data() + beta_off_;
  for (int n = 0; n < xn.batch; ++n) {
    for (int gr = 0; gr < groups_; ++gr) {
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
        const std::size_t base = c * xn.channel_stride() + n * plane;
        const auto len = static_cast<Eigen::Index>(plane);
        ConstArr<T> dy(dout.data.data() + base, len);
        ConstArr<T> xh(xn.data.data() + base, len);
        const double gsum = static_cast<double>((dy * xh).sum());
        const double bsum = static_cast<double>(dy.sum());
        ggamma[c] += static_cast<T>(gsum);
        gbeta[c] += static_cast<T>(bsum);
        sum_dxh += gamma[c] * bsum;
        sum_dxh_xh += gamma[c] * gsum;
      }
      const T mean_dxh = static_cast<T>(sum_dxh / count);
      const T mean_dxh_xh = static_cast<T>(sum_dxh_xh / count);
      const T inv = cache.inv_std[static_cast<std::size_t>(n) * groups_ + gr];
      for (int c = gr * cpg; c < (gr + 1) * cpg; ++c) {
        const std::size_t base = c * xn.channel_stride() + n * plane;
        const auto len = static_cast<Eigen::Index>(plane);
        ConstArr<T> dy(dout.data.data() + base, len);
        ConstArr<T> xh(xn.data.data() + base, len);
        Arr<T> d(dx.data.data() + base, len);
        d = inv * (gamma[c] * dy - mean_dxh - xh * mean_dxh_xh);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(ParamLayout& layout, const std::string& name, int in, int out)
    : in_(in), out_(out) {
  w_off_ = layout.add(name + ".weight", {out, in});
  b_off_ = layout.add(name + ".bias", {out});
}

template <typename T>
Matrix<T> Linear<T>::forward(std::span<const T> w, const Matrix<T>& x) const {
  if (x.cols != in_) throw std::invalid_argument("Linear: feature mismatch");
  Matrix<T> y(x.rows, out_);
  ConstMapMat<T> weight(w.data() + w_off_, out_, in_);
  ConstMapMat<T> in(x.data.data(), x.rows, in_);
  MapMat<T> out(y.data.data(), x.rows, out_);
  out.noalias() = in * weight.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(w.data() + b_off_, out_);
  out.rowwise() += bias;
  return y;
}

template <typename T>
Matrix<T> Linear<T>::backward(std::span<const T> w, std::span<T> g, const Matrix<T>& x,
                              const Matrix<T>& dout) const {
  ConstMapMat<T> weight(w.data() + w_off_, out_, in_);
  ConstMapMat<T> in(x.data.data(), x.rows, in_);
  ConstMapMat<T> dy(dout.data.data(), dout.rows, out_);
  MapMat<T> gweight(g.data() + w_off_, out_, in_);
  gweight.noalias() += dy.transpose() * in;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gbias(g.data() + b_off_, out_);
  gbias += dy.colwise().sum();
  Matrix<T> dx(x.rows, in_);
  MapMat<T> dxm(dx.data.data(), x.rows, in_);
  dxm.noalias() = dy * weight;
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise and resampling

template <typename T>
void silu_inplace(std::span<T> x) {
  Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> a(x.data(), static_cast<Eigen::Index>(x.size()));
  a = a / (T(1) + (-a).exp());
}

template <typename T>
void silu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::Map<const Arr> xa(x.data(), n), dya(dy.data(), n);
  Eigen::Map<Arr> dxa(dx.data(), n);
  const Arr s = T(1) / (T(1) + (-xa).exp());
  dxa = dya * s * (T(1) + xa * (T(1) - s));
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  Tensor<T> y(x.channels, x.batch, 2 * x.height, 2 * x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n)
      for (int yy = 0; yy < y.height; ++yy)
        for (int xx = 0; xx < y.width; ++xx) y.at(c, n, yy, xx) = x.at(c, n, yy / 2, xx / 2);
  return y;
}

template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& dout) {
  Tensor<T> dx(dout.channels, dout.batch, dout.height / 2, dout.width / 2);
  for (int c = 0; c < dout.channels; ++c)
    for (int n = 0; n < dout.batch; ++n)
      for (int yy = 0; yy < dout.height; ++yy)
        for (int xx = 0; xx < dout.width; ++xx) dx.at(c, n, yy / 2, xx / 2) += dout.at(c, n, yy, xx);
  return dx;
}

#define FASDM_NN_INSTANTIATE(T)                                                              \
  template struct Tensor<T>;                                                                 \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);            \
  template class Conv2d<T>;                                                                  \
  template class GroupNorm<T>;                                                               \
  template class Linear<T>;                                                                  \
  template void silu_inplace<T>(std::span<T>);                                               \
  template void silu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);      \
  template Tensor<T> upsample_nearest2x<T>(const Tensor<T>&);                                \
  template Tensor<T> upsample_nearest2x_backward<T>(const Tensor<T>&);

FASDM_NN_INSTANTIATE(float)
FASDM_NN_INSTANTIATE(double)

#undef FASDM_NN_INSTANTIATE

}  // namespace fasdm::nn
