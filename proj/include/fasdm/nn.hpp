#pragma once

// Minimal CPU convolutional building blocks with hand-written backward passes.
//
// Activations use a channel-major layout [C][N][H][W]: a convolution over a
// whole batch is then a single GEMM, and channel concatenation is a plain
// append. All learnable weights of a network live in one flat buffer; layers
// hold offsets into it, so gradients and optimizer state are flat buffers of
// the same size.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fasdm::nn {

// Vectorized Eigen reductions split work by data alignment, so every buffer
// the kernels touch uses the same alignment to keep results bitwise reproducible.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct Tensor {
  int channels = 0;
  int batch = 0;
  int height = 0;
  int width = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int c, int n, int h, int w)
      : channels(c), batch(n), height(h), width(w),
        data(static_cast<std::size_t>(c) * n * h * w, T(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t channel_stride() const { return plane() * batch; }
  std::size_t size() const { return data.size(); }

  T& at(int c, int n, int y, int x) {
    return data[c * channel_stride() + n * plane() + static_cast<std::size_t>(y) * width + x];
  }
  T at(int c, int n, int y, int x) const {
    return data[c * channel_stride() + n * plane() + static_cast<std::size_t>(y) * width + x];
  }
  bool same_shape(const Tensor& o) const {
    return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
  }
};

// Append b's channels after a's (same batch and spatial extent).
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Split a gradient produced by concat_channels back into its two parts.
template <typename T>
void split_channels(const Tensor<T>& g, int first_channels, Tensor<T>& ga, Tensor<T>& gb);

struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

// Names, shapes and offsets of every learnable tensor in a flat buffer.
class ParamLayout {
 public:
  std::size_t add(std::string name, std::vector<int> shape);
  std::size_t total() const { return total_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry* find(const std::string& name) const;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamLayout& layout, const std::string& name, int in, int out, int kernel, int stride);

  Tensor<T> forward(std::span<const T> w, const Tensor<T>& x) const;
  // Accumulates weight gradients into g and returns dL/dx.
  Tensor<T> backward(std::span<const T> w, std::span<T> g, const Tensor<T>& x,
                     const Tensor<T>& dout, bool need_input_grad = true) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int stride() const { return stride_; }
  std::size_t weight_offset() const { return w_off_; }
  std::size_t bias_offset() const { return b_off_; }
  std::size_t fan_in() const { return static_cast<std::size_t>(in_) * kernel_ * kernel_; }

 private:
  int out_height(int h) const { return (h + 2 * pad_ - kernel_) / stride_ + 1; }
  // Output columns [lo, hi) whose kernel tap kx lands inside an input row of width w.
  std::pair<int, int> valid_range(int ow, int w, int kx) const {
    int lo = 0, hi = ow;
    while (lo < ow && lo * stride_ - pad_ + kx < 0) ++lo;
    while (hi > lo && (hi - 1) * stride_ - pad_ + kx >= w) --hi;
    return {lo, hi};
  }
  int chunk_size(int batch, int oh, int ow) const;
  // Columns for batch items [n0, n1).
  void im2col(const Tensor<T>& x, int n0, int n1, int oh, int ow, Buffer<T>& cols) const;
  void col2im(const Buffer<T>& cols, int n0, int n1, int oh, int ow, Tensor<T>& dx) const;

  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  std::size_t w_off_ = 0, b_off_ = 0;
};

template <typename T>
class GroupNorm {
 public:
  struct Cache {
    Tensor<T> normalized;
    Buffer<T> inv_std;  // [N][G]
  };

  GroupNorm() = default;
  GroupNorm(ParamLayout& layout, const std::string& name, int channels, int groups);

  Tensor<T> forward(std::span<const T> w, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(std::span<const T> w, std::span<T> g, const Cache& cache,
                     const Tensor<T>& dout) const;

  std::size_t gamma_offset() const { return gamma_off_; }
  std::size_t beta_offset() const { return beta_off_; }
  int channels() const { return channels_; }

 private:
  int channels_ = 0, groups_ = 1;
  std::size_t gamma_off_ = 0, beta_off_ = 0;
  static constexpr double kEps = 1e-5;
};

// Row-major batch of vectors: rows = batch, cols = features.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  Buffer<T> data;
  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}
  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  T operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamLayout& layout, const std::string& name, int in, int out);

  Matrix<T> forward(std::span<const T> w, const Matrix<T>& x) const;
  Matrix<T> backward(std::span<const T> w, std::span<T> g, const Matrix<T>& x,
                     const Matrix<T>& dout) const;

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  std::size_t weight_offset() const { return w_off_; }
  std::size_t bias_offset() const { return b_off_; }

 private:
  int in_ = 0, out_ = 0;
  std::size_t w_off_ = 0, b_off_ = 0;
};

template <typename T>
void silu_inplace(std::span<T> x);
// dx = dy * silu'(x), computed from the pre-activation x.
template <typename T>
void silu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& dout);

}  // namespace fasdm::nn
