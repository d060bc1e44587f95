#pragma once

// Time-conditioned U-Net noise predictor for 2-channel (Re/Im) channel images.

#include "fasdm/nn.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fasdm {

struct UNetArch {
  int grid_width = 16;   // n1 (x, fastest index of the flattened channel)
  int grid_height = 16;  // n2
  int base_width = 32;
  std::vector<int> channel_multipliers{1, 2, 2, 4};
  int d_emb = 128;
  int resblocks_per_level = 2;
  int groups = 8;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  int width_at(int level) const { return base_width * channel_multipliers.at(level); }
  // Spatial extents must be divisible by this after padding.
  int spatial_multiple() const { return 1 << (levels() - 1); }
  void validate() const;
  bool operator==(const UNetArch&) const = default;
};

// Raw sinusoidal embedding: e[2k] = sin(t w_k), e[2k+1] = cos(t w_k), w_k = 10000^(-2k/d).
std::vector<double> time_embedding(double t, int d_emb);

struct CropDescriptor {
  int height = 0;
  int width = 0;
  int padded_height = 0;
  int padded_width = 0;
};

// Reflect-pads the bottom/right edges up to the next multiple of `multiple`.
template <typename T>
nn::Tensor<T> pad_input(const nn::Tensor<T>& x, int multiple, CropDescriptor* crop);
template <typename T>
nn::Tensor<T> crop_output(const nn::Tensor<T>& x, const CropDescriptor& crop);

template <typename T>
class UNet {
 public:
  // Activations recorded by a forward pass for use by backward().
  class Cache {
   public:
    Cache();
    ~Cache();
    Cache(Cache&&) noexcept;
    Cache& operator=(Cache&&) noexcept;

   private:
    friend class UNet;
    struct Impl;
    std::unique_ptr<Impl> impl_;
  };

  explicit UNet(UNetArch arch);
  ~UNet();
  UNet(UNet&&) noexcept;
  UNet& operator=(UNet&&) noexcept;

  const UNetArch& arch() const { return arch_; }
  const nn::ParamLayout& layout() const { return layout_; }
  std::size_t parameter_count() const { return layout_.total(); }

  // Deterministic initialization; the output convolution starts at zero.
  void initialize(std::uint64_t seed);

  std::span<T> weights() { return weights_; }
  std::span<const T> weights() const { return weights_; }

  // x is [2][B][H][W] with H, W already padded to the spatial multiple.
  // Passing a cache records what backward() needs; inference passes nullptr.
  nn::Tensor<T> forward(const nn::Tensor<T>& x, std::span<const int> t, Cache* cache) const;
  // Accumulates dL/dweights into grads.
  void backward(const Cache& cache, const nn::Tensor<T>& dout, std::span<T> grads) const;

  // Spatial shapes seen at every resolution level during the last cached
  // forward pass, encoder then decoder order.
  static std::vector<std::pair<int, int>> probe_shapes(const Cache& cache);

 private:
  struct Layers;
  UNetArch arch_;
  nn::ParamLayout layout_;
  std::unique_ptr<Layers> layers_;
  nn::Buffer<T> weights_;
};

// Weights plus architecture; the unit that is trained, checkpointed and served.
struct DenoiserParams {
  UNetArch arch;
  std::vector<float> weights;
  std::string schedule_fingerprint;
  std::string dataset_fingerprint;
};

DenoiserParams make_denoiser_params(const UNetArch& arch, std::uint64_t seed);

void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path);
DenoiserParams load_checkpoint(const std::filesystem::path& path);
std::string fingerprint(std::span<const float> values);

// epsilon-predictor over flat real channel vectors [Re(vec H); Im(vec H)].
// Columns of x are independent samples in the variance-preserving domain.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Eigen::MatrixXd predict(const Eigen::MatrixXd& x, std::span<const int> t) const = 0;
};

class UNetDenoiser final : public NoisePredictor {
 public:
  explicit UNetDenoiser(DenoiserParams params);
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, std::span<const int> t) const override;

  const DenoiserParams& params() const { return params_; }
  const UNet<float>& network() const { return net_; }

 private:
  DenoiserParams params_;
  UNet<float> net_;
};

// Flat real vectors (columns) <-> [2][B][n2][n1] image tensors.
template <typename T>
nn::Tensor<T> vectors_to_images(const Eigen::MatrixXd& x, int grid_width, int grid_height);
template <typename T>
Eigen::MatrixXd images_to_vectors(const nn::Tensor<T>& img);

}  // namespace fasdm
