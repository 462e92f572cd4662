// SPDX-License-Identifier: Apache-2.0
//
// Encoder, generator and the three-part discriminator.
//
// The topology follows the ALI CIFAR10 networks: a 7-layer convolutional
// encoder whose last layer emits (mu, logvar) followed by a reparametrized
// sample, a 7-layer transposed-convolution generator ending in a sigmoid, and
// a discriminator D_xz(concat(D_x(x), D_z(z))). Kernel sizes and strides are
// fixed per image size (16 or 32 pixels); channel widths come from a width
// multiplier and may be overridden one by one.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <ATen/core/Generator.h>
#include <json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/pimpl.h>

#include "tbigan/datasets.hpp"

namespace tbigan {

struct ConvSpec {
  int64_t out_channels;
  int64_t kernel;
  int64_t stride;
};

struct ArchitectureConfig {
  int64_t latent_dim = 64;
  ImageShape image_shape{3, 32, 32};
  int64_t width = 32;
  std::vector<int64_t> encoder_channels;    // 7 entries, last = 2 * latent_dim
  std::vector<int64_t> generator_channels;  // 7 entries, last = image channels
  std::vector<int64_t> dx_channels;         // 5 entries
  std::vector<int64_t> dz_channels;         // 2 entries
  std::vector<int64_t> dxz_channels;        // 3 entries, last = 1
  double leaky_slope = 0.02;

  /// Channel widths scaled from the ALI CIFAR10 networks (width 32 there).
  static ArchitectureConfig preset(int64_t latent_dim, ImageShape shape,
                                   int64_t width);
  /// 16x16 RGB images, width 8.
  static ArchitectureConfig tiny(int64_t latent_dim = 8);

  /// Throws UsageError when a layer count, width or image size is invalid.
  void validate() const;

  std::vector<ConvSpec> encoder_layers() const;
  std::vector<ConvSpec> generator_layers() const;
  std::vector<ConvSpec> dx_layers() const;

  bool operator==(const ArchitectureConfig&) const = default;
};

void to_json(nlohmann::json& j, const ArchitectureConfig& c);
void from_json(const nlohmann::json& j, ArchitectureConfig& c);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ArchitectureConfig& config);

  /// (mu, logvar), each [B, m]; logvar is clamped to [-10, 10].
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& images);

 private:
  torch::nn::Sequential body_{nullptr};
  int64_t latent_dim_;
};
TORCH_MODULE(Encoder);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const ArchitectureConfig& config);
  torch::Tensor forward(const torch::Tensor& codes);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const ArchitectureConfig& config);
  /// Probability in (0, 1) that (image, code) came from the encoder path.
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& codes);

 private:
  torch::nn::Sequential dx_{nullptr};
  torch::nn::Sequential dz_{nullptr};
  torch::nn::Sequential dxz_{nullptr};
};
TORCH_MODULE(Discriminator);

enum class Submodel { encoder, generator, discriminator };

/// The three compared models: encoder trained on triplets only, plain BiGAN,
/// and BiGAN with the triplet term on the encoder.
enum class ModelTag { triplet, bigan, triplet_bigan };
ModelTag parse_model_tag(std::string_view name);
std::string_view to_string(ModelTag tag);
/// Row label used in report tables ("Triplet", "BiGAN", "Triplet BiGAN").
std::string_view display_name(ModelTag tag);
std::string_view to_string(Submodel s);

/// theta_E, theta_G, theta_D plus the architecture they were built from.
struct ModelParams {
  ArchitectureConfig config;
  Encoder encoder{nullptr};
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};

  /// Builds all three networks and initializes weights from `seed`
  /// (conv weights N(0, 0.02), batch-norm scale 1 and shift 0).
  ModelParams(const ArchitectureConfig& config, uint64_t seed,
              torch::ScalarType dtype = torch::kFloat32);

  torch::nn::Module& module(Submodel s);
  const torch::nn::Module& module(Submodel s) const;

  torch::ScalarType dtype() const;

  /// Independent deep copy of every parameter and buffer.
  ModelParams snapshot() const;
};

enum class EncodeMode { train, deterministic };

/// Encoder output: z = mu + exp(logvar / 2) * eps in train mode, z = mu in
/// deterministic mode.
struct LatentCode {
  torch::Tensor z;
  torch::Tensor mu;
  torch::Tensor logvar;
};

/// The sampling step of the encoder; unclamped.
torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar,
                             const torch::Tensor& eps);

/// Train mode uses batch statistics and draws eps from `noise`, which is then
/// required. Deterministic mode uses running statistics and returns z = mu.
LatentCode encode(ModelParams& params, const torch::Tensor& images,
                  EncodeMode mode, std::optional<at::Generator> noise = {});

torch::Tensor generate(ModelParams& params, const torch::Tensor& codes,
                       EncodeMode mode = EncodeMode::train);

torch::Tensor discriminate(ModelParams& params, const torch::Tensor& images,
                           const torch::Tensor& codes);

/// i.i.d. N(0, 1) entries of shape [batch, m].
torch::Tensor sample_prior(int64_t batch, int64_t m, at::Generator& gen,
                           torch::ScalarType dtype = torch::kFloat32);
torch::Tensor sample_prior(int64_t batch, int64_t m, uint64_t seed,
                           torch::ScalarType dtype = torch::kFloat32);

at::Generator make_generator(uint64_t seed);

}  // namespace tbigan
