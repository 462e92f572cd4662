// SPDX-License-Identifier: Apache-2.0

#include "tbigan/models.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "tbigan/error.hpp"

namespace tbigan {

namespace nn = torch::nn;

namespace {

constexpr int64_t kEncoderLayers = 7;
constexpr int64_t kGeneratorLayers = 7;
constexpr int64_t kDxLayers = 5;
constexpr int64_t kDzLayers = 2;
constexpr int64_t kDxzLayers = 3;

// (kernel, stride) per layer; channel widths are attached separately.
struct Topology {
  std::vector<std::pair<int64_t, int64_t>> encoder;
  std::vector<std::pair<int64_t, int64_t>> generator;
  std::vector<std::pair<int64_t, int64_t>> dx;
};

const Topology& topology_for(int64_t image_size) {
  // 32: 32 -> 28 -> 13 -> 10 -> 4 -> 1 -> 1 -> 1 (ALI CIFAR10).
  static const Topology k32{
      {{5, 1}, {4, 2}, {4, 1}, {4, 2}, {4, 1}, {1, 1}, {1, 1}},
      {{4, 1}, {4, 2}, {4, 1}, {4, 2}, {5, 1}, {1, 1}, {1, 1}},
      {{5, 1}, {4, 2}, {4, 1}, {4, 2}, {4, 1}}};
  // 16: 16 -> 14 -> 6 -> 4 -> 1 -> 1 -> 1 -> 1.
  static const Topology k16{
      {{3, 1}, {4, 2}, {3, 1}, {4, 2}, {1, 1}, {1, 1}, {1, 1}},
      {{4, 1}, {3, 1}, {4, 2}, {3, 1}, {1, 1}, {1, 1}, {1, 1}},
      {{3, 1}, {4, 2}, {3, 1}, {4, 2}, {1, 1}}};
  if (image_size == 32) return k32;
  if (image_size == 16) return k16;
  throw UsageError("unsupported image size " + std::to_string(image_size) +
                   " (supported: 16, 32)");
}

std::vector<ConvSpec> zip(const std::vector<std::pair<int64_t, int64_t>>& ks,
                          const std::vector<int64_t>& channels) {
  std::vector<ConvSpec> out;
  for (size_t i = 0; i < ks.size(); ++i) {
    out.push_back({channels.at(i), ks[i].first, ks[i].second});
  }
  return out;
}

void check_count(const std::vector<int64_t>& v, size_t n, const char* what) {
  if (v.size() != n) {
    throw UsageError(std::string(what) + " needs " + std::to_string(n) +
                     " channel entries, got " + std::to_string(v.size()));
  }
  for (auto c : v) {
    if (c <= 0) throw UsageError(std::string(what) + " has a non-positive width");
  }
}

nn::LeakyReLU leaky(double slope) {
  return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(slope));
}

}  // namespace

ArchitectureConfig ArchitectureConfig::preset(int64_t latent_dim,
                                              ImageShape shape, int64_t width) {
  ArchitectureConfig c;
  c.latent_dim = latent_dim;
  c.image_shape = shape;
  c.width = width;
  const int64_t w = width;
  c.encoder_channels = {w, 2 * w, 4 * w, 8 * w, 16 * w, 16 * w, 2 * latent_dim};
  c.generator_channels = {8 * w, 4 * w, 2 * w, w, w, w, shape.channels};
  c.dx_channels = {w, 2 * w, 4 * w, 8 * w, 16 * w};
  c.dz_channels = {16 * w, 16 * w};
  c.dxz_channels = {32 * w, 32 * w, 1};
  return c;
}

ArchitectureConfig ArchitectureConfig::tiny(int64_t latent_dim) {
  return preset(latent_dim, {3, 16, 16}, 8);
}

void ArchitectureConfig::validate() const {
  if (latent_dim <= 0) throw UsageError("latent_dim must be positive");
  if (image_shape.channels <= 0) throw UsageError("image channels must be positive");
  if (image_shape.height != image_shape.width) {
    throw UsageError("images must be square");
  }
  topology_for(image_shape.height);
  check_count(encoder_channels, kEncoderLayers, "encoder");
  check_count(generator_channels, kGeneratorLayers, "generator");
  check_count(dx_channels, kDxLayers, "D_x");
  check_count(dz_channels, kDzLayers, "D_z");
  check_count(dxz_channels, kDxzLayers, "D_xz");
  if (encoder_channels.back() != 2 * latent_dim) {
    throw UsageError("encoder output width must equal 2 * latent_dim");
  }
  if (generator_channels.back() != image_shape.channels) {
    throw UsageError("generator output width must equal image channels");
  }
  if (dxz_channels.back() != 1) throw UsageError("D_xz must end in one unit");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw UsageError("leaky_slope must lie in (0, 1)");
  }
}

std::vector<ConvSpec> ArchitectureConfig::encoder_layers() const {
  return zip(topology_for(image_shape.height).encoder, encoder_channels);
}
std::vector<ConvSpec> ArchitectureConfig::generator_layers() const {
  return zip(topology_for(image_shape.height).generator, generator_channels);
}
std::vector<ConvSpec> ArchitectureConfig::dx_layers() const {
  return zip(topology_for(image_shape.height).dx, dx_channels);
}

void to_json(nlohmann::json& j, const ArchitectureConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim},
                     {"image_shape",
                      {c.image_shape.channels, c.image_shape.height,
                       c.image_shape.width}},
                     {"width", c.width},
                     {"encoder_channels", c.encoder_channels},
                     {"generator_channels", c.generator_channels},
                     {"dx_channels", c.dx_channels},
                     {"dz_channels", c.dz_channels},
                     {"dxz_channels", c.dxz_channels},
                     {"leaky_slope", c.leaky_slope}};
}

void from_json(const nlohmann::json& j, ArchitectureConfig& c) {
  j.at("latent_dim").get_to(c.latent_dim);
  const auto& s = j.at("image_shape");
  c.image_shape = {s.at(0).get<int64_t>(), s.at(1).get<int64_t>(),
                   s.at(2).get<int64_t>()};
  j.at("width").get_to(c.width);
  j.at("encoder_channels").get_to(c.encoder_channels);
  j.at("generator_channels").get_to(c.generator_channels);
  j.at("dx_channels").get_to(c.dx_channels);
  j.at("dz_channels").get_to(c.dz_channels);
  j.at("dxz_channels").get_to(c.dxz_channels);
  j.at("leaky_slope").get_to(c.leaky_slope);
}

EncoderImpl::EncoderImpl(const ArchitectureConfig& config)
    : latent_dim_(config.latent_dim) {
  body_ = nn::Sequential();
  int64_t in = config.image_shape.channels;
  const auto layers = config.encoder_layers();
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const bool last = i + 1 == layers.size();
    body_->push_back(nn::Conv2d(
        nn::Conv2dOptions(in, l.out_channels, l.kernel).stride(l.stride).bias(last)));
    if (!last) {
      body_->push_back(nn::BatchNorm2d(l.out_channels));
      body_->push_back(leaky(config.leaky_slope));
    }
    in = l.out_channels;
  }
  register_module("body", body_);
}

std::pair<torch::Tensor, torch::Tensor> EncoderImpl::forward(
    const torch::Tensor& images) {
  auto h = body_->forward(images).flatten(1);
  auto mu = h.narrow(1, 0, latent_dim_);
  auto logvar = h.narrow(1, latent_dim_, latent_dim_).clamp(-10.0, 10.0);
  return {mu, logvar};
}

GeneratorImpl::GeneratorImpl(const ArchitectureConfig& config) {
  body_ = nn::Sequential();
  int64_t in = config.latent_dim;
  const auto layers = config.generator_layers();
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const bool last = i + 1 == layers.size();
    body_->push_back(nn::ConvTranspose2d(
        nn::ConvTranspose2dOptions(in, l.out_channels, l.kernel)
            .stride(l.stride)
            .bias(last)));
    if (!last) {
      body_->push_back(nn::BatchNorm2d(l.out_channels));
      body_->push_back(leaky(config.leaky_slope));
    }
    in = l.out_channels;
  }
  body_->push_back(nn::Sigmoid());
  register_module("body", body_);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& codes) {
  return body_->forward(codes.view({codes.size(0), codes.size(1), 1, 1}));
}

DiscriminatorImpl::DiscriminatorImpl(const ArchitectureConfig& config) {
  dx_ = nn::Sequential();
  int64_t in = config.image_shape.channels;
  for (const auto& l : config.dx_layers()) {
    dx_->push_back(nn::Conv2d(
        nn::Conv2dOptions(in, l.out_channels, l.kernel).stride(l.stride)));
    dx_->push_back(leaky(config.leaky_slope));
    in = l.out_channels;
  }
  const int64_t dx_out = in;

  dz_ = nn::Sequential();
  in = config.latent_dim;
  for (auto c : config.dz_channels) {
    dz_->push_back(nn::Conv2d(nn::Conv2dOptions(in, c, 1)));
    dz_->push_back(leaky(config.leaky_slope));
    in = c;
  }
  const int64_t dz_out = in;

  dxz_ = nn::Sequential();
  in = dx_out + dz_out;
  for (size_t i = 0; i < config.dxz_channels.size(); ++i) {
    const auto c = config.dxz_channels[i];
    dxz_->push_back(nn::Conv2d(nn::Conv2dOptions(in, c, 1)));
    if (i + 1 < config.dxz_channels.size()) {
      dxz_->push_back(leaky(config.leaky_slope));
    }
    in = c;
  }
  dxz_->push_back(nn::Sigmoid());

  register_module("dx", dx_);
  register_module("dz", dz_);
  register_module("dxz", dxz_);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images,
                                         const torch::Tensor& codes) {
  const auto b = images.size(0);
  auto u = dx_->forward(images).flatten(1);
  auto v = dz_->forward(codes.view({b, codes.size(1), 1, 1})).flatten(1);
  auto joint = torch::cat({u, v}, 1);
  return dxz_->forward(joint.view({b, joint.size(1), 1, 1})).view({b});
}

std::string_view to_string(Submodel s) {
  switch (s) {
    case Submodel::encoder: return "encoder";
    case Submodel::generator: return "generator";
    case Submodel::discriminator: return "discriminator";
  }
  return "?";
}

ModelTag parse_model_tag(std::string_view name) {
  if (name == "triplet") return ModelTag::triplet;
  if (name == "bigan") return ModelTag::bigan;
  if (name == "triplet-bigan") return ModelTag::triplet_bigan;
  throw UsageError("unknown model '" + std::string(name) +
                   "' (expected triplet, bigan or triplet-bigan)");
}

std::string_view to_string(ModelTag tag) {
  switch (tag) {
    case ModelTag::triplet: return "triplet";
    case ModelTag::bigan: return "bigan";
    case ModelTag::triplet_bigan: return "triplet-bigan";
  }
  return "?";
}

std::string_view display_name(ModelTag tag) {
  switch (tag) {
    case ModelTag::triplet: return "Triplet";
    case ModelTag::bigan: return "BiGAN";
    case ModelTag::triplet_bigan: return "Triplet BiGAN";
  }
  return "?";
}

namespace {

void init_weights(nn::Module& root, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  for (auto& m : root.modules(/*include_self=*/false)) {
    if (auto* conv = m->as<nn::Conv2d>()) {
      conv->weight.normal_(0.0, 0.02, gen);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* convt = m->as<nn::ConvTranspose2d>()) {
      convt->weight.normal_(0.0, 0.02, gen);
      if (convt->bias.defined()) convt->bias.zero_();
    } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    }
  }
}

}  // namespace

ModelParams::ModelParams(const ArchitectureConfig& cfg, uint64_t seed,
                         torch::ScalarType dtype)
    : config(cfg) {
  config.validate();
  encoder = Encoder(config);
  generator = Generator(config);
  discriminator = Discriminator(config);
  auto gen = make_generator(seed);
  init_weights(*encoder, gen);
  init_weights(*generator, gen);
  init_weights(*discriminator, gen);
  encoder->to(dtype);
  generator->to(dtype);
  discriminator->to(dtype);
}

torch::nn::Module& ModelParams::module(Submodel s) {
  switch (s) {
    case Submodel::encoder: return *encoder;
    case Submodel::generator: return *generator;
    case Submodel::discriminator: return *discriminator;
  }
  throw ContractError("unknown submodel");
}

const torch::nn::Module& ModelParams::module(Submodel s) const {
  return const_cast<ModelParams*>(this)->module(s);
}

torch::ScalarType ModelParams::dtype() const {
  return encoder->parameters().front().scalar_type();
}

ModelParams ModelParams::snapshot() const {
  ModelParams copy(config, 0, dtype());
  torch::NoGradGuard no_grad;
  for (auto s : {Submodel::encoder, Submodel::generator, Submodel::discriminator}) {
    auto src_p = module(s).named_parameters();
    for (auto& item : copy.module(s).named_parameters()) {
      item.value().copy_(src_p[item.key()]);
    }
    auto src_b = module(s).named_buffers();
    for (auto& item : copy.module(s).named_buffers()) {
      item.value().copy_(src_b[item.key()]);
    }
  }
  return copy;
}

torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar,
                             const torch::Tensor& eps) {
  return mu + torch::exp(0.5 * logvar) * eps;
}

namespace {

void check_images(const ModelParams& p, const torch::Tensor& images) {
  const auto& s = p.config.image_shape;
  if (images.dim() != 4 || images.size(1) != s.channels ||
      images.size(2) != s.height || images.size(3) != s.width) {
    throw ContractError("image batch shape " + c10::str(images.sizes()) +
                        " does not match [B, " + std::to_string(s.channels) +
                        ", " + std::to_string(s.height) + ", " +
                        std::to_string(s.width) + "]");
  }
}

void check_codes(const ModelParams& p, const torch::Tensor& codes) {
  if (codes.dim() != 2 || codes.size(1) != p.config.latent_dim) {
    throw ContractError("code batch shape " + c10::str(codes.sizes()) +
                        " does not match [B, " +
                        std::to_string(p.config.latent_dim) + "]");
  }
}

}  // namespace

LatentCode encode(ModelParams& params, const torch::Tensor& images,
                  EncodeMode mode, std::optional<at::Generator> noise) {
  check_images(params, images);
  params.encoder->train(mode == EncodeMode::train);
  auto [mu, logvar] = params.encoder->forward(images.to(params.dtype()));
  if (mode == EncodeMode::deterministic) return {mu, mu, logvar};
  if (!noise) throw ContractError("train-mode encode needs a noise generator");
  auto eps = torch::randn(mu.sizes(), *noise, mu.options());
  return {reparameterize(mu, logvar, eps), mu, logvar};
}

torch::Tensor generate(ModelParams& params, const torch::Tensor& codes,
                       EncodeMode mode) {
  check_codes(params, codes);
  params.generator->train(mode == EncodeMode::train);
  return params.generator->forward(codes.to(params.dtype()));
}

torch::Tensor discriminate(ModelParams& params, const torch::Tensor& images,
                           const torch::Tensor& codes) {
  check_images(params, images);
  check_codes(params, codes);
  if (images.size(0) != codes.size(0)) {
    throw ContractError("discriminator inputs are not batch-aligned (" +
                        std::to_string(images.size(0)) + " images, " +
                        std::to_string(codes.size(0)) + " codes)");
  }
  return params.discriminator->forward(images.to(params.dtype()),
                                       codes.to(params.dtype()));
}

at::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

torch::Tensor sample_prior(int64_t batch, int64_t m, at::Generator& gen,
                           torch::ScalarType dtype) {
  if (batch < 1 || m < 1) throw ContractError("sample_prior needs batch, m >= 1");
  return torch::randn({batch, m}, gen, torch::TensorOptions().dtype(dtype));
}

torch::Tensor sample_prior(int64_t batch, int64_t m, uint64_t seed,
                           torch::ScalarType dtype) {
  auto gen = make_generator(seed);
  return sample_prior(batch, m, gen, dtype);
}

}  // namespace tbigan
