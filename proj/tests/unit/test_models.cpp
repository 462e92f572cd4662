// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <torch/torch.h>

#include "tbigan/error.hpp"
#include "tbigan/losses.hpp"
#include "tbigan/models.hpp"

using namespace tbigan;

namespace {

torch::Tensor images(int64_t b, int64_t size, uint64_t seed) {
  auto gen = make_generator(seed);
  return torch::rand({b, 3, size, size}, gen);
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("presets describe seven-layer encoder and generator") {
  const auto tiny = ArchitectureConfig::tiny();
  CHECK(tiny.image_shape == ImageShape{3, 16, 16});
  CHECK(tiny.width == 8);
  CHECK(tiny.encoder_channels.size() == 7);
  CHECK(tiny.encoder_channels.back() == 16);
  CHECK(tiny.generator_channels.back() == 3);
  CHECK(tiny.dxz_channels.back() == 1);
  const auto full = ArchitectureConfig::preset(64, {3, 32, 32}, 32);
  CHECK(full.encoder_channels == std::vector<int64_t>{32, 64, 128, 256, 512, 512, 128});
  CHECK(full.generator_channels == std::vector<int64_t>{256, 128, 64, 32, 32, 32, 3});
  CHECK_THROWS_AS(ArchitectureConfig::preset(8, {3, 24, 24}, 8).validate(), UsageError);
  auto bad = tiny;
  bad.encoder_channels.back() = 7;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("architecture json round trip") {
  const auto a = ArchitectureConfig::preset(16, {3, 32, 32}, 4);
  nlohmann::json j = a;
  CHECK(j.get<ArchitectureConfig>() == a);
}

TEST_CASE("shape algebra for supported latent sizes") {
  for (int64_t size : {16, 32}) {
    for (int64_t m : {4, 16, 64}) {
      CAPTURE(size);
      CAPTURE(m);
      ModelParams p(ArchitectureConfig::preset(m, {3, size, size}, 4), 1);
      auto x = images(3, size, 2);
      auto code = encode(p, x, EncodeMode::deterministic);
      CHECK(code.z.sizes() == torch::IntArrayRef{3, m});
      CHECK(code.mu.sizes() == torch::IntArrayRef{3, m});
      auto x_hat = generate(p, code.z, EncodeMode::deterministic);
      CHECK(x_hat.sizes() == x.sizes());
      CHECK(x_hat.min().item<float>() >= 0.0f);
      CHECK(x_hat.max().item<float>() <= 1.0f);
      auto z_again = encode(p, x_hat, EncodeMode::deterministic).z;
      CHECK(z_again.sizes() == code.z.sizes());
      auto d = discriminate(p, x, code.z);
      CHECK(d.sizes() == torch::IntArrayRef{3});
      CHECK(d.min().item<float>() > 0.0f);
      CHECK(d.max().item<float>() < 1.0f);
    }
  }
}

TEST_CASE("generate maps a batch of 8 codes to 8 images") {
  ModelParams p(ArchitectureConfig::tiny(), 3);
  auto gen = make_generator(4);
  auto x = generate(p, sample_prior(8, 8, gen));
  CHECK(x.sizes() == torch::IntArrayRef{8, 3, 16, 16});
}

TEST_CASE("deterministic encode is pure") {
  ModelParams p(ArchitectureConfig::tiny(), 5);
  auto x = images(4, 16, 6);
  auto a = encode(p, x, EncodeMode::deterministic).z;
  auto b = encode(p, x, EncodeMode::deterministic).z;
  CHECK(torch::equal(a, b));
  CHECK(torch::equal(a, encode(p, x, EncodeMode::deterministic).mu));
}

TEST_CASE("train-mode encode needs a noise generator and samples around mu") {
  ModelParams p(ArchitectureConfig::tiny(), 5);
  auto x = images(4, 16, 6);
  CHECK_THROWS_AS(encode(p, x, EncodeMode::train), ContractError);
  auto code = encode(p, x, EncodeMode::train, make_generator(9));
  CHECK_FALSE(torch::equal(code.z, code.mu));
  CHECK(code.logvar.max().item<float>() <= 10.0f);
  CHECK(code.logvar.min().item<float>() >= -10.0f);
}

TEST_CASE("reparameterization collapses to mu as logvar goes to minus infinity") {
  auto gen = make_generator(1);
  auto mu = torch::randn({5, 8}, gen, torch::kFloat64);
  auto eps = torch::randn({5, 8}, gen, torch::kFloat64);
  auto z = reparameterize(mu, torch::full({5, 8}, -80.0, torch::kFloat64), eps);
  CHECK((z - mu).abs().max().item<double>() < 1e-16);
  auto z1 = reparameterize(mu, torch::zeros({5, 8}, torch::kFloat64), eps);
  CHECK(torch::allclose(z1, mu + eps));
}

TEST_CASE("shape contracts") {
  ModelParams p(ArchitectureConfig::tiny(), 5);
  CHECK_THROWS_AS(encode(p, images(2, 32, 1), EncodeMode::deterministic), ContractError);
  CHECK_THROWS_AS(generate(p, torch::zeros({2, 9})), ContractError);
  CHECK_THROWS_AS(discriminate(p, images(2, 16, 1), torch::zeros({3, 8})), ContractError);
}

TEST_CASE("initialization is seeded with N(0, 0.02) conv weights") {
  ModelParams a(ArchitectureConfig::tiny(), 11);
  ModelParams b(ArchitectureConfig::tiny(), 11);
  ModelParams c(ArchitectureConfig::tiny(), 12);
  const auto pa = a.encoder->parameters();
  const auto pb = b.encoder->parameters();
  const auto pc = c.encoder->parameters();
  bool all_equal = true, any_diff = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && torch::equal(pa[i], pb[i]);
    any_diff = any_diff || !torch::equal(pa[i], pc[i]);
  }
  CHECK(all_equal);
  CHECK(any_diff);
  std::vector<torch::Tensor> weights;
  for (const auto& item : a.generator->named_parameters()) {
    if (item.value().dim() == 4) weights.push_back(item.value().flatten());
  }
  const auto w = torch::cat(weights);
  CHECK(w.mean().item<double>() == doctest::Approx(0.0).epsilon(0.002));
  CHECK(w.std().item<double>() == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("snapshot is an independent deep copy") {
  ModelParams a(ArchitectureConfig::tiny(), 1);
  auto s = a.snapshot();
  auto x = images(2, 16, 3);
  CHECK(torch::equal(encode(a, x, EncodeMode::deterministic).z,
                     encode(s, x, EncodeMode::deterministic).z));
  {
    torch::NoGradGuard g;
    for (auto& t : a.encoder->parameters()) t.add_(0.5);
  }
  CHECK_FALSE(torch::equal(encode(a, x, EncodeMode::deterministic).z,
                           encode(s, x, EncodeMode::deterministic).z));
}

TEST_CASE("every loss has finite gradients at initialization") {
  ModelParams p(ArchitectureConfig::tiny(), 2);
  auto x = images(4, 16, 3);
  auto gen = make_generator(4);
  auto z = sample_prior(4, 8, gen);
  auto z_hat = encode(p, x, EncodeMode::train, make_generator(5)).z;
  auto x_hat = generate(p, z);
  auto l_d = discriminator_loss(discriminate(p, x, z_hat), discriminate(p, x_hat, z));
  auto l_eg = encoder_generator_loss(discriminate(p, x, z_hat), discriminate(p, x_hat, z));
  auto l_t = triplet_loss(z_hat.narrow(0, 0, 1), z_hat.narrow(0, 1, 1), z_hat.narrow(0, 2, 1));
  for (auto* loss : {&l_d, &l_eg, &l_t}) {
    for (auto s : {Submodel::encoder, Submodel::generator, Submodel::discriminator}) {
      auto params = p.module(s).parameters();
      auto grads = torch::autograd::grad({*loss}, params, {}, /*retain_graph=*/true,
                                         /*create_graph=*/false, /*allow_unused=*/true);
      for (const auto& g : grads) {
        if (g.defined()) CHECK(torch::isfinite(g).all().item<bool>());
      }
    }
  }
}

TEST_CASE("prior sampling is seeded") {
  auto a = sample_prior(6, 4, 42);
  auto b = sample_prior(6, 4, 42);
  CHECK(torch::equal(a, b));
  CHECK(a.sizes() == torch::IntArrayRef{6, 4});
  // Monte-Carlo moments of N(0, I).
  auto big = sample_prior(20000, 4, 7, torch::kFloat64);
  CHECK(std::abs(big.mean().item<double>()) < 4.0 * 1.0 / std::sqrt(80000.0));
  CHECK(std::abs(big.var().item<double>() - 1.0) < 0.03);
}

TEST_CASE("model tags") {
  CHECK(parse_model_tag("triplet-bigan") == ModelTag::triplet_bigan);
  CHECK(parse_model_tag("bigan") == ModelTag::bigan);
  CHECK(parse_model_tag("triplet") == ModelTag::triplet);
  CHECK(display_name(ModelTag::triplet_bigan) == "Triplet BiGAN");
  CHECK_THROWS_AS(parse_model_tag("gan"), UsageError);
}

}  // TEST_SUITE
