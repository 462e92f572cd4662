// SPDX-License-Identifier: Apache-2.0
//
// Scalar objectives. All adversarial losses are in descent form: each owner
// minimizes its loss, which together realizes min_{G,E} max_D of the BiGAN
// value function.
//
//   L_D   = -mean log D(x, E(x)) - mean log(1 - D(G(z), z))
//   L_EG  = -mean log D(G(z), z) - mean log(1 - D(x, E(x)))
//   p_T   = exp(d-) / (exp(d+) + exp(d-))
//   L_T   = mean -log p_T
//   L_TEG = L_EG + lambda * L_T

#pragma once

#include <optional>
#include <utility>

#include <json.hpp>
#include <torch/types.h>

namespace tbigan {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbabilityClamp = 1e-7;

/// Per-example L2 distances (anchor-positive, anchor-negative), each [B].
std::pair<torch::Tensor, torch::Tensor> triplet_distances(
    const torch::Tensor& anchor, const torch::Tensor& positive,
    const torch::Tensor& negative);

/// Numerically stable p_T for scalar distances.
double triplet_probability(double d_plus, double d_minus);
/// Elementwise p_T.
torch::Tensor triplet_probability(const torch::Tensor& d_plus,
                                  const torch::Tensor& d_minus);

/// mean over the batch of -log p_T = softplus(d+ - d-).
torch::Tensor triplet_loss(const torch::Tensor& anchor,
                           const torch::Tensor& positive,
                           const torch::Tensor& negative);
/// The same loss from precomputed distances.
torch::Tensor triplet_loss_from_distances(const torch::Tensor& d_plus,
                                          const torch::Tensor& d_minus);

torch::Tensor discriminator_loss(const torch::Tensor& d_real,
                                 const torch::Tensor& d_fake);
torch::Tensor encoder_generator_loss(const torch::Tensor& d_real,
                                     const torch::Tensor& d_fake);

torch::Tensor combined_loss(const torch::Tensor& l_eg, const torch::Tensor& l_t,
                            double lambda);
double combined_loss(double l_eg, double l_t, double lambda);

struct LossReport {
  double l_d = 0.0;
  double l_eg = 0.0;
  std::optional<double> l_t;
  std::optional<double> l_teg;
  // Mean triplet distances; present with l_t.
  std::optional<double> d_plus_mean;
  std::optional<double> d_minus_mean;
  // Mean discriminator outputs on (x, E(x)) and (G(z), z).
  double d_real_mean = 0.0;
  double d_fake_mean = 0.0;

  /// Throws NumericalError naming the first non-finite field.
  void check_finite() const;
  bool operator==(const LossReport&) const = default;
};

void to_json(nlohmann::json& j, const LossReport& r);
void from_json(const nlohmann::json& j, LossReport& r);

}  // namespace tbigan
