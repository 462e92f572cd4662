// SPDX-License-Identifier: Apache-2.0

#include "tbigan/losses.hpp"

#include <cmath>

#include <torch/torch.h>

#include "tbigan/error.hpp"

namespace tbigan {

namespace {

void check_codes(const torch::Tensor& a, const torch::Tensor& b,
                 const char* what) {
  if (a.dim() != 2 || b.dim() != 2 || a.sizes() != b.sizes()) {
    throw ContractError(std::string("triplet ") + what + " codes " +
                        c10::str(b.sizes()) + " not aligned with anchor " +
                        c10::str(a.sizes()));
  }
}

void check_probabilities(const torch::Tensor& p, const char* what) {
  if (p.numel() == 0) throw ContractError(std::string(what) + " is empty");
  if (torch::isnan(p).any().item<bool>()) {
    throw NumericalError(std::string("non-finite ") + what);
  }
  if (torch::logical_or(p < 0, p > 1).any().item<bool>()) {
    throw ContractError(std::string(what) + " holds values outside [0, 1]");
  }
}

torch::Tensor clamp_prob(const torch::Tensor& p) {
  return p.clamp(kProbabilityClamp, 1.0 - kProbabilityClamp);
}

}  // namespace

std::pair<torch::Tensor, torch::Tensor> triplet_distances(
    const torch::Tensor& anchor, const torch::Tensor& positive,
    const torch::Tensor& negative) {
  check_codes(anchor, positive, "positive");
  check_codes(anchor, negative, "negative");
  auto d_plus = torch::linalg_vector_norm(anchor - positive, 2, {1});
  auto d_minus = torch::linalg_vector_norm(anchor - negative, 2, {1});
  return {d_plus, d_minus};
}

double triplet_probability(double d_plus, double d_minus) {
  if (!(d_plus >= 0.0) || !(d_minus >= 0.0)) {
    throw ContractError("triplet distances must be non-negative");
  }
  const double top = std::max(d_plus, d_minus);
  const double ep = std::exp(d_plus - top);
  const double em = std::exp(d_minus - top);
  return em / (ep + em);
}

torch::Tensor triplet_probability(const torch::Tensor& d_plus,
                                  const torch::Tensor& d_minus) {
  return torch::sigmoid(d_minus - d_plus);
}

torch::Tensor triplet_loss_from_distances(const torch::Tensor& d_plus,
                                          const torch::Tensor& d_minus) {
  // -log p_T = log(1 + exp(d+ - d-)), evaluated without overflow.
  auto x = d_plus - d_minus;
  return (x.clamp_min(0.0) + torch::log1p(torch::exp(-x.abs()))).mean();
}

torch::Tensor triplet_loss(const torch::Tensor& anchor,
                           const torch::Tensor& positive,
                           const torch::Tensor& negative) {
  auto [d_plus, d_minus] = triplet_distances(anchor, positive, negative);
  return triplet_loss_from_distances(d_plus, d_minus);
}

torch::Tensor discriminator_loss(const torch::Tensor& d_real,
                                 const torch::Tensor& d_fake) {
  check_probabilities(d_real, "d_real");
  check_probabilities(d_fake, "d_fake");
  return -torch::log(clamp_prob(d_real)).mean() -
         torch::log1p(-clamp_prob(d_fake)).mean();
}

torch::Tensor encoder_generator_loss(const torch::Tensor& d_real,
                                     const torch::Tensor& d_fake) {
  check_probabilities(d_real, "d_real");
  check_probabilities(d_fake, "d_fake");
  return -torch::log(clamp_prob(d_fake)).mean() -
         torch::log1p(-clamp_prob(d_real)).mean();
}

torch::Tensor combined_loss(const torch::Tensor& l_eg, const torch::Tensor& l_t,
                            double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be >= 0");
  return l_eg + lambda * l_t;
}

double combined_loss(double l_eg, double l_t, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be >= 0");
  return l_eg + lambda * l_t;
}

void LossReport::check_finite() const {
  auto check = [](const char* name, double v) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite ") + name + " (" +
                           std::to_string(v) + ")");
    }
  };
  check("l_d", l_d);
  check("l_eg", l_eg);
  if (l_t) check("l_t", *l_t);
  if (l_teg) check("l_teg", *l_teg);
  if (d_plus_mean) check("d_plus_mean", *d_plus_mean);
  if (d_minus_mean) check("d_minus_mean", *d_minus_mean);
  check("d_real_mean", d_real_mean);
  check("d_fake_mean", d_fake_mean);
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> get_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json{{"l_d", r.l_d},
                     {"l_eg", r.l_eg},
                     {"l_t", opt(r.l_t)},
                     {"l_teg", opt(r.l_teg)},
                     {"d_plus_mean", opt(r.d_plus_mean)},
                     {"d_minus_mean", opt(r.d_minus_mean)},
                     {"d_real_mean", r.d_real_mean},
                     {"d_fake_mean", r.d_fake_mean}};
}

void from_json(const nlohmann::json& j, LossReport& r) {
  j.at("l_d").get_to(r.l_d);
  j.at("l_eg").get_to(r.l_eg);
  r.l_t = get_opt(j, "l_t");
  r.l_teg = get_opt(j, "l_teg");
  r.d_plus_mean = get_opt(j, "d_plus_mean");
  r.d_minus_mean = get_opt(j, "d_minus_mean");
  j.at("d_real_mean").get_to(r.d_real_mean);
  j.at("d_fake_mean").get_to(r.d_fake_mean);
}

}  // namespace tbigan
