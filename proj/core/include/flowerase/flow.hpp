#pragma once

// Rectified-flow conventions: t = 1 is pure noise, t = 0 is data.
//   u_t = (1 - t) u_pix + t x_T,   v = x_T - u_pix,
// and sampling integrates dx/dt = v from t = 1 down to t = 0.

#include <cstdint>
#include <functional>
#include <span>

#include "flowerase/autograd.hpp"
#include "flowerase/toymodel.hpp"

namespace flowerase::flow {

struct FlowSample {
  ag::Tensor u_pix;
  ag::Tensor x_T;
  double t = 0.0;
  ag::Tensor u_t;
  ag::Tensor v_target;
};

ag::Tensor noise_interp(const ag::Tensor& u_pix, const ag::Tensor& x_T, double t);
ag::Tensor velocity_target(const ag::Tensor& u_pix, const ag::Tensor& x_T);
FlowSample make_sample(const ag::Tensor& u_pix, const ag::Tensor& x_T, double t);

/// Standard normal tensor drawn from a fresh generator seeded with `seed`.
ag::Tensor gaussian_noise(const ag::Shape& shape, std::uint64_t seed);

struct SamplerConfig {
  std::size_t num_steps = 28;
  std::uint64_t seed = 0;
};

using VelocityField = std::function<ag::Tensor(const ag::Tensor& x, double t)>;

/// Euler steps x_{t-Δ} = x_t - Δ·v(x_t, t) on a uniform grid from t_from down
/// to t_to, with `steps` equal increments.
ag::Tensor euler_integrate(const VelocityField& field, ag::Tensor x, double t_from, double t_to,
                           std::size_t steps);

/// Starts at x_T ~ N(0, I) (seeded by cfg.seed) and integrates to t = 0.
ag::Tensor euler_sample(const VelocityField& field, const ag::Shape& shape, const SamplerConfig& cfg);

/// Model-backed sampler; runs without gradient recording.
ag::Tensor euler_sample(const model::ModelConfig& config, const model::ModelParams& params,
                        std::span<const lora::LoraAdapter> adapters, std::span<const model::TokenId> tokens,
                        const SamplerConfig& cfg, const model::ForwardOptions& options = {});

/// Velocity field view of the model for fixed conditioning.
VelocityField model_field(const model::ModelConfig& config, const model::ModelParams& params,
                          std::span<const lora::LoraAdapter> adapters, std::span<const model::TokenId> tokens,
                          model::ForwardOptions options = {});

}  // namespace flowerase::flow
