#include "flowerase/flow.hpp"

#include "flowerase/error.hpp"
#include "flowerase/rng.hpp"

namespace flowerase::flow {

ag::Tensor noise_interp(const ag::Tensor& u_pix, const ag::Tensor& x_T, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("interpolation time " + std::to_string(t) + " outside [0, 1]");
  if (u_pix.shape() != x_T.shape()) {
    throw DimensionError("noise_interp: " + ag::shape_str(u_pix.shape()) + " vs " + ag::shape_str(x_T.shape()));
  }
  return ag::add(ag::scale(u_pix, 1.0 - t), ag::scale(x_T, t));
}

ag::Tensor velocity_target(const ag::Tensor& u_pix, const ag::Tensor& x_T) {
  if (u_pix.shape() != x_T.shape()) {
    throw DimensionError("velocity_target: " + ag::shape_str(u_pix.shape()) + " vs " + ag::shape_str(x_T.shape()));
  }
  return ag::sub(x_T, u_pix);
}

FlowSample make_sample(const ag::Tensor& u_pix, const ag::Tensor& x_T, double t) {
  return FlowSample{u_pix, x_T, t, noise_interp(u_pix, x_T, t), velocity_target(u_pix, x_T)};
}

ag::Tensor gaussian_noise(const ag::Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(ag::numel_of(shape));
  for (auto& x : v) x = rng.normal();
  return ag::Tensor(shape, std::move(v));
}

ag::Tensor euler_integrate(const VelocityField& field, ag::Tensor x, double t_from, double t_to,
                           std::size_t steps) {
  if (steps == 0) throw ConfigError("sampler needs at least one step");
  const double dt = (t_from - t_to) / static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = t_from - static_cast<double>(i) * dt;
    x = ag::sub(x, ag::scale(field(x, t), dt));
  }
  return x;
}

ag::Tensor euler_sample(const VelocityField& field, const ag::Shape& shape, const SamplerConfig& cfg) {
  return euler_integrate(field, gaussian_noise(shape, cfg.seed), 1.0, 0.0, cfg.num_steps);
}

VelocityField model_field(const model::ModelConfig& config, const model::ModelParams& params,
                          std::span<const lora::LoraAdapter> adapters, std::span<const model::TokenId> tokens,
                          model::ForwardOptions options) {
  return [&config, &params, adapters, tokens, options = std::move(options)](const ag::Tensor& x, double t) {
    return model::forward(config, params, adapters, x, tokens, t, options).velocity;
  };
}

ag::Tensor euler_sample(const model::ModelConfig& config, const model::ModelParams& params,
                        std::span<const lora::LoraAdapter> adapters, std::span<const model::TokenId> tokens,
                        const SamplerConfig& cfg, const model::ForwardOptions& options) {
  ag::NoGradGuard no_grad;
  return euler_sample(model_field(config, params, adapters, tokens, options), config.latent_shape(), cfg);
}

}  // namespace flowerase::flow
