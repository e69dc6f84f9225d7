#include "flowerase/optim.hpp"

#include <cmath>

#include "flowerase/error.hpp"

namespace flowerase::engine {

AdamW::AdamW(std::vector<ag::Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double AdamW::step() {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
  const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto data = p.mutable_data();
    const bool has = p.has_grad();
    const auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = has ? grad[k] * clip : 0.0;
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      data[k] -= config_.lr * (mh / (std::sqrt(vh) + config_.eps) + config_.weight_decay * data[k]);
    }
  }
  return norm;
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamW::save_state(io::Writer& w) const {
  w.u64(t_);
  w.u32(static_cast<std::uint32_t>(m_.size()));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    w.u64(m_[i].size());
    w.f64s(m_[i]);
    w.f64s(v_[i]);
  }
}

void AdamW::load_state(io::Reader& r) {
  t_ = r.u64();
  const auto n = r.u32();
  if (n != m_.size()) throw FormatError("optimizer state covers " + std::to_string(n) + " tensors, expected " +
                                        std::to_string(m_.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = r.u64();
    if (len != m_[i].size()) throw FormatError("optimizer moment length mismatch");
    m_[i] = r.f64s(len);
    v_[i] = r.f64s(len);
  }
}

}  // namespace flowerase::engine
