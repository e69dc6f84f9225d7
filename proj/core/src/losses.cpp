#include "flowerase/losses.hpp"

#include <algorithm>
#include <cmath>

#include "flowerase/error.hpp"

namespace flowerase::losses {
namespace {

void same_shape(const ag::Tensor& a, const ag::Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + ag::shape_str(a.shape()) + " vs " +
                         ag::shape_str(b.shape()));
  }
}

}  // namespace

void EsdConfig::validate() const {
  if (!std::isfinite(eta) || eta < 0.0) throw ConfigError("eta must be finite and >= 0");
}

void RscConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be > 0");
  if (k == 0) throw ConfigError("K must be >= 1");
}

ag::Tensor esd_target(const ag::Tensor& v_cond, const ag::Tensor& v_uncond, double eta) {
  same_shape(v_cond, v_uncond, "esd_target");
  return ag::sub(v_uncond, ag::scale(ag::sub(v_cond, v_uncond), eta));
}

ag::Tensor esd_loss(const ag::Tensor& v_edited, const ag::Tensor& v_base_cond, const ag::Tensor& v_base_uncond,
                    const EsdConfig& cfg) {
  cfg.validate();
  same_shape(v_edited, v_base_cond, "esd_loss");
  same_shape(v_edited, v_base_uncond, "esd_loss");
  const ag::Tensor target = esd_target(v_base_cond.detach(), v_base_uncond.detach(), cfg.eta);
  return ag::mean(ag::square(ag::sub(v_edited, target)));
}

ag::Tensor preservation_loss(const ag::Tensor& v_pred, const ag::Tensor& v_target) {
  same_shape(v_pred, v_target, "preservation_loss");
  return ag::mean(ag::square(ag::sub(v_pred, v_target)));
}

ag::Tensor l2_normalize(const ag::Tensor& f) {
  const double n2 = ag::l2_norm_squared(f.detach()).item();
  if (!(n2 > 1e-300) || !std::isfinite(n2)) throw DegenerateFeatureError("feature has zero or non-finite norm");
  const ag::Tensor norm = ag::sqrt(ag::l2_norm_squared(f));
  return ag::div(f, norm);
}

ag::Tensor rsc_loss(const ConceptFeatures& features, const RscConfig& cfg) {
  cfg.validate();
  if (features.f_ir.size() != cfg.k) {
    throw ContractError("expected " + std::to_string(cfg.k) + " irrelevant features, got " +
                        std::to_string(features.f_ir.size()));
  }
  same_shape(features.f_un, features.f_syn, "rsc_loss");
  for (const auto& f : features.f_ir) same_shape(features.f_un, f, "rsc_loss");

  const ag::Tensor un = l2_normalize(features.f_un);
  const double inv_tau = 1.0 / cfg.tau;
  std::vector<ag::Tensor> sims;
  for (const auto& f : features.f_ir) sims.push_back(ag::scale(ag::dot(un, l2_normalize(f)), inv_tau));
  double mx = -INFINITY;
  for (const auto& s : sims) mx = std::max(mx, s.item());
  ag::Tensor acc;
  for (const auto& s : sims) {
    const ag::Tensor e = ag::exp(ag::add_scalar(s, -mx));
    acc = acc.defined() ? ag::add(acc, e) : e;
  }
  const ag::Tensor lse = ag::add_scalar(ag::log(acc), mx);
  const ag::Tensor pos = ag::scale(ag::dot(un, l2_normalize(features.f_syn)), inv_tau);
  return ag::sub(lse, pos);
}

}  // namespace flowerase::losses
