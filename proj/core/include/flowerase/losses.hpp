#pragma once

#include <vector>

#include "flowerase/autograd.hpp"

namespace flowerase::losses {

struct EsdConfig {
  double eta = 1.0;  // negative guidance factor
  void validate() const;
};

struct RscConfig {
  double tau = 0.07;
  std::size_t k = 3;
  void validate() const;
};

/// F_un, F_syn and K irrelevant-concept features, all the same length.
struct ConceptFeatures {
  ag::Tensor f_un;
  ag::Tensor f_syn;
  std::vector<ag::Tensor> f_ir;
};

/// Negatively guided target v_uncond - eta * (v_cond - v_uncond).
ag::Tensor esd_target(const ag::Tensor& v_cond, const ag::Tensor& v_uncond, double eta);

/// Mean squared distance from v_edited to the (detached) guided target.
ag::Tensor esd_loss(const ag::Tensor& v_edited, const ag::Tensor& v_base_cond, const ag::Tensor& v_base_uncond,
                    const EsdConfig& cfg = {});

ag::Tensor preservation_loss(const ag::Tensor& v_pred, const ag::Tensor& v_target);

/// log sum_i exp(sim(F_un, F_ir_i) / tau) - sim(F_un, F_syn) / tau, with sim the
/// dot product of L2-normalized features.
ag::Tensor rsc_loss(const ConceptFeatures& features, const RscConfig& cfg = {});

/// Unit-length copy; throws DegenerateFeatureError on a zero vector.
ag::Tensor l2_normalize(const ag::Tensor& f);

}  // namespace flowerase::losses
