#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flowerase/autograd.hpp"

namespace flowerase::lora {

/// One low-rank factor pair. A is [rank, in], B is [out, rank].
struct LoraPair {
  ag::Tensor a;
  ag::Tensor b;
};

/// A single trained delta set scaled by `weight` when applied.
struct LoraTerm {
  double weight = 1.0;
  std::size_t rank = 4;
  double alpha = 4.0;
  std::map<std::string, LoraPair> pairs;
};

struct TargetShape {
  std::string name;
  std::size_t out = 0;
  std::size_t in = 0;
};

/// Names of every dual-stream block's text-stream query/key projection.
std::vector<std::string> default_targets(std::size_t num_blocks);

/// Low-rank deltas on named projections. A trained adapter holds one term;
/// merged adapters hold one term per source and apply them additively, so
/// the effective delta is exactly Σ weight_i · ΔW_i.
class LoraAdapter {
 public:
  LoraAdapter() = default;

  /// B starts at zero, so a fresh adapter is a no-op; A ~ N(0, 1/in).
  static LoraAdapter create(const std::vector<TargetShape>& targets, std::size_t rank, double alpha,
                            std::uint64_t seed, std::uint64_t config_digest);

  bool targets(const std::string& name) const;
  std::vector<std::string> target_names() const;
  std::uint64_t config_digest() const { return config_digest_; }

  /// Σ_i weight_i · (alpha_i / rank_i) · B_i A_i for `name`; throws TargetingError if absent.
  ag::Tensor delta(const std::string& name) const;

  /// Every trainable factor tensor, in a stable order.
  std::vector<ag::Tensor> parameters() const;
  void set_requires_grad(bool on);

  const std::vector<LoraTerm>& terms() const { return terms_; }
  std::vector<LoraTerm>& terms() { return terms_; }

  LoraAdapter clone() const;
  std::uint64_t hash() const;

 private:
  friend LoraAdapter from_terms(std::vector<LoraTerm> terms, std::uint64_t digest);
  std::vector<LoraTerm> terms_;
  std::uint64_t config_digest_ = 0;
};

LoraAdapter from_terms(std::vector<LoraTerm> terms, std::uint64_t digest);

/// base + Σ adapter deltas for the named projection.
ag::Tensor apply(const ag::Tensor& base_weight, const LoraAdapter& adapter, const std::string& name);

enum class MergeMode { kNormalized, kUnnormalized };

const char* to_string(MergeMode mode);
MergeMode merge_mode_from_string(const std::string& s);

struct MergeSpec {
  std::vector<LoraAdapter> adapters;
  std::vector<double> weights;
  MergeMode mode = MergeMode::kNormalized;

  /// Weights 1/N (normalized) or 1 (unnormalized).
  static MergeSpec make(std::vector<LoraAdapter> adapters, MergeMode mode);
};

LoraAdapter merge(const MergeSpec& spec);

inline constexpr char kAdapterMagic[4] = {'F', 'E', 'L', 'A'};
inline constexpr std::uint32_t kAdapterVersion = 1;

std::vector<std::uint8_t> serialize(const LoraAdapter& adapter);
LoraAdapter deserialize(std::span<const std::uint8_t> bytes);
void save(const LoraAdapter& adapter, const std::string& path);
LoraAdapter load(const std::string& path);

}  // namespace flowerase::lora
