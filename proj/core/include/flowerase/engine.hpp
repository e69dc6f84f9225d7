#pragma once

// Bi-level concept erasure. Each iteration takes one lower-level step
// (negative-guidance distillation plus attention suppression on the target
// keyword) and one upper-level step (preservation of irrelevant concepts plus
// the reverse self-contrastive term), both on the same LoRA adapter.

#include <cstdint>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "flowerase/attention_tools.hpp"
#include "flowerase/checkpoint.hpp"
#include "flowerase/concepts.hpp"
#include "flowerase/flow.hpp"
#include "flowerase/lora.hpp"
#include "flowerase/losses.hpp"
#include "flowerase/optim.hpp"
#include "flowerase/rng.hpp"

namespace flowerase::engine {

struct LossWeights {
  double esd = 1.0;
  double attn = 1.0;
  double lora = 1.0;
  double rsc = 0.1;
};

struct BiLevelConfig {
  double alpha_low = 1e-3;
  double alpha_up = 5e-4;
  std::size_t iterations = 200;
  losses::EsdConfig esd;
  losses::RscConfig rsc;
  flow::SamplerConfig sampler;
  std::size_t preservation_count = 8;
  LossWeights weights;
  std::size_t lora_rank = 4;
  double lora_alpha = 4.0;
  double weight_decay = 0.0;
  double t_min = 0.1;  // lower-level timesteps are drawn from [t_min, 1]
  double feature_min_t = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const BiLevelConfig& c);
/// Rejects unknown keys; absent keys keep their defaults.
void from_json(const nlohmann::json& j, BiLevelConfig& c);

struct PreservationPair {
  std::string prompt;
  std::vector<model::TokenId> tokens;
  ag::Tensor u_pix;
};

/// `count` images from the frozen model with seeds seed .. seed+count-1. Image
/// i uses prompts[i % prompts.size()].
std::vector<PreservationPair> make_preservation_set(const BaseModel& base, const std::vector<std::string>& prompts,
                                                    std::size_t count, std::uint64_t seed,
                                                    std::size_t num_steps = 28);

/// Preservation prompts for a concept: its sentence with the target replaced by
/// each bucket word.
std::vector<std::string> preservation_prompts(const concepts::ConceptSpec& spec);

struct LogEntry {
  std::size_t iteration = 0;
  std::string level;  // "lower" | "upper"
  std::map<std::string, double> losses;
  double lr = 0.0;
  std::uint64_t rng_cursor = 0;  // seed of the iteration's generator
  std::string prompt;
};
void to_json(nlohmann::json& j, const LogEntry& e);
std::string log_to_jsonl(const std::vector<LogEntry>& log);

/// A resumable erase run. The base model is shared read-only.
class EraseSession {
 public:
  EraseSession(const BaseModel& base, concepts::ConceptSpec spec, BiLevelConfig cfg);

  /// Runs until `cfg.iterations` are done (or `max_iterations` more, if set).
  void run(std::optional<std::size_t> max_iterations = std::nullopt);
  void step();
  bool done() const { return iteration_ >= cfg_.iterations; }

  std::size_t iteration() const { return iteration_; }
  const lora::LoraAdapter& adapter() const { return adapter_; }
  const std::vector<LogEntry>& log() const { return log_; }
  const BiLevelConfig& config() const { return cfg_; }
  const concepts::ConceptSpec& spec() const { return spec_; }
  const std::vector<PreservationPair>& preservation_set() const { return preservation_; }

  std::function<void(const LogEntry&)> on_log;

  std::vector<std::uint8_t> checkpoint_bytes() const;
  void save_checkpoint(const std::string& path) const;
  /// Restores adapter, optimizer moments, iteration counter, generator state
  /// and log. Throws DigestMismatchError for a different base model config.
  void restore(std::span<const std::uint8_t> bytes);
  void load_checkpoint(const std::string& path);

 private:
  std::vector<model::TokenId> tokens(const std::string& prompt) const;
  void lower_step(std::size_t it, std::uint64_t seed, const std::string& sentence,
                  const std::vector<attn::TokenSpan>& spans);
  void upper_step(std::size_t it, std::uint64_t seed, const std::string& sentence,
                  const std::vector<attn::TokenSpan>& spans);
  void push_log(LogEntry e);

  const BaseModel& base_;
  concepts::ConceptSpec spec_;
  BiLevelConfig cfg_;
  lora::LoraAdapter adapter_;
  AdamW opt_low_, opt_up_;
  Rng rng_;
  std::size_t iteration_ = 0;
  std::vector<LogEntry> log_;
  std::vector<PreservationPair> preservation_;
  ag::Tensor shared_x_T_;
};

inline constexpr char kCheckpointMagic[4] = {'F', 'E', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct EraseResult {
  lora::LoraAdapter adapter;
  std::vector<LogEntry> log;
};

EraseResult erase(const BaseModel& base, const concepts::ConceptSpec& spec, const BiLevelConfig& cfg);

}  // namespace flowerase::engine
