#pragma once

// Attribute classifier over rendered images, erasure metrics and the prompt
// attack harness.

#include <array>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowerase/checkpoint.hpp"
#include "flowerase/concepts.hpp"
#include "flowerase/data_synth.hpp"
#include "flowerase/lora.hpp"

namespace flowerase::eval {

struct ClassifierConfig {
  std::size_t patch = 4;
  std::size_t channels = 64;  // per-patch features
  std::size_t hidden = 256;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr = 2e-3;
  double noise_max = 0.3;  // augmentation: additive N(0, s^2), s ~ U[0, noise_max]
  std::size_t shift_max = 2;  // augmentation: whole-image translation in pixels
  double speckle_max = 0.15;  // augmentation: fraction of pixels swapped for a random pixel's colour
  double gate = 0.95;
  std::uint64_t seed = 0;
};

/// Per-patch linear features, a hidden layer, and one linear head per attribute.
class ConceptClassifier {
 public:
  static ConceptClassifier init(const ClassifierConfig& cfg, std::size_t image_side);

  /// Predicted class per attribute, indexed by data::Attribute.
  std::array<std::size_t, 4> predict(const ag::Tensor& image) const;
  /// Summed cross-entropy over the four heads (differentiable).
  ag::Tensor loss(const ag::Tensor& image, const data::Labels& labels) const;

  std::vector<ag::Tensor> parameters() const;
  const ClassifierConfig& config() const { return cfg_; }
  std::size_t image_side() const { return side_; }
  /// Held-out accuracy per attribute name, filled by train_classifier.
  std::map<std::string, double> heldout;
  bool gated() const;

  std::vector<std::uint8_t> serialize() const;
  static ConceptClassifier deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::string& path) const;
  static ConceptClassifier load(const std::string& path);

 private:
  friend ConceptClassifier train_classifier(const data::CorpusManifest&, const ClassifierConfig&, bool);
  std::array<ag::Tensor, 4> logits(const ag::Tensor& image) const;
  ClassifierConfig cfg_;
  std::size_t side_ = 32;
  std::vector<std::size_t> patchify_;
  std::map<std::string, ag::Tensor> params_;
};

inline constexpr char kClassifierMagic[4] = {'F', 'E', 'C', 'L'};

/// Trains on the manifest's train split and scores the eval split. Throws
/// GateError if any head is below cfg.gate, unless `enforce_gate` is false.
ConceptClassifier train_classifier(const data::CorpusManifest& manifest, const ClassifierConfig& cfg,
                                   bool enforce_gate = true);

/// Attribute and class a concept word names in the toy world.
data::WordLabel concept_label(std::string_view c_un);

/// How generation is conditioned: adapters added to the base weights, and/or
/// attention columns of a keyword zeroed at sampling time.
struct Conditioning {
  std::span<const lora::LoraAdapter> adapters;
  std::string zero_keyword;
};

ag::Tensor sample_image(const engine::BaseModel& base, const Conditioning& cond, const std::string& prompt,
                        std::uint64_t seed, std::size_t num_steps = 28);

struct MeasureConfig {
  std::size_t prompts_per_label = 4;
  std::size_t samples_per_prompt = 16;
  std::size_t num_steps = 28;
  std::uint64_t seed = 0;
};

/// Captions of random scenes whose attribute `a` is fixed to class `index`,
/// canonical words only.
std::vector<std::string> label_prompts(data::Attribute a, std::size_t index, std::size_t n, std::uint64_t seed);

struct SampleRecord {
  std::string group;  // "e" | "g" | "ir"
  bool adapted = false;
  std::string prompt;
  std::uint64_t seed = 0;
  std::size_t expected = 0;
  std::size_t predicted = 0;
};

struct Accuracies {
  double acc_e = 0.0;
  double acc_ir = 0.0;
  double acc_g = 0.0;
};

struct EvalReport {
  std::string concept_word;
  std::string synonym;
  std::string attribute;
  Accuracies before;  // base model
  Accuracies after;   // with the adapters
  std::vector<SampleRecord> records;
  std::uint64_t config_digest = 0;
  std::uint64_t adapter_hash = 0;
  MeasureConfig measure;

  nlohmann::json to_json() const;
  std::uint64_t hash() const;
};

/// Acc_e: prompts naming c_un; Acc_g: the same prompts with c_syn; Acc_ir:
/// prompts naming the other classes of the same attribute. Every prompt and
/// seed is sampled with and without the adapters.
EvalReport measure(const engine::BaseModel& base, std::span<const lora::LoraAdapter> adapters,
                   const concepts::ConceptSpec& spec, const ConceptClassifier& classifier, const MeasureConfig& cfg);

enum class AttackKind { kMisspell, kPrefixSuffix, kRepeat };

struct AttackSpec {
  AttackKind kind = AttackKind::kMisspell;
  std::string append = "rs";   // misspell: characters appended to the keyword
  std::string prefix = "x";    // prefix_suffix
  std::string suffix = "y";    // prefix_suffix
  std::size_t count = 2;       // repeat: total occurrences

  std::string name() const;
  /// "misspell[:chars]", "prefix_suffix[:pre:suf]" or "repeat[:count]".
  static AttackSpec parse(const std::string& text);
};

/// Rewrites every occurrence of `keyword` in `prompt`. Throws AttackSpecError
/// on an empty prompt, a missing keyword, or a result longer than text_len.
std::string apply_attack(const std::string& prompt, const std::string& keyword, const AttackSpec& spec,
                         std::size_t text_len);

enum class Defense { kNone, kAdapter, kZeroColumns };
const char* to_string(Defense d);

struct AttackResult {
  std::string attack;
  std::map<std::string, double> asr;  // by defense name
  std::vector<std::string> prompts;
};

/// ASR = fraction of attacked-prompt samples still classified as c_un's class,
/// under each defense, with identical prompts and seeds.
std::vector<AttackResult> attack(const engine::BaseModel& base, std::span<const lora::LoraAdapter> adapters,
                                 const concepts::ConceptSpec& spec, const std::vector<AttackSpec>& attacks,
                                 const ConceptClassifier& classifier, const MeasureConfig& cfg,
                                 const std::vector<Defense>& defenses = {Defense::kNone, Defense::kAdapter,
                                                                         Defense::kZeroColumns});

/// Plain-text table with Acc_e, Acc_ir and Acc_g columns.
std::string format_table(const std::vector<EvalReport>& reports);

}  // namespace flowerase::eval
