#pragma once

// Toy dual-stream flow transformer. Text tokens and pixel patches keep
// separate projections but attend jointly over the concatenated sequence,
// text first: positions [0, text_len) are text, the rest are patches.

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flowerase/autograd.hpp"
#include "flowerase/lora.hpp"

namespace flowerase::model {

using TokenId = std::uint32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kNull = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr std::string_view kPadWord = "<pad>";
inline constexpr std::string_view kNullWord = "<null>";
inline constexpr std::string_view kUnkWord = "<unk>";

class Vocabulary {
 public:
  Vocabulary();
  /// `words` excludes the reserved tokens, which always take ids 0..2.
  static Vocabulary from_words(const std::vector<std::string>& words);

  TokenId lookup(std::string_view word) const;  // kUnk when absent
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  /// One token per line; line number (0-based) is the id.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  std::uint64_t hash() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercased whitespace split.
std::vector<std::string> split_words(std::string_view prompt);
std::string join_words(const std::vector<std::string>& words);

struct TokenizedPrompt {
  std::vector<TokenId> ids;  // exactly text_len entries
  std::size_t length = 0;    // non-pad tokens
  bool truncated = false;
};

/// The empty prompt becomes [NULL, PAD, ...].
TokenizedPrompt tokenize(std::string_view prompt, const Vocabulary& vocab, std::size_t text_len);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t text_len = 12;
  std::size_t image_side = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t embed_dim = 96;
  std::size_t num_heads = 4;
  std::size_t num_dual_blocks = 3;
  std::size_t mlp_ratio = 2;
  std::size_t time_freqs = 16;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t patches_per_side() const { return image_side / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t total_tokens() const { return text_len + num_patches(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  ag::Shape latent_shape() const { return {image_side, image_side, channels}; }
  /// Stable digest of every architectural field (the seed excluded).
  std::uint64_t digest() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Named weights θ_o. Projection weights are stored [out, in].
class ModelParams {
 public:
  const ag::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  void set(const std::string& name, ag::Tensor t) { tensors_[name] = std::move(t); }
  const std::map<std::string, ag::Tensor>& tensors() const { return tensors_; }
  std::vector<ag::Tensor> parameters() const;
  void set_requires_grad(bool on);
  ModelParams clone() const;
  std::uint64_t hash() const;
  std::size_t count() const;

  std::vector<lora::TargetShape> target_shapes(const std::vector<std::string>& names) const;

 private:
  std::map<std::string, ag::Tensor> tensors_;
};

ModelParams init_params(const ModelConfig& config);

struct AttentionRecord {
  std::size_t block_index = 0;
  double t = 0.0;
  ag::Tensor weights;  // [heads, total_tokens, total_tokens], post-softmax
};

struct ForwardOptions {
  bool capture_attention = false;
  /// Columns zeroed in every block's attention before it weights the values
  /// (the deterministic index-based erasure baseline).
  std::vector<std::size_t> zero_columns;
};

struct ForwardResult {
  ag::Tensor velocity;  // latent shape
  std::vector<AttentionRecord> records;
};

/// Velocity prediction v(x_t, tokens, t). Adapters add their deltas to the
/// projections they target.
ForwardResult forward(const ModelConfig& config, const ModelParams& params,
                      std::span<const lora::LoraAdapter> adapters, const ag::Tensor& x_t,
                      std::span<const TokenId> tokens, double t, const ForwardOptions& options = {});

/// Sinusoidal timestep features, [1, 2 * freqs].
ag::Tensor timestep_features(double t, std::size_t freqs);

}  // namespace flowerase::model
