#pragma once

// Keyword localization in the text stream, index-based attention erasure,
// and attention-derived features used by the erasure losses.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flowerase/autograd.hpp"
#include "flowerase/toymodel.hpp"

namespace flowerase::attn {

/// Text positions [start, end) holding one occurrence of a keyword.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::uint64_t prompt_hash = 0;

  std::size_t length() const { return end - start; }
  friend bool operator==(const TokenSpan& a, const TokenSpan& b) { return a.start == b.start && a.end == b.end; }
};

/// Every occurrence of `keyword` among the first `text_len` prompt tokens,
/// matched word by word. Throws ContractError if the keyword has no words.
std::vector<TokenSpan> locate_spans(std::string_view prompt, std::string_view keyword, std::size_t text_len);

/// Sorted, de-duplicated column indices covered by `spans`.
std::vector<std::size_t> span_columns(std::span<const TokenSpan> spans);

/// Copy of `record` with the span columns set to exactly 0 in every head and
/// query row. Rows are not renormalized.
model::AttentionRecord zero_columns(const model::AttentionRecord& record, std::span<const TokenSpan> spans,
                                    std::size_t text_len);

struct AttnLoss {
  ag::Tensor value;
  bool no_spans = false;  // set when spans were empty and the loss is a constant 0
};

/// Attention mass on the span columns summed over all records, heads and rows,
/// divided by records * heads * total_tokens.
AttnLoss attn_loss(std::span<const model::AttentionRecord> records, std::span<const TokenSpan> spans);

inline constexpr double kDefaultFeatureMinT = 0.7;

/// Span columns averaged over heads, span tokens, occurrences and the records
/// captured at t >= min_t. Result has one entry per query row, [total_tokens].
ag::Tensor concept_feature(std::span<const model::AttentionRecord> records, std::span<const TokenSpan> spans,
                           double min_t = kDefaultFeatureMinT);

/// One binary PGM per head ("<prefix>_h<k>.pgm"), each scaled by its own max.
std::vector<std::string> write_attention_pgm(const model::AttentionRecord& record, const std::string& prefix);

/// Head-averaged attention that image patches pay to text position `column`,
/// laid out on the patch grid and written as a PGM.
void write_token_map_pgm(const model::AttentionRecord& record, std::size_t column, std::size_t text_len,
                         std::size_t grid_side, const std::string& path);

}  // namespace flowerase::attn
