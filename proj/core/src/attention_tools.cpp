#include "flowerase/attention_tools.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "flowerase/binary_io.hpp"
#include "flowerase/error.hpp"

namespace flowerase::attn {
namespace {

void write_pgm(const std::string& path, std::size_t w, std::size_t h, const std::vector<double>& v) {
  const double mx = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (double x : v) {
    const double c = mx > 0.0 ? std::clamp(x / mx, 0.0, 1.0) * 255.0 : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c))));
  }
}

void check_record(const model::AttentionRecord& r) {
  if (!r.weights.defined() || r.weights.rank() != 3 || r.weights.dim(1) != r.weights.dim(2)) {
    throw DimensionError("attention record must be [heads, T, T]");
  }
}

}  // namespace

std::vector<TokenSpan> locate_spans(std::string_view prompt, std::string_view keyword, std::size_t text_len) {
  const auto key = model::split_words(keyword);
  if (key.empty()) throw ContractError("keyword '" + std::string(keyword) + "' has no tokens");
  auto words = model::split_words(prompt);
  if (words.size() > text_len) words.resize(text_len);
  const std::uint64_t h = io::fnv1a(prompt);
  std::vector<TokenSpan> out;
  if (words.size() < key.size()) return out;
  for (std::size_t i = 0; i + key.size() <= words.size(); ++i) {
    if (std::equal(key.begin(), key.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
      out.push_back(TokenSpan{i, i + key.size(), h});
    }
  }
  return out;
}

std::vector<std::size_t> span_columns(std::span<const TokenSpan> spans) {
  std::vector<std::size_t> cols;
  for (const auto& s : spans)
    for (std::size_t c = s.start; c < s.end; ++c) cols.push_back(c);
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  return cols;
}

model::AttentionRecord zero_columns(const model::AttentionRecord& record, std::span<const TokenSpan> spans,
                                    std::size_t text_len) {
  check_record(record);
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > text_len) {
      throw IndexError("span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                       ") outside text positions [0, " + std::to_string(text_len) + ")");
    }
  }
  model::AttentionRecord out = record;
  out.weights = record.weights.detach().clone();
  const std::size_t T = out.weights.dim(2);
  const std::size_t rows = out.weights.dim(0) * out.weights.dim(1);
  auto w = out.weights.mutable_data();
  for (std::size_t c : span_columns(spans))
    for (std::size_t r = 0; r < rows; ++r) w[r * T + c] = 0.0;
  return out;
}

AttnLoss attn_loss(std::span<const model::AttentionRecord> records, std::span<const TokenSpan> spans) {
  if (records.empty()) throw ContractError("attn_loss needs at least one attention record");
  if (spans.empty()) return AttnLoss{ag::Tensor::scalar(0.0), true};
  const auto cols = span_columns(spans);
  ag::Tensor total;
  std::size_t denom_heads = 0, T = 0;
  for (const auto& r : records) {
    check_record(r);
    const std::size_t H = r.weights.dim(0);
    T = r.weights.dim(2);
    if (cols.back() >= T) throw IndexError("span column outside attention width");
    std::vector<std::size_t> idx;
    idx.reserve(H * T * cols.size());
    for (std::size_t row = 0; row < H * T; ++row)
      for (std::size_t c : cols) idx.push_back(row * T + c);
    const ag::Tensor part = ag::sum(ag::gather(r.weights, idx, {idx.size()}));
    total = total.defined() ? ag::add(total, part) : part;
    denom_heads = H;
  }
  const double denom = static_cast<double>(records.size() * denom_heads * T);
  return AttnLoss{ag::scale(total, 1.0 / denom), false};
}

ag::Tensor concept_feature(std::span<const model::AttentionRecord> records, std::span<const TokenSpan> spans,
                           double min_t) {
  if (spans.empty()) throw ContractError("concept_feature needs at least one span");
  std::vector<std::size_t> cols;
  for (const auto& s : spans)
    for (std::size_t c = s.start; c < s.end; ++c) cols.push_back(c);
  ag::Tensor total;
  std::size_t used = 0;
  for (const auto& r : records) {
    if (r.t < min_t) continue;
    check_record(r);
    const std::size_t H = r.weights.dim(0), T = r.weights.dim(2);
    // Feature entry q = mean over heads h and span columns c of weights[h, q, c].
    for (std::size_t c : cols) {
      if (c >= T) throw IndexError("span column outside attention width");
      std::vector<std::size_t> idx;
      idx.reserve(H * T);
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t q = 0; q < T; ++q) idx.push_back((h * T + q) * T + c);
      const ag::Tensor per_head = ag::gather(r.weights, idx, {H, T});
      const ag::Tensor part = ag::sum_axis(per_head, 0);
      total = total.defined() ? ag::add(total, part) : part;
    }
    used += H;
  }
  if (used == 0) throw ContractError("no attention record passes the t >= " + std::to_string(min_t) + " filter");
  return ag::scale(total, 1.0 / static_cast<double>(used * cols.size()));
}

std::vector<std::string> write_attention_pgm(const model::AttentionRecord& record, const std::string& prefix) {
  check_record(record);
  const std::size_t H = record.weights.dim(0), T = record.weights.dim(2);
  const auto w = record.weights.data();
  std::vector<std::string> paths;
  for (std::size_t h = 0; h < H; ++h) {
    std::vector<double> img(w.begin() + static_cast<std::ptrdiff_t>(h * T * T),
                            w.begin() + static_cast<std::ptrdiff_t>((h + 1) * T * T));
    const std::string path = prefix + "_h" + std::to_string(h) + ".pgm";
    write_pgm(path, T, T, img);
    paths.push_back(path);
  }
  return paths;
}

void write_token_map_pgm(const model::AttentionRecord& record, std::size_t column, std::size_t text_len,
                         std::size_t grid_side, const std::string& path) {
  check_record(record);
  const std::size_t H = record.weights.dim(0), T = record.weights.dim(2);
  if (column >= text_len) throw IndexError("column " + std::to_string(column) + " is not a text position");
  if (text_len + grid_side * grid_side != T) throw DimensionError("patch grid does not match attention width");
  const auto w = record.weights.data();
  std::vector<double> img(grid_side * grid_side, 0.0);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t p = 0; p < img.size(); ++p) img[p] += w[(h * T + text_len + p) * T + column] / H;
  write_pgm(path, grid_side, grid_side, img);
}

}  // namespace flowerase::attn
