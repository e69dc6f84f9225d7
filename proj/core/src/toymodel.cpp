#include "flowerase/toymodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "flowerase/binary_io.hpp"
#include "flowerase/error.hpp"
#include "flowerase/rng.hpp"

namespace flowerase::model {

Vocabulary::Vocabulary() {
  words_ = {std::string(kPadWord), std::string(kNullWord), std::string(kUnkWord)};
  for (TokenId i = 0; i < words_.size(); ++i) index_[words_[i]] = i;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (v.index_.count(w)) continue;
    v.index_[w] = static_cast<TokenId>(v.words_.size());
    v.words_.push_back(w);
  }
  return v;
}

TokenId Vocabulary::lookup(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary to '" + path + "'");
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != kPadWord || lines[1] != kNullWord || lines[2] != kUnkWord) {
    throw FormatError("vocabulary '" + path + "' does not start with the reserved tokens");
  }
  return from_words({lines.begin() + 3, lines.end()});
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = io::fnv1a(std::string_view{});
  for (const auto& w : words_) h = io::fnv1a(w + "\n", h);
  return h;
}

std::vector<std::string> split_words(std::string_view prompt) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : prompt) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

TokenizedPrompt tokenize(std::string_view prompt, const Vocabulary& vocab, std::size_t text_len) {
  TokenizedPrompt tp;
  tp.ids.assign(text_len, kPad);
  const auto words = split_words(prompt);
  if (words.empty()) {
    if (text_len > 0) tp.ids[0] = kNull;
    tp.length = text_len > 0 ? 1 : 0;
    return tp;
  }
  tp.truncated = words.size() > text_len;
  tp.length = std::min(words.size(), text_len);
  for (std::size_t i = 0; i < tp.length; ++i) tp.ids[i] = vocab.lookup(words[i]);
  return tp;
}

void ModelConfig::validate() const {
  if (vocab_size < 3) throw ConfigError("vocab_size must include the reserved tokens");
  if (text_len == 0) throw ConfigError("text_len must be positive");
  if (patch_size == 0 || image_side % patch_size != 0) {
    throw ConfigError("image_side " + std::to_string(image_side) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (channels == 0 || num_dual_blocks == 0 || mlp_ratio == 0 || time_freqs == 0) {
    throw ConfigError("channels, num_dual_blocks, mlp_ratio and time_freqs must be positive");
  }
}

std::uint64_t ModelConfig::digest() const {
  std::ostringstream os;
  os << "toymodel/v1:" << vocab_size << ':' << text_len << ':' << image_side << ':' << patch_size << ':' << channels
     << ':' << embed_dim << ':' << num_heads << ':' << num_dual_blocks << ':' << mlp_ratio << ':' << time_freqs;
  return io::fnv1a(os.str());
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},   {"text_len", c.text_len},
                     {"image_side", c.image_side},   {"patch_size", c.patch_size},
                     {"channels", c.channels},       {"embed_dim", c.embed_dim},
                     {"num_heads", c.num_heads},     {"num_dual_blocks", c.num_dual_blocks},
                     {"mlp_ratio", c.mlp_ratio},     {"time_freqs", c.time_freqs},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const char* kKeys[] = {"vocab_size", "text_len",        "image_side", "patch_size",
                                "channels",   "embed_dim",       "num_heads",  "num_dual_blocks",
                                "mlp_ratio",  "time_freqs",      "seed"};
  for (const auto& [k, _] : j.items()) {
    if (std::none_of(std::begin(kKeys), std::end(kKeys), [&](const char* s) { return k == s; })) {
      throw ConfigError("unknown model config key '" + k + "'");
    }
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("vocab_size", c.vocab_size);
  get("text_len", c.text_len);
  get("image_side", c.image_side);
  get("patch_size", c.patch_size);
  get("channels", c.channels);
  get("embed_dim", c.embed_dim);
  get("num_heads", c.num_heads);
  get("num_dual_blocks", c.num_dual_blocks);
  get("mlp_ratio", c.mlp_ratio);
  get("time_freqs", c.time_freqs);
  get("seed", c.seed);
}

const ag::Tensor& ModelParams::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw TargetingError("no parameter named '" + name + "'");
  return it->second;
}

std::vector<ag::Tensor> ModelParams::parameters() const {
  std::vector<ag::Tensor> out;
  for (const auto& [_, t] : tensors_) out.push_back(t);
  return out;
}

void ModelParams::set_requires_grad(bool on) {
  for (auto& [_, t] : tensors_) t.set_requires_grad(on);
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [n, t] : tensors_) out.tensors_[n] = t.clone();
  return out;
}

std::uint64_t ModelParams::hash() const {
  std::uint64_t h = io::fnv1a(std::string_view{});
  for (const auto& [n, t] : tensors_) {
    h = io::fnv1a(n, h);
    h = io::fnv1a(t.data(), h);
  }
  return h;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

std::vector<lora::TargetShape> ModelParams::target_shapes(const std::vector<std::string>& names) const {
  std::vector<lora::TargetShape> out;
  for (const auto& n : names) {
    const auto& w = get(n);
    if (w.rank() != 2) throw TargetingError("'" + n + "' is not a projection weight");
    out.push_back({n, w.dim(0), w.dim(1)});
  }
  return out;
}

namespace {

void add_gaussian(ModelParams& p, Rng& rng, const std::string& name, ag::Shape shape, double sd) {
  std::vector<double> v(ag::numel_of(shape));
  for (auto& x : v) x = sd * rng.normal();
  p.set(name, ag::Tensor(std::move(shape), std::move(v)));
}

// Projection [out, in] scaled by 1/sqrt(fan_in).
void add_proj(ModelParams& p, Rng& rng, const std::string& name, std::size_t out, std::size_t in) {
  add_gaussian(p, rng, name, {out, in}, 1.0 / std::sqrt(static_cast<double>(in)));
}

std::string block_name(std::size_t b, const char* leaf) { return "blocks." + std::to_string(b) + "." + leaf; }

}  // namespace

ModelParams init_params(const ModelConfig& c) {
  c.validate();
  Rng rng(c.seed);
  ModelParams p;
  const std::size_t d = c.embed_dim;
  const std::size_t hidden = d * c.mlp_ratio;
  // Lookup tables see one-hot inputs: fan_in 1. Text tables start small so
  // synonyms begin close together; patch positions must stand out against
  // the noise content of a patch from the first step.
  add_gaussian(p, rng, "text_embed", {c.vocab_size, d}, 0.02);
  add_gaussian(p, rng, "text_pos", {c.text_len, d}, 0.02);
  add_gaussian(p, rng, "pixel_pos", {c.num_patches(), d}, 1.0);
  add_proj(p, rng, "patch_proj", d, c.patch_dim());
  p.set("patch_bias", ag::Tensor::zeros({1, d}));
  add_proj(p, rng, "time_in", d, 2 * c.time_freqs);
  add_proj(p, rng, "time_hidden", d, d);
  for (std::size_t b = 0; b < c.num_dual_blocks; ++b) {
    for (const char* leaf : {"add_q_proj", "add_k_proj", "add_v_proj", "to_q", "to_k", "to_v", "to_add_out",
                             "to_out", "time_text", "time_pixel"}) {
      add_proj(p, rng, block_name(b, leaf), d, d);
    }
    add_proj(p, rng, block_name(b, "ff_context.w1"), hidden, d);
    add_proj(p, rng, block_name(b, "ff_context.w2"), d, hidden);
    add_proj(p, rng, block_name(b, "ff.w1"), hidden, d);
    add_proj(p, rng, block_name(b, "ff.w2"), d, hidden);
  }
  add_proj(p, rng, "proj_out", c.patch_dim(), d);
  p.set("proj_out_bias", ag::Tensor::zeros({1, c.patch_dim()}));
  return p;
}

ag::Tensor timestep_features(double t, std::size_t freqs) {
  std::vector<double> v(2 * freqs);
  const double scaled = 1000.0 * t;
  for (std::size_t i = 0; i < freqs; ++i) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(freqs));
    v[i] = std::sin(scaled * f);
    v[freqs + i] = std::cos(scaled * f);
  }
  return ag::Tensor({1, 2 * freqs}, std::move(v));
}

namespace {

struct LayoutCache {
  std::vector<std::size_t> patchify;    // latent -> [patches, patch_dim]
  std::vector<std::size_t> unpatchify;  // [patches, patch_dim] -> latent
};

LayoutCache make_layout(const ModelConfig& c) {
  LayoutCache lc;
  const std::size_t s = c.image_side, p = c.patch_size, ch = c.channels, pps = c.patches_per_side();
  const std::size_t pd = c.patch_dim();
  lc.patchify.resize(s * s * ch);
  lc.unpatchify.resize(s * s * ch);
  for (std::size_t py = 0; py < pps; ++py)
    for (std::size_t px = 0; px < pps; ++px)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t k = 0; k < ch; ++k) {
            const std::size_t token = py * pps + px;
            const std::size_t feat = (dy * p + dx) * ch + k;
            const std::size_t pix = ((py * p + dy) * s + (px * p + dx)) * ch + k;
            lc.patchify[token * pd + feat] = pix;
            lc.unpatchify[pix] = token * pd + feat;
          }
  return lc;
}

const LayoutCache& layout_for(const ModelConfig& c) {
  thread_local std::map<std::uint64_t, LayoutCache> cache;
  const auto key = c.digest();
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, make_layout(c)).first;
  return it->second;
}

class WeightSource {
 public:
  WeightSource(const ModelParams& params, std::span<const lora::LoraAdapter> adapters)
      : params_(params), adapters_(adapters) {}

  ag::Tensor operator()(const std::string& name) const {
    ag::Tensor w = params_.get(name);
    for (const auto& ad : adapters_)
      if (ad.targets(name)) w = lora::apply(w, ad, name);
    return w;
  }

 private:
  const ModelParams& params_;
  std::span<const lora::LoraAdapter> adapters_;
};

}  // namespace

ForwardResult forward(const ModelConfig& c, const ModelParams& params, std::span<const lora::LoraAdapter> adapters,
                      const ag::Tensor& x_t, std::span<const TokenId> tokens, double t,
                      const ForwardOptions& options) {
  if (x_t.shape() != c.latent_shape()) {
    throw DimensionError("latent shape " + ag::shape_str(x_t.shape()) + " does not match config " +
                         ag::shape_str(c.latent_shape()));
  }
  if (tokens.size() != c.text_len) {
    throw DimensionError("expected " + std::to_string(c.text_len) + " tokens, got " + std::to_string(tokens.size()));
  }
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("timestep " + std::to_string(t) + " outside [0, 1]");
  for (auto col : options.zero_columns) {
    if (col >= c.text_len) throw IndexError("zeroed column " + std::to_string(col) + " is not a text position");
  }

  const WeightSource W(params, adapters);
  const auto& layout = layout_for(c);
  const std::size_t T = c.text_len, P = c.num_patches(), d = c.embed_dim, H = c.num_heads, dh = c.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<std::size_t> rows(T * d);
  for (std::size_t i = 0; i < T; ++i) {
    if (tokens[i] >= c.vocab_size) throw IndexError("token id " + std::to_string(tokens[i]) + " outside vocabulary");
    for (std::size_t k = 0; k < d; ++k) rows[i * d + k] = tokens[i] * d + k;
  }
  ag::Tensor txt = ag::add(ag::gather(params.get("text_embed"), rows, {T, d}), params.get("text_pos"));

  ag::Tensor patches = ag::gather(x_t, layout.patchify, {P, c.patch_dim()});
  ag::Tensor img = ag::add(ag::add(ag::linear(patches, params.get("patch_proj")),
                                   ag::repeat_rows(params.get("patch_bias"), P)),
                           params.get("pixel_pos"));

  ag::Tensor temb = ag::silu(ag::linear(timestep_features(t, c.time_freqs), params.get("time_in")));
  temb = ag::silu(ag::linear(temb, params.get("time_hidden")));

  ForwardResult result;
  for (std::size_t b = 0; b < c.num_dual_blocks; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    txt = ag::add(txt, ag::repeat_rows(ag::linear(temb, params.get(pre + "time_text")), T));
    img = ag::add(img, ag::repeat_rows(ag::linear(temb, params.get(pre + "time_pixel")), P));

    const ag::Tensor nt = ag::layer_norm_rows(txt);
    const ag::Tensor ni = ag::layer_norm_rows(img);
    const ag::Tensor q = ag::concat({ag::linear(nt, W(pre + "add_q_proj")), ag::linear(ni, W(pre + "to_q"))}, 0);
    const ag::Tensor k = ag::concat({ag::linear(nt, W(pre + "add_k_proj")), ag::linear(ni, W(pre + "to_k"))}, 0);
    const ag::Tensor v = ag::concat({ag::linear(nt, W(pre + "add_v_proj")), ag::linear(ni, W(pre + "to_v"))}, 0);

    std::vector<ag::Tensor> head_out, head_weights;
    for (std::size_t h = 0; h < H; ++h) {
      const ag::Tensor qh = ag::slice(q, 1, h * dh, (h + 1) * dh);
      const ag::Tensor kh = ag::slice(k, 1, h * dh, (h + 1) * dh);
      const ag::Tensor vh = ag::slice(v, 1, h * dh, (h + 1) * dh);
      const ag::Tensor w = ag::softmax(ag::scale(ag::matmul(qh, ag::transpose(kh)), attn_scale), 1);
      const ag::Tensor used = options.zero_columns.empty() ? w : ag::mask_last_axis(w, options.zero_columns);
      if (options.capture_attention) head_weights.push_back(ag::reshape(used, {1, T + P, T + P}));
      head_out.push_back(ag::matmul(used, vh));
    }
    if (options.capture_attention) result.records.push_back({b, t, ag::concat(head_weights, 0)});
    const ag::Tensor o = ag::concat(head_out, 1);
    img = ag::add(img, ag::linear(ag::slice(o, 0, T, T + P), params.get(pre + "to_out")));
    // The text stream after the last block never reaches the velocity head.
    if (b + 1 < c.num_dual_blocks) {
      txt = ag::add(txt, ag::linear(ag::slice(o, 0, 0, T), params.get(pre + "to_add_out")));
      txt = ag::add(txt, ag::linear(ag::silu(ag::linear(ag::layer_norm_rows(txt), params.get(pre + "ff_context.w1"))),
                                    params.get(pre + "ff_context.w2")));
    }
    img = ag::add(img, ag::linear(ag::silu(ag::linear(ag::layer_norm_rows(img), params.get(pre + "ff.w1"))),
                                  params.get(pre + "ff.w2")));
  }

  ag::Tensor out = ag::add(ag::linear(ag::layer_norm_rows(img), params.get("proj_out")),
                           ag::repeat_rows(params.get("proj_out_bias"), P));
  result.velocity = ag::gather(out, layout.unpatchify, c.latent_shape());
  return result;
}

}  // namespace flowerase::model
