#include "flowerase/engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flowerase/binary_io.hpp"
#include "flowerase/error.hpp"
#include "flowerase/pretrain.hpp"

namespace flowerase::engine {
namespace {

void check_finite(double v, const char* name, std::size_t it) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(name) + " loss is not finite at iteration " + std::to_string(it));
  }
}

// Replaces the words of `span` in `sentence` by `word`; returns the new prompt
// and the span the replacement occupies.
std::pair<std::string, attn::TokenSpan> substitute(const std::string& sentence, const attn::TokenSpan& span,
                                                   const std::string& word) {
  auto words = model::split_words(sentence);
  const auto repl = model::split_words(word);
  std::vector<std::string> out(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(span.start));
  out.insert(out.end(), repl.begin(), repl.end());
  out.insert(out.end(), words.begin() + static_cast<std::ptrdiff_t>(span.end), words.end());
  const std::string prompt = model::join_words(out);
  return {prompt, attn::TokenSpan{span.start, span.start + repl.size(), io::fnv1a(prompt)}};
}

}  // namespace

void BiLevelConfig::validate() const {
  if (!(alpha_low > 0.0) || !(alpha_up > 0.0)) throw ConfigError("learning rates must be > 0");
  if (preservation_count < 6 || preservation_count > 10) {
    throw ConfigError("preservation_count must be in [6, 10], got " + std::to_string(preservation_count));
  }
  esd.validate();
  rsc.validate();
  if (sampler.num_steps == 0) throw ConfigError("sampler steps must be >= 1");
  if (lora_rank == 0) throw ConfigError("lora_rank must be >= 1");
  if (!(t_min > 0.0 && t_min <= 1.0)) throw ConfigError("t_min must be in (0, 1]");
  if (!(feature_min_t >= 0.0 && feature_min_t <= 1.0)) throw ConfigError("feature_min_t must be in [0, 1]");
  for (double w : {weights.esd, weights.attn, weights.lora, weights.rsc}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
}

void to_json(nlohmann::json& j, const BiLevelConfig& c) {
  j = nlohmann::json{{"alpha_low", c.alpha_low},
                     {"alpha_up", c.alpha_up},
                     {"iterations", c.iterations},
                     {"eta", c.esd.eta},
                     {"tau", c.rsc.tau},
                     {"k", c.rsc.k},
                     {"sampler_steps", c.sampler.num_steps},
                     {"preservation_count", c.preservation_count},
                     {"weights", {{"esd", c.weights.esd}, {"attn", c.weights.attn}, {"lora", c.weights.lora},
                                  {"rsc", c.weights.rsc}}},
                     {"lora_rank", c.lora_rank},
                     {"lora_alpha", c.lora_alpha},
                     {"weight_decay", c.weight_decay},
                     {"t_min", c.t_min},
                     {"feature_min_t", c.feature_min_t},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, BiLevelConfig& c) {
  static const char* kKeys[] = {"alpha_low", "alpha_up",   "iterations",   "eta",           "tau",
                                "k",         "sampler_steps", "preservation_count", "weights", "lora_rank",
                                "lora_alpha", "weight_decay", "t_min",        "feature_min_t", "seed"};
  if (!j.is_object()) throw ConfigError("erase config must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (std::none_of(std::begin(kKeys), std::end(kKeys), [&](const char* s) { return k == s; })) {
      throw ConfigError("unknown erase config key '" + k + "'");
    }
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("alpha_low", c.alpha_low);
    get("alpha_up", c.alpha_up);
    get("iterations", c.iterations);
    get("eta", c.esd.eta);
    get("tau", c.rsc.tau);
    get("k", c.rsc.k);
    get("sampler_steps", c.sampler.num_steps);
    get("preservation_count", c.preservation_count);
    get("lora_rank", c.lora_rank);
    get("lora_alpha", c.lora_alpha);
    get("weight_decay", c.weight_decay);
    get("t_min", c.t_min);
    get("feature_min_t", c.feature_min_t);
    get("seed", c.seed);
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      for (const auto& [k, _] : w.items()) {
        if (k != "esd" && k != "attn" && k != "lora" && k != "rsc") {
          throw ConfigError("unknown loss weight '" + k + "'");
        }
      }
      if (w.contains("esd")) w.at("esd").get_to(c.weights.esd);
      if (w.contains("attn")) w.at("attn").get_to(c.weights.attn);
      if (w.contains("lora")) w.at("lora").get_to(c.weights.lora);
      if (w.contains("rsc")) w.at("rsc").get_to(c.weights.rsc);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad erase config value: ") + e.what());
  }
  c.sampler.seed = c.seed;
}

std::vector<PreservationPair> make_preservation_set(const BaseModel& base, const std::vector<std::string>& prompts,
                                                    std::size_t count, std::uint64_t seed, std::size_t num_steps) {
  if (count < 6 || count > 10) throw ConfigError("preservation set size must be in [6, 10]");
  if (prompts.empty()) throw ConfigError("preservation set needs at least one prompt");
  std::vector<PreservationPair> out;
  for (std::size_t i = 0; i < count; ++i) {
    PreservationPair p;
    p.prompt = prompts[i % prompts.size()];
    p.tokens = model::tokenize(p.prompt, base.vocab, base.config.text_len).ids;
    p.u_pix = flow::euler_sample(base.config, base.params, {}, p.tokens, flow::SamplerConfig{num_steps, seed + i});
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::string> preservation_prompts(const concepts::ConceptSpec& spec) {
  std::vector<std::string> out;
  for (const auto& w : spec.buckets.all_words()) {
    if (w == spec.c_un || w == spec.c_syn) continue;
    const std::string p = spec.sentence(w);
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  if (out.empty()) throw SamplingError("no preservation prompts for '" + spec.c_un + "'");
  return out;
}

void to_json(nlohmann::json& j, const LogEntry& e) {
  j = nlohmann::json{{"iteration", e.iteration}, {"level", e.level}, {"losses", e.losses},
                     {"lr", e.lr},               {"rng_cursor", e.rng_cursor}, {"prompt", e.prompt}};
}

static LogEntry log_from_json(const nlohmann::json& j) {
  LogEntry e;
  e.iteration = j.at("iteration").get<std::size_t>();
  e.level = j.at("level").get<std::string>();
  e.losses = j.at("losses").get<std::map<std::string, double>>();
  e.lr = j.at("lr").get<double>();
  e.rng_cursor = j.at("rng_cursor").get<std::uint64_t>();
  e.prompt = j.at("prompt").get<std::string>();
  return e;
}

std::string log_to_jsonl(const std::vector<LogEntry>& log) {
  std::string out;
  for (const auto& e : log) out += nlohmann::json(e).dump() + "\n";
  return out;
}

EraseSession::EraseSession(const BaseModel& base, concepts::ConceptSpec spec, BiLevelConfig cfg)
    : base_(base), spec_(std::move(spec)), cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  spec_.validate();
  if (spec_.c_syn.empty()) throw ConfigError("concept spec for '" + spec_.c_un + "' has no synonym");
  const auto targets = base_.params.target_shapes(lora::default_targets(base_.config.num_dual_blocks));
  adapter_ = lora::LoraAdapter::create(targets, cfg_.lora_rank, cfg_.lora_alpha, mix_seed(cfg_.seed, 0xADA),
                                       base_.config.digest());
  adapter_.set_requires_grad(true);
  opt_low_ = AdamW(adapter_.parameters(), AdamWConfig{.lr = cfg_.alpha_low, .weight_decay = cfg_.weight_decay});
  opt_up_ = AdamW(adapter_.parameters(), AdamWConfig{.lr = cfg_.alpha_up, .weight_decay = cfg_.weight_decay});
  preservation_ = make_preservation_set(base_, preservation_prompts(spec_), cfg_.preservation_count,
                                        mix_seed(cfg_.seed, 0x9E5), cfg_.sampler.num_steps);
  shared_x_T_ = flow::gaussian_noise(base_.config.latent_shape(), mix_seed(cfg_.seed, 0x7A7));
}

std::vector<model::TokenId> EraseSession::tokens(const std::string& prompt) const {
  return model::tokenize(prompt, base_.vocab, base_.config.text_len).ids;
}

void EraseSession::push_log(LogEntry e) {
  log_.push_back(std::move(e));
  if (on_log) on_log(log_.back());
}

void EraseSession::run(std::optional<std::size_t> max_iterations) {
  std::size_t n = 0;
  while (!done() && (!max_iterations || n < *max_iterations)) {
    step();
    ++n;
  }
}

void EraseSession::step() {
  if (done()) return;
  const std::size_t it = iteration_;
  const std::uint64_t seed = rng_.next_u64();
  Rng r(seed);
  const std::string sentence = shuffle_words(spec_.sentence(spec_.c_un), r, spec_.c_un);
  const auto spans = attn::locate_spans(sentence, spec_.c_un, base_.config.text_len);
  if (spans.empty()) throw ContractError("'" + spec_.c_un + "' not found in '" + sentence + "' after truncation");
  lower_step(it, mix_seed(seed, 1), sentence, spans);
  upper_step(it, mix_seed(seed, 2), sentence, spans);
  ++iteration_;
}

void EraseSession::lower_step(std::size_t it, std::uint64_t seed, const std::string& sentence,
                              const std::vector<attn::TokenSpan>& spans) {
  const auto& cfg = base_.config;
  Rng r(seed);
  const double t = r.uniform(cfg_.t_min, 1.0);
  const auto toks = tokens(sentence);
  const auto null_toks = tokens("");
  ag::Tensor x_t = flow::gaussian_noise(cfg.latent_shape(), r.next_u64());
  ag::Tensor v_cond, v_uncond;
  {
    ag::NoGradGuard guard;
    const auto steps = static_cast<std::size_t>(std::lround((1.0 - t) * static_cast<double>(cfg_.sampler.num_steps)));
    if (steps > 0) x_t = flow::euler_integrate(flow::model_field(cfg, base_.params, {}, toks), x_t, 1.0, t, steps);
    v_cond = model::forward(cfg, base_.params, {}, x_t, toks, t).velocity;
    v_uncond = model::forward(cfg, base_.params, {}, x_t, null_toks, t).velocity;
  }
  const auto edited = model::forward(cfg, base_.params, std::span(&adapter_, 1), x_t, toks, t,
                                     model::ForwardOptions{.capture_attention = true, .zero_columns = {}});
  const ag::Tensor esd = losses::esd_loss(edited.velocity, v_cond, v_uncond, cfg_.esd);
  const auto al = attn::attn_loss(edited.records, spans);
  const ag::Tensor loss = ag::add(ag::scale(esd, cfg_.weights.esd), ag::scale(al.value, cfg_.weights.attn));
  check_finite(esd.item(), "esd", it);
  check_finite(al.value.item(), "attn", it);

  opt_low_.zero_grad();
  ag::backward(loss);
  opt_low_.step();
  push_log(LogEntry{it, "lower", {{"esd", esd.item()}, {"attn", al.value.item()}, {"total", loss.item()}, {"t", t}},
                    cfg_.alpha_low, seed, sentence});
}

void EraseSession::upper_step(std::size_t it, std::uint64_t seed, const std::string& sentence,
                              const std::vector<attn::TokenSpan>& spans) {
  const auto& cfg = base_.config;
  Rng r(seed);
  const auto c_ir = concepts::sample_irrelevant(spec_, cfg_.rsc.k, r.next_u64());

  // Concept features from the first sampling step of a fixed starting latent.
  auto feature = [&](const std::string& prompt, const attn::TokenSpan& span) {
    const auto out = model::forward(cfg, base_.params, std::span(&adapter_, 1), shared_x_T_, tokens(prompt), 1.0,
                                    model::ForwardOptions{.capture_attention = true, .zero_columns = {}});
    const attn::TokenSpan one[] = {span};
    return attn::concept_feature(out.records, one, cfg_.feature_min_t);
  };
  ag::Tensor rsc;
  {
    std::optional<ag::NoGradGuard> guard;
    if (cfg_.weights.rsc == 0.0) guard.emplace();
    losses::ConceptFeatures f;
    const attn::TokenSpan& span = spans.front();
    f.f_un = feature(sentence, span);
    const auto [syn_prompt, syn_span] = substitute(sentence, span, spec_.c_syn);
    f.f_syn = feature(syn_prompt, syn_span);
    for (const auto& w : c_ir) {
      const auto [p, s] = substitute(sentence, span, w);
      f.f_ir.push_back(feature(p, s));
    }
    rsc = losses::rsc_loss(f, cfg_.rsc);
  }

  const auto& pair = preservation_[r.index(preservation_.size())];
  const double t = r.uniform();
  const auto fs = flow::make_sample(pair.u_pix, flow::gaussian_noise(cfg.latent_shape(), r.next_u64()), t);
  const auto pred = model::forward(cfg, base_.params, std::span(&adapter_, 1), fs.u_t, pair.tokens, t).velocity;
  const ag::Tensor pres = losses::preservation_loss(pred, fs.v_target);
  const ag::Tensor loss = ag::add(ag::scale(pres, cfg_.weights.lora), ag::scale(rsc, cfg_.weights.rsc));
  check_finite(pres.item(), "preservation", it);
  check_finite(rsc.item(), "rsc", it);

  opt_up_.zero_grad();
  ag::backward(loss);
  opt_up_.step();
  push_log(LogEntry{it, "upper", {{"lora", pres.item()}, {"rsc", rsc.item()}, {"total", loss.item()}, {"t", t}},
                    cfg_.alpha_up, seed, sentence});
}

// Layout: magic, version u32, base config digest u64, erase config JSON, c_un,
// iteration u64, generator state, adapter blob, lower/upper optimizer state,
// run log JSON-lines, FNV-1a checksum u64.
std::vector<std::uint8_t> EraseSession::checkpoint_bytes() const {
  io::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(base_.config.digest());
  nlohmann::json cj = cfg_;
  cj.erase("iterations");
  w.str(cj.dump());
  w.str(spec_.c_un);
  w.u64(iteration_);
  w.str(rng_.state());
  const auto blob = lora::serialize(adapter_);
  w.u64(blob.size());
  w.bytes(blob.data(), blob.size());
  opt_low_.save_state(w);
  opt_up_.save_state(w);
  w.str(log_to_jsonl(log_));
  w.u64(io::fnv1a(std::span<const std::uint8_t>(w.buffer())));
  return w.buffer();
}

void EraseSession::save_checkpoint(const std::string& path) const { io::write_file(path, checkpoint_bytes()); }

void EraseSession::restore(std::span<const std::uint8_t> bytes) {
  io::Reader r(io::verified_body(bytes, "checkpoint"));
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) throw FormatError("not an erase checkpoint (bad magic)");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(v));
  }
  if (r.u64() != base_.config.digest()) throw DigestMismatchError("checkpoint was written for a different model config");
  nlohmann::json cj = cfg_;
  cj.erase("iterations");
  if (r.str() != cj.dump()) throw ConfigError("checkpoint erase config differs from the live config");
  if (r.str() != spec_.c_un) throw ConfigError("checkpoint targets a different concept");
  const auto iteration = r.u64();
  const std::string rng_state = r.str();
  const auto blob_len = r.u64();
  std::vector<std::uint8_t> blob(blob_len);
  r.bytes(blob.data(), blob_len);
  auto adapter = lora::deserialize(blob);
  if (adapter.target_names() != adapter_.target_names()) throw FormatError("checkpoint adapter targets differ");
  adapter.set_requires_grad(true);
  AdamW low(adapter.parameters(), opt_low_.config());
  AdamW up(adapter.parameters(), opt_up_.config());
  low.load_state(r);
  up.load_state(r);
  std::vector<LogEntry> log;
  std::istringstream lines(r.str());
  try {
    for (std::string line; std::getline(lines, line);)
      if (!line.empty()) log.push_back(log_from_json(nlohmann::json::parse(line)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint run log: ") + e.what());
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint");

  adapter_ = std::move(adapter);
  opt_low_ = std::move(low);
  opt_up_ = std::move(up);
  iteration_ = iteration;
  rng_.set_state(rng_state);
  log_ = std::move(log);
}

void EraseSession::load_checkpoint(const std::string& path) {
  const auto bytes = io::read_file(path);
  restore(bytes);
}

EraseResult erase(const BaseModel& base, const concepts::ConceptSpec& spec, const BiLevelConfig& cfg) {
  EraseSession s(base, spec, cfg);
  s.run();
  EraseResult out{s.adapter().clone(), s.log()};
  out.adapter.set_requires_grad(false);
  return out;
}

}  // namespace flowerase::engine
