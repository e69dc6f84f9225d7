#include "flowerase/run_config.hpp"

#include <fstream>
#include <set>

#include "flowerase/error.hpp"

namespace flowerase {
namespace {

// Reads named fields from one JSON object and rejects anything else.
class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be a JSON object");
  }
  /// Call after the last get(): rejects keys nobody asked for.
  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + name_ + "." + k + "'");
    }
  }
  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      j_.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }
  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const nlohmann::json& at(const char* key) const { return j_.at(key); }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  Section top(j, "config");
  if (top.has("corpus")) {
    Section s(top.at("corpus"), "corpus");
    s.get("n", c.corpus.n);
    s.get("seed", c.corpus.seed);
    s.get("image_side", c.corpus.image_side);
    s.finish();
  }
  if (top.has("model")) {
    try {
      top.at("model").get_to(c.model);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad model config: ") + e.what());
    }
  }
  if (top.has("pretrain")) {
    Section s(top.at("pretrain"), "pretrain");
    auto& p = c.pretrain;
    s.get("steps", p.steps);
    s.get("batch_size", p.batch_size);
    s.get("lr", p.lr);
    s.get("min_lr", p.min_lr);
    s.get("warmup", p.warmup);
    s.get("caption_dropout", p.caption_dropout);
    s.get("word_shuffle", p.word_shuffle);
    s.get("unk_prob", p.unk_prob);
    s.get("grad_clip", p.grad_clip);
    s.get("ema_decay", p.ema_decay);
    s.get("seed", p.seed);
    s.finish();
  }
  if (top.has("classifier")) {
    Section s(top.at("classifier"), "classifier");
    auto& k = c.classifier;
    s.get("patch", k.patch);
    s.get("channels", k.channels);
    s.get("hidden", k.hidden);
    s.get("epochs", k.epochs);
    s.get("batch_size", k.batch_size);
    s.get("lr", k.lr);
    s.get("noise_max", k.noise_max);
    s.get("shift_max", k.shift_max);
    s.get("speckle_max", k.speckle_max);
    s.get("gate", k.gate);
    s.get("seed", k.seed);
    s.finish();
  }
  if (top.has("erase")) {
    try {
      top.at("erase").get_to(c.erase);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad erase config: ") + e.what());
    }
  }
  if (top.has("measure")) {
    Section s(top.at("measure"), "measure");
    s.get("prompts_per_label", c.measure.prompts_per_label);
    s.get("samples_per_prompt", c.measure.samples_per_prompt);
    s.get("num_steps", c.measure.num_steps);
    s.get("seed", c.measure.seed);
    s.finish();
  }
  if (top.has("concepts")) {
    Section s(top.at("concepts"), "concepts");
    s.get("buckets", c.buckets_path);
    s.get("thesaurus", c.thesaurus_path);
    s.finish();
  }
  if (top.has("llm")) {
    Section s(top.at("llm"), "llm");
    s.get("endpoint", c.llm.endpoint);
    s.get("auth_env", c.llm.auth_env);
    s.get("timeout_s", c.llm.timeout_s);
    s.get("retries", c.llm.retries);
    s.finish();
  }
  top.get("out_dir", c.out_dir);
  top.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  const auto& p = pretrain;
  const auto& k = classifier;
  nlohmann::json m = model;
  return {
      {"corpus", {{"n", corpus.n}, {"seed", corpus.seed}, {"image_side", corpus.image_side}}},
      {"model", m},
      {"pretrain",
       {{"steps", p.steps}, {"batch_size", p.batch_size}, {"lr", p.lr}, {"min_lr", p.min_lr}, {"warmup", p.warmup},
        {"caption_dropout", p.caption_dropout}, {"word_shuffle", p.word_shuffle}, {"unk_prob", p.unk_prob},
        {"grad_clip", p.grad_clip}, {"ema_decay", p.ema_decay}, {"seed", p.seed}}},
      {"classifier",
       {{"patch", k.patch}, {"channels", k.channels}, {"hidden", k.hidden}, {"epochs", k.epochs},
        {"batch_size", k.batch_size}, {"lr", k.lr}, {"noise_max", k.noise_max},
        {"shift_max", k.shift_max}, {"speckle_max", k.speckle_max}, {"gate", k.gate}, {"seed", k.seed}}},
      {"erase", nlohmann::json(erase)},
      {"measure",
       {{"prompts_per_label", measure.prompts_per_label}, {"samples_per_prompt", measure.samples_per_prompt},
        {"num_steps", measure.num_steps}, {"seed", measure.seed}}},
      {"concepts", {{"buckets", buckets_path}, {"thesaurus", thesaurus_path}}},
      {"llm",
       {{"endpoint", llm.endpoint}, {"auth_env", llm.auth_env}, {"timeout_s", llm.timeout_s},
        {"retries", llm.retries}}},
      {"out_dir", out_dir},
  };
}

void RunConfig::validate() const {
  if (corpus.n == 0) throw ConfigError("corpus.n must be >= 1");
  if (corpus.image_side != model.image_side) {
    throw ConfigError("corpus.image_side " + std::to_string(corpus.image_side) + " differs from model.image_side " +
                      std::to_string(model.image_side));
  }
  if (pretrain.steps == 0 || pretrain.batch_size == 0) throw ConfigError("pretrain steps and batch_size must be >= 1");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr must be > 0");
  if (!(pretrain.ema_decay >= 0.0 && pretrain.ema_decay < 1.0)) throw ConfigError("pretrain.ema_decay must be in [0, 1)");
  if (classifier.epochs == 0 || classifier.batch_size == 0) throw ConfigError("classifier epochs and batch_size must be >= 1");
  if (corpus.image_side % classifier.patch != 0) throw ConfigError("classifier.patch must divide the image side");
  if (measure.prompts_per_label == 0 || measure.samples_per_prompt == 0 || measure.num_steps == 0) {
    throw ConfigError("measure counts must be >= 1");
  }
  erase.validate();
}

void RunConfig::set_seed(std::uint64_t seed) {
  corpus.seed = seed;
  model.seed = seed;
  pretrain.seed = seed;
  classifier.seed = seed;
  erase.seed = seed;
  erase.sampler.seed = seed;
  measure.seed = seed;
}

std::string RunConfig::resolved_buckets() const {
  return buckets_path.empty() ? concepts::data_path("concept_buckets.json") : buckets_path;
}

std::string RunConfig::resolved_thesaurus() const {
  return thesaurus_path.empty() ? concepts::data_path("thesaurus.json") : thesaurus_path;
}

}  // namespace flowerase
