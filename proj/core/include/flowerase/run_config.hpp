#pragma once

// One JSON document configuring a whole pipeline run. Every section is
// optional; missing keys keep their defaults and unknown keys are rejected.

#include <nlohmann/json.hpp>
#include <string>

#include "flowerase/concepts.hpp"
#include "flowerase/engine.hpp"
#include "flowerase/evaluation.hpp"
#include "flowerase/pretrain.hpp"
#include "flowerase/toymodel.hpp"

namespace flowerase {

struct CorpusConfig {
  std::size_t n = 4000;
  std::uint64_t seed = 7;
  std::size_t image_side = 32;
};

struct RunConfig {
  CorpusConfig corpus;
  model::ModelConfig model;  // vocab_size is filled from the corpus vocabulary
  engine::PretrainConfig pretrain;
  eval::ClassifierConfig classifier;
  engine::BiLevelConfig erase;
  eval::MeasureConfig measure;
  std::string buckets_path;    // empty: bundled concept_buckets.json
  std::string thesaurus_path;  // empty: bundled thesaurus.json
  concepts::LlmClientConfig llm;
  std::string out_dir = "runs";

  /// Throws ConfigError naming the first offending key.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;

  /// Applies a --seed override to every seeded stage.
  void set_seed(std::uint64_t seed);
  std::string resolved_buckets() const;
  std::string resolved_thesaurus() const;
};

}  // namespace flowerase
