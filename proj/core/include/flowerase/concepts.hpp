#pragma once

// Synonyms and irrelevant-concept buckets for a target concept, from bundled
// data files or a remote language-model endpoint.

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace flowerase::concepts {

/// Directory holding the bundled data files: $FLOWERASE_DATA_DIR if set,
/// otherwise the path baked in at build time.
std::string data_dir();
std::string data_path(std::string_view file);

class Thesaurus {
 public:
  static Thesaurus load(const std::string& path);
  static Thesaurus from_json_text(std::string_view text);

  /// First listed synonym that differs from the word. Throws CoverageError.
  std::string synonym(std::string_view word) const;
  const std::vector<std::string>& entries(std::string_view word) const;
  bool contains(std::string_view word) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> entries_;
};

struct ScoredWord {
  std::string word;
  double score = 0.0;  // relative reference only; sampling ignores it
};

inline constexpr std::array<std::string_view, 3> kBucketNames = {"no_relation", "far", "mid"};

struct Buckets {
  std::vector<ScoredWord> no_relation, far, mid;

  const std::vector<ScoredWord>& get(std::string_view name) const;
  std::vector<ScoredWord>& get(std::string_view name);
  std::vector<std::string> all_words() const;
};

/// Parses a bucket response. Accepts strict JSON and the tuple-style
/// `("word", 0.1)` pairs language models tend to emit; surrounding prose and
/// code fences are ignored. Throws ParseError naming missing keys.
Buckets parse_buckets(std::string_view body);

struct ConceptSpec {
  std::string c_un;
  std::string sentence_template;  // contains kPlaceholder exactly once
  std::string c_syn;
  std::string category;
  Buckets buckets;

  static constexpr std::string_view kPlaceholder = "[concept]";
  std::string sentence(std::string_view word) const;
  void validate() const;
};

/// Offline bucket file: one object per concept with template, category and buckets.
class BucketStore {
 public:
  static BucketStore load(const std::string& path);
  bool contains(std::string_view c_un) const;
  const Buckets& buckets(std::string_view c_un) const;
  const std::string& sentence_template(std::string_view c_un) const;
  const std::string& category(std::string_view c_un) const;
  std::vector<std::string> concepts() const;

 private:
  struct Entry {
    std::string category, sentence_template;
    Buckets buckets;
  };
  const Entry& entry(std::string_view c_un) const;
  std::map<std::string, Entry, std::less<>> entries_;
};

ConceptSpec make_spec(std::string_view c_un, const Thesaurus& thesaurus, const BucketStore& store);
ConceptSpec make_spec(std::string_view c_un, const Thesaurus& thesaurus, std::string sentence_template,
                      Buckets buckets, std::string category = {});

/// K = 3 draws one word per bucket in bucket order; other K draw without
/// replacement from the pooled buckets. Never returns c_un or c_syn.
std::vector<std::string> sample_irrelevant(const ConceptSpec& spec, std::size_t k, std::uint64_t seed);

struct AgentTemplate {
  std::string system;
  std::string user;  // {K} and {WORD} placeholders

  static AgentTemplate load(const std::string& path);
  std::string user_message(std::string_view word, std::size_t k) const;
};

struct LlmClientConfig {
  std::string endpoint;  // http://host[:port]/path; empty means offline
  std::string auth_env = "FLOWERASE_LLM_TOKEN";
  double timeout_s = 20.0;
  std::size_t retries = 2;
  std::string offline_fallback;  // bucket file; defaults to the bundled one
};

struct FetchResult {
  Buckets buckets;
  std::string source;  // "remote" | "offline" | "fallback"
  std::vector<std::string> warnings;
};

/// Thread-safe; successful lookups are cached per concept.
class ConceptClient {
 public:
  explicit ConceptClient(LlmClientConfig config, AgentTemplate agent = AgentTemplate::load(data_path("agent_template.json")));
  FetchResult fetch_buckets(std::string_view c_un, std::size_t k = 3);

 private:
  FetchResult fetch_uncached(const std::string& c_un, std::size_t k) const;
  LlmClientConfig config_;
  AgentTemplate agent_;
  std::mutex mu_;
  std::map<std::string, FetchResult> cache_;
};

FetchResult fetch_buckets(std::string_view c_un, const LlmClientConfig& config, std::size_t k = 3);

}  // namespace flowerase::concepts
