#include "flowerase/concepts.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <regex>
#include <set>
#include <sstream>

#include "flowerase/error.hpp"
#include "flowerase/rng.hpp"

#ifndef FLOWERASE_DEFAULT_DATA_DIR
#define FLOWERASE_DEFAULT_DATA_DIR "data"
#endif

namespace flowerase::concepts {
namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Rewrites tuple-ish pseudo JSON into JSON: parentheses become brackets and
// single-quoted strings become double-quoted, outside of string literals.
std::string normalize_pseudo_json(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quote != 0) {
      if (c == '\\' && i + 1 < s.size()) {
        out += c;
        out += s[++i];
        continue;
      }
      if (c == quote) {
        out += '"';
        quote = 0;
      } else if (c == '"' && quote == '\'') {
        out += "\\\"";
      } else {
        out += c;
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      quote = c;
      out += '"';
    } else if (c == '(') {
      out += '[';
    } else if (c == ')') {
      out += ']';
    } else {
      out += c;
    }
  }
  return out;
}

std::vector<ScoredWord> parse_bucket_list(const nlohmann::json& j, std::string_view key) {
  if (!j.is_array()) throw ParseError("bucket '" + std::string(key) + "' is not a list");
  std::vector<ScoredWord> out;
  for (const auto& e : j) {
    ScoredWord w;
    if (e.is_string()) {
      w.word = e.get<std::string>();
    } else if (e.is_array() && !e.empty() && e[0].is_string()) {
      w.word = e[0].get<std::string>();
      if (e.size() > 1 && e[1].is_number()) w.score = e[1].get<double>();
    } else if (e.is_object() && e.contains("word")) {
      w.word = e.at("word").get<std::string>();
      w.score = e.value("score", 0.0);
    } else {
      throw ParseError("unrecognized entry in bucket '" + std::string(key) + "': " + e.dump());
    }
    if (!(w.score >= 0.0 && w.score <= 1.0)) {
      throw ParseError("similarity score for '" + w.word + "' outside [0, 1]");
    }
    w.word = lower(w.word);
    out.push_back(std::move(w));
  }
  return out;
}

Buckets buckets_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("bucket response is not an object");
  std::string missing;
  for (auto k : kBucketNames) {
    if (!j.contains(std::string(k))) missing += (missing.empty() ? "" : ", ") + std::string(k);
  }
  if (!missing.empty()) throw ParseError("bucket response missing keys: " + missing);
  Buckets b;
  for (auto k : kBucketNames) b.get(k) = parse_bucket_list(j.at(std::string(k)), k);
  return b;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

std::string data_dir() {
  if (const char* env = std::getenv("FLOWERASE_DATA_DIR"); env != nullptr && *env != '\0') return env;
  // The source tree wins while it exists; installed copies are the fallback.
  if (std::filesystem::exists(FLOWERASE_DEFAULT_DATA_DIR)) return FLOWERASE_DEFAULT_DATA_DIR;
  return FLOWERASE_INSTALL_DATA_DIR;
}

std::string data_path(std::string_view file) { return (std::filesystem::path(data_dir()) / file).string(); }

Thesaurus Thesaurus::load(const std::string& path) { return from_json_text(read_text(path)); }

Thesaurus Thesaurus::from_json_text(std::string_view text) {
  Thesaurus t;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& entries = j.contains("entries") ? j.at("entries") : j;
    for (const auto& [k, v] : entries.items()) {
      std::vector<std::string> syn;
      for (const auto& w : v) syn.push_back(lower(w.get<std::string>()));
      t.entries_[lower(k)] = std::move(syn);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed thesaurus: ") + e.what());
  }
  return t;
}

bool Thesaurus::contains(std::string_view word) const { return entries_.count(lower(word)) > 0; }

const std::vector<std::string>& Thesaurus::entries(std::string_view word) const {
  auto it = entries_.find(lower(word));
  if (it == entries_.end()) throw CoverageError("no thesaurus entry for '" + std::string(word) + "'");
  return it->second;
}

std::string Thesaurus::synonym(std::string_view word) const {
  const std::string w = lower(word);
  for (const auto& s : entries(w))
    if (s != w) return s;
  throw CoverageError("thesaurus has no synonym for '" + w + "' other than itself");
}

const std::vector<ScoredWord>& Buckets::get(std::string_view name) const {
  if (name == "no_relation") return no_relation;
  if (name == "far") return far;
  if (name == "mid") return mid;
  throw ContractError("unknown bucket '" + std::string(name) + "'");
}

std::vector<ScoredWord>& Buckets::get(std::string_view name) {
  return const_cast<std::vector<ScoredWord>&>(static_cast<const Buckets&>(*this).get(name));
}

std::vector<std::string> Buckets::all_words() const {
  std::vector<std::string> out;
  for (auto k : kBucketNames)
    for (const auto& w : get(k)) out.push_back(w.word);
  return out;
}

Buckets parse_buckets(std::string_view body) {
  const auto open = body.find('{');
  const auto close = body.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw ParseError("no JSON object in bucket response");
  }
  const std::string text = normalize_pseudo_json(body.substr(open, close - open + 1));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed bucket JSON: ") + e.what());
  }
  return buckets_from_json(j);
}

std::string ConceptSpec::sentence(std::string_view word) const {
  std::string s = sentence_template;
  const auto pos = s.find(kPlaceholder);
  if (pos == std::string::npos) throw ConfigError("template '" + s + "' has no placeholder");
  s.replace(pos, kPlaceholder.size(), word);
  return s;
}

void ConceptSpec::validate() const {
  if (c_un.empty()) throw ConfigError("concept word is empty");
  const auto first = sentence_template.find(kPlaceholder);
  if (first == std::string::npos || sentence_template.find(kPlaceholder, first + 1) != std::string::npos) {
    throw ConfigError("template must contain exactly one placeholder: '" + sentence_template + "'");
  }
  for (auto k : kBucketNames) {
    for (const auto& w : buckets.get(k)) {
      if (w.word == c_un) throw ConfigError("concept '" + c_un + "' appears in its own bucket '" + std::string(k) + "'");
      if (!(w.score >= 0.0 && w.score <= 1.0)) throw ConfigError("bucket score outside [0, 1]");
    }
  }
}

BucketStore BucketStore::load(const std::string& path) {
  BucketStore s;
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    const auto& concepts = j.contains("concepts") ? j.at("concepts") : j;
    for (const auto& [k, v] : concepts.items()) {
      Entry e;
      e.category = v.value("category", "");
      e.sentence_template = v.value("template", std::string("a photo of ") + std::string(ConceptSpec::kPlaceholder));
      e.buckets = buckets_from_json(v);
      s.entries_[lower(k)] = std::move(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed bucket file '" + path + "': " + e.what());
  }
  return s;
}

bool BucketStore::contains(std::string_view c_un) const { return entries_.count(lower(c_un)) > 0; }

const BucketStore::Entry& BucketStore::entry(std::string_view c_un) const {
  auto it = entries_.find(lower(c_un));
  if (it == entries_.end()) throw CoverageError("no buckets for concept '" + std::string(c_un) + "'");
  return it->second;
}

const Buckets& BucketStore::buckets(std::string_view c_un) const { return entry(c_un).buckets; }
const std::string& BucketStore::sentence_template(std::string_view c_un) const {
  return entry(c_un).sentence_template;
}
const std::string& BucketStore::category(std::string_view c_un) const { return entry(c_un).category; }

std::vector<std::string> BucketStore::concepts() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

ConceptSpec make_spec(std::string_view c_un, const Thesaurus& thesaurus, std::string sentence_template,
                      Buckets buckets, std::string category) {
  ConceptSpec s;
  s.c_un = lower(c_un);
  s.c_syn = thesaurus.synonym(s.c_un);
  s.sentence_template = std::move(sentence_template);
  s.buckets = std::move(buckets);
  s.category = std::move(category);
  s.validate();
  return s;
}

ConceptSpec make_spec(std::string_view c_un, const Thesaurus& thesaurus, const BucketStore& store) {
  return make_spec(c_un, thesaurus, store.sentence_template(c_un), store.buckets(c_un), store.category(c_un));
}

std::vector<std::string> sample_irrelevant(const ConceptSpec& spec, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw SamplingError("K must be >= 1");
  Rng rng(seed);
  std::set<std::string> taken = {spec.c_un, spec.c_syn};
  auto eligible = [&](const std::vector<ScoredWord>& words) {
    std::vector<std::string> out;
    for (const auto& w : words)
      if (!taken.count(w.word) && std::find(out.begin(), out.end(), w.word) == out.end()) out.push_back(w.word);
    return out;
  };
  std::vector<std::string> result;
  if (k == kBucketNames.size()) {
    for (auto name : kBucketNames) {
      const auto pool = eligible(spec.buckets.get(name));
      if (pool.empty()) throw SamplingError("bucket '" + std::string(name) + "' has no eligible word for '" + spec.c_un + "'");
      result.push_back(pool[rng.index(pool.size())]);
      taken.insert(result.back());
    }
    return result;
  }
  std::vector<ScoredWord> all;
  for (auto name : kBucketNames)
    for (const auto& w : spec.buckets.get(name)) all.push_back(w);
  auto pool = eligible(all);
  if (pool.size() < k) {
    throw SamplingError("need " + std::to_string(k) + " irrelevant words, buckets hold " + std::to_string(pool.size()));
  }
  rng.shuffle(pool.begin(), pool.end());
  pool.resize(k);
  return pool;
}

AgentTemplate AgentTemplate::load(const std::string& path) {
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    return AgentTemplate{j.at("system").get<std::string>(), j.at("user").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed agent template '" + path + "': " + e.what());
  }
}

std::string AgentTemplate::user_message(std::string_view word, std::size_t k) const {
  std::string s = user;
  replace_all(s, "{K}", std::to_string(k));
  replace_all(s, "{WORD}", word);
  return s;
}

ConceptClient::ConceptClient(LlmClientConfig config, AgentTemplate agent)
    : config_(std::move(config)), agent_(std::move(agent)) {
  if (config_.offline_fallback.empty()) config_.offline_fallback = data_path("concept_buckets.json");
  if (config_.endpoint.empty() && !std::filesystem::exists(config_.offline_fallback)) {
    throw ConfigError("no endpoint configured and offline bucket file '" + config_.offline_fallback + "' is missing");
  }
}

FetchResult ConceptClient::fetch_buckets(std::string_view c_un, std::size_t k) {
  const std::string key = lower(c_un) + "#" + std::to_string(k);
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  FetchResult r = fetch_uncached(lower(c_un), k);
  std::lock_guard lock(mu_);
  return cache_.emplace(key, std::move(r)).first->second;
}

FetchResult ConceptClient::fetch_uncached(const std::string& c_un, std::size_t k) const {
  FetchResult r;
  if (!config_.endpoint.empty()) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, url_re)) {
      r.warnings.push_back("malformed endpoint '" + config_.endpoint + "'");
    } else {
      const std::string path = m[2].matched ? m[2].str() : "/";
      httplib::Client cli(m[1].str());
      const auto secs = static_cast<time_t>(config_.timeout_s);
      const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
      cli.set_connection_timeout(secs, usecs);
      cli.set_read_timeout(secs, usecs);
      httplib::Headers headers;
      if (const char* tok = std::getenv(config_.auth_env.c_str()); tok != nullptr && *tok != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + tok);
      }
      const nlohmann::json body = {{"system", agent_.system}, {"user", agent_.user_message(c_un, k)}};
      for (std::size_t attempt = 0; attempt <= config_.retries; ++attempt) {
        auto res = cli.Post(path, headers, body.dump(), "application/json");
        if (!res) {
          r.warnings.push_back("request failed: " + httplib::to_string(res.error()));
          continue;
        }
        if (res->status != 200) {
          r.warnings.push_back("endpoint returned HTTP " + std::to_string(res->status));
          continue;
        }
        try {
          r.buckets = parse_buckets(res->body);
          r.source = "remote";
          return r;
        } catch (const ParseError& e) {
          r.warnings.push_back(std::string("unparseable response: ") + e.what());
        }
      }
    }
  }
  if (!std::filesystem::exists(config_.offline_fallback)) {
    throw ConfigError("remote lookup for '" + c_un + "' failed and offline file '" + config_.offline_fallback +
                      "' is missing");
  }
  r.buckets = BucketStore::load(config_.offline_fallback).buckets(c_un);
  r.source = config_.endpoint.empty() ? "offline" : "fallback";
  if (r.source == "fallback") r.warnings.push_back("using offline buckets for '" + c_un + "'");
  return r;
}

FetchResult fetch_buckets(std::string_view c_un, const LlmClientConfig& config, std::size_t k) {
  ConceptClient client(config);
  return client.fetch_buckets(c_un, k);
}

}  // namespace flowerase::concepts
