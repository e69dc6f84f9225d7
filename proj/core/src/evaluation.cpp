#include "flowerase/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "flowerase/attention_tools.hpp"
#include "flowerase/binary_io.hpp"
#include "flowerase/error.hpp"
#include "flowerase/flow.hpp"
#include "flowerase/optim.hpp"
#include "flowerase/rng.hpp"

namespace flowerase::eval {
namespace {

std::string head_name(data::Attribute a) { return "head." + std::string(data::attribute_name(a)); }

ag::Tensor init_weight(Rng& rng, std::size_t out, std::size_t in) {
  std::vector<double> w(out * in);
  const double sd = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w) v = sd * rng.normal();
  return ag::Tensor({out, in}, std::move(w));
}

std::vector<std::size_t> patch_indices(std::size_t side, std::size_t patch) {
  const std::size_t g = side / patch;
  std::vector<std::size_t> idx;
  idx.reserve(side * side * 3);
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < 3; ++c) idx.push_back(((py * patch + y) * side + px * patch + x) * 3 + c);
  return idx;
}

std::string replace_word(const std::string& prompt, const std::string& from, const std::string& to) {
  const auto key = model::split_words(from);
  const auto words = model::split_words(prompt);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < words.size();) {
    if (!key.empty() && i + key.size() <= words.size() &&
        std::equal(key.begin(), key.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
      for (const auto& w : model::split_words(to)) out.push_back(w);
      i += key.size();
    } else {
      out.push_back(words[i++]);
    }
  }
  return model::join_words(out);
}

void write_classifier_config(io::Writer& w, const ClassifierConfig& c) {
  for (std::size_t v : {c.patch, c.channels, c.hidden, c.epochs, c.batch_size}) w.u64(v);
  w.f64(c.lr);
  w.f64(c.noise_max);
  w.u64(c.shift_max);
  w.f64(c.speckle_max);
  w.f64(c.gate);
  w.u64(c.seed);
}

ClassifierConfig read_classifier_config(io::Reader& r) {
  ClassifierConfig c;
  c.patch = r.u64();
  c.channels = r.u64();
  c.hidden = r.u64();
  c.epochs = r.u64();
  c.batch_size = r.u64();
  c.lr = r.f64();
  c.noise_max = r.f64();
  c.shift_max = r.u64();
  c.speckle_max = r.f64();
  c.gate = r.f64();
  c.seed = r.u64();
  return c;
}

// Generated images are blurrier and noisier than renders; training sees
// renders only, so it gets shifted, speckled and noised copies of them.
ag::Tensor augment(const ag::Tensor& image, const ClassifierConfig& cfg, Rng& rng) {
  const std::size_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  const auto& src = image.data();
  std::vector<double> v(src.begin(), src.end());
  if (cfg.shift_max > 0) {
    const long span = 2 * static_cast<long>(cfg.shift_max) + 1;
    const long dy = static_cast<long>(rng.index(span)) - static_cast<long>(cfg.shift_max);
    const long dx = static_cast<long>(rng.index(span)) - static_cast<long>(cfg.shift_max);
    std::fill(v.begin(), v.end(), -1.0);
    for (long y = 0; y < static_cast<long>(h); ++y) {
      const long sy = y - dy;
      if (sy < 0 || sy >= static_cast<long>(h)) continue;
      for (long x = 0; x < static_cast<long>(w); ++x) {
        const long sx = x - dx;
        if (sx < 0 || sx >= static_cast<long>(w)) continue;
        for (std::size_t k = 0; k < c; ++k) v[(y * w + x) * c + k] = src[(sy * w + sx) * c + k];
      }
    }
  }
  const double p = rng.uniform(0.0, cfg.speckle_max);
  if (p > 0.0) {
    const std::vector<double> base = v;
    for (std::size_t i = 0; i < h * w; ++i) {
      if (rng.uniform() >= p) continue;
      const std::size_t j = rng.index(h * w);
      for (std::size_t k = 0; k < c; ++k) v[i * c + k] = base[j * c + k];
    }
  }
  const double sd = rng.uniform(0.0, cfg.noise_max);
  if (sd > 0.0) {
    for (auto& x : v) x += sd * rng.normal();
  }
  return ag::Tensor(image.shape(), std::move(v));
}

}  // namespace

ConceptClassifier ConceptClassifier::init(const ClassifierConfig& cfg, std::size_t image_side) {
  if (cfg.patch == 0 || image_side % cfg.patch != 0) throw ConfigError("classifier patch must divide the image side");
  ConceptClassifier c;
  c.cfg_ = cfg;
  c.side_ = image_side;
  c.patchify_ = patch_indices(image_side, cfg.patch);
  Rng rng(mix_seed(cfg.seed, 0xC1A55));
  const std::size_t n_patches = (image_side / cfg.patch) * (image_side / cfg.patch);
  c.params_["w1"] = init_weight(rng, cfg.channels, cfg.patch * cfg.patch * 3);
  c.params_["b1"] = ag::Tensor::zeros({1, cfg.channels});
  c.params_["w2"] = init_weight(rng, cfg.hidden, n_patches * cfg.channels);
  c.params_["b2"] = ag::Tensor::zeros({1, cfg.hidden});
  for (auto a : data::kAttributes) {
    c.params_[head_name(a)] = init_weight(rng, data::class_count(a), cfg.hidden);
    c.params_[head_name(a) + ".b"] = ag::Tensor::zeros({1, data::class_count(a)});
  }
  return c;
}

std::array<ag::Tensor, 4> ConceptClassifier::logits(const ag::Tensor& image) const {
  if (image.shape() != ag::Shape{side_, side_, 3}) {
    throw DimensionError("classifier expects [" + std::to_string(side_) + ", " + std::to_string(side_) +
                         ", 3], got " + ag::shape_str(image.shape()));
  }
  const std::size_t n_patches = patchify_.size() / (cfg_.patch * cfg_.patch * 3);
  const ag::Tensor patches = ag::gather(image, patchify_, {n_patches, cfg_.patch * cfg_.patch * 3});
  const ag::Tensor h = ag::silu(
      ag::add(ag::linear(patches, params_.at("w1")), ag::repeat_rows(params_.at("b1"), n_patches)));
  const ag::Tensor flat = ag::reshape(h, {1, n_patches * cfg_.channels});
  const ag::Tensor z = ag::silu(ag::add(ag::linear(flat, params_.at("w2")), params_.at("b2")));
  std::array<ag::Tensor, 4> out;
  for (auto a : data::kAttributes) {
    out[static_cast<int>(a)] = ag::add(ag::linear(z, params_.at(head_name(a))), params_.at(head_name(a) + ".b"));
  }
  return out;
}

std::array<std::size_t, 4> ConceptClassifier::predict(const ag::Tensor& image) const {
  ag::NoGradGuard guard;
  const auto l = logits(image);
  std::array<std::size_t, 4> out{};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto d = l[k].data();
    out[k] = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
  }
  return out;
}

ag::Tensor ConceptClassifier::loss(const ag::Tensor& image, const data::Labels& labels) const {
  const auto l = logits(image);
  ag::Tensor total;
  for (auto a : data::kAttributes) {
    const std::size_t idx[] = {labels.get(a)};
    const ag::Tensor p = ag::gather(ag::softmax(l[static_cast<int>(a)], 1), idx, {1});
    const ag::Tensor ce = ag::neg(ag::log(ag::add_scalar(p, 1e-12)));
    total = total.defined() ? ag::add(total, ce) : ce;
  }
  return ag::sum(total);
}

std::vector<ag::Tensor> ConceptClassifier::parameters() const {
  std::vector<ag::Tensor> out;
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

bool ConceptClassifier::gated() const {
  if (heldout.size() != data::kAttributes.size()) return false;
  return std::all_of(heldout.begin(), heldout.end(), [&](const auto& kv) { return kv.second >= cfg_.gate; });
}

std::vector<std::uint8_t> ConceptClassifier::serialize() const {
  io::Writer w;
  w.bytes(kClassifierMagic, 4);
  w.u32(1);
  write_classifier_config(w, cfg_);
  w.u64(side_);
  w.u32(static_cast<std::uint32_t>(heldout.size()));
  for (const auto& [k, v] : heldout) {
    w.str(k);
    w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, t] : params_) {
    w.str(name);
    w.u64(t.dim(0));
    w.u64(t.dim(1));
    w.f64s(t.data());
  }
  w.u64(io::fnv1a(std::span<const std::uint8_t>(w.buffer())));
  return w.buffer();
}

ConceptClassifier ConceptClassifier::deserialize(std::span<const std::uint8_t> bytes) {
  io::Reader r(io::verified_body(bytes, "classifier"));
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kClassifierMagic)) throw FormatError("not a classifier file (bad magic)");
  if (const auto v = r.u32(); v != 1) throw VersionError("unsupported classifier version " + std::to_string(v));
  const auto cfg = read_classifier_config(r);
  const std::size_t side = r.u64();
  ConceptClassifier c = init(cfg, side);
  const auto n_acc = r.u32();
  for (std::uint32_t i = 0; i < n_acc; ++i) {
    std::string k = r.str();
    c.heldout[k] = r.f64();
  }
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::size_t rows = r.u64(), cols = r.u64();
    auto it = c.params_.find(name);
    if (it == c.params_.end() || it->second.shape() != ag::Shape{rows, cols}) {
      throw FormatError("unexpected classifier tensor '" + name + "'");
    }
    it->second = ag::Tensor({rows, cols}, r.f64s(rows * cols));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after classifier payload");
  return c;
}

void ConceptClassifier::save(const std::string& path) const { io::write_file(path, serialize()); }

ConceptClassifier ConceptClassifier::load(const std::string& path) {
  const auto bytes = io::read_file(path);
  return deserialize(bytes);
}

ConceptClassifier train_classifier(const data::CorpusManifest& manifest, const ClassifierConfig& cfg,
                                   bool enforce_gate) {
  const auto train = data::materialize(manifest, "train");
  const auto held = data::materialize(manifest, "eval");
  if (train.empty()) throw DataError("classifier needs a nonempty train split");
  if (cfg.batch_size == 0) throw ConfigError("classifier batch_size must be >= 1");
  ConceptClassifier clf = ConceptClassifier::init(cfg, manifest.image_side);
  for (auto& p : clf.params_) p.second.set_requires_grad(true);
  engine::AdamW opt(clf.parameters(), engine::AdamWConfig{.lr = cfg.lr});
  Rng rng(mix_seed(cfg.seed, 0x7EA1));
  std::vector<std::size_t> order(train.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      opt.zero_grad();
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      for (std::size_t k = b; k < end; ++k) {
        const auto& s = train[order[k]];
        ag::Tensor img = augment(s.image, cfg, rng);
        ag::backward(ag::scale(clf.loss(img, s.labels), 1.0 / static_cast<double>(end - b)));
      }
      opt.step();
    }
  }
  for (auto& p : clf.params_) {
    p.second.set_requires_grad(false);
    p.second.zero_grad();
  }

  const auto& scored = held.empty() ? train : held;
  std::array<std::size_t, 4> correct{};
  for (const auto& s : scored) {
    const auto pred = clf.predict(s.image);
    for (auto a : data::kAttributes) correct[static_cast<int>(a)] += pred[static_cast<int>(a)] == s.labels.get(a);
  }
  std::string failing;
  for (auto a : data::kAttributes) {
    const double acc = static_cast<double>(correct[static_cast<int>(a)]) / static_cast<double>(scored.size());
    clf.heldout[std::string(data::attribute_name(a))] = acc;
    if (acc < cfg.gate) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%s%s %.3f", failing.empty() ? "" : ", ",
                    std::string(data::attribute_name(a)).c_str(), acc);
      failing += buf;
    }
  }
  if (enforce_gate && !failing.empty()) {
    throw GateError("classifier below the " + std::to_string(cfg.gate) + " held-out gate (" + failing +
                    "); enlarge the corpus or raise the epoch count");
  }
  return clf;
}

data::WordLabel concept_label(std::string_view c_un) {
  const auto l = data::label_of_word(c_un);
  if (!l) throw CoverageError("'" + std::string(c_un) + "' is not a label of the toy world");
  return *l;
}

ag::Tensor sample_image(const engine::BaseModel& base, const Conditioning& cond, const std::string& prompt,
                        std::uint64_t seed, std::size_t num_steps) {
  const auto toks = model::tokenize(prompt, base.vocab, base.config.text_len).ids;
  model::ForwardOptions opts;
  if (!cond.zero_keyword.empty()) {
    const auto spans = attn::locate_spans(prompt, cond.zero_keyword, base.config.text_len);
    opts.zero_columns = attn::span_columns(spans);
  }
  return flow::euler_sample(base.config, base.params, cond.adapters, toks, flow::SamplerConfig{num_steps, seed}, opts);
}

std::vector<std::string> label_prompts(data::Attribute a, std::size_t index, std::size_t n, std::uint64_t seed) {
  if (index >= data::class_count(a)) throw IndexError("class index out of range");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    // Object attributes are asked of a lone object, so "the first object" is
    // never ambiguous in a generated image.
    const auto rel = a == data::Attribute::kRelation ? static_cast<data::Relation>(index) : data::Relation::kNone;
    auto scene = data::random_scene(rng, 32, rel);
    auto& o = scene.objects.front();
    switch (a) {
      case data::Attribute::kShape: o.shape = static_cast<data::ShapeKind>(index); break;
      case data::Attribute::kColor: o.color = static_cast<data::Color>(index); break;
      case data::Attribute::kTexture: o.texture = static_cast<data::Texture>(index); break;
      case data::Attribute::kRelation: break;
    }
    const std::size_t n_templates =
        scene.relation == data::Relation::kNone ? data::kSingleTemplates : data::kPairTemplates;
    // Template 0 leaves the texture unnamed.
    const std::size_t tmpl = a == data::Attribute::kTexture ? 1 + rng.index(n_templates - 1) : rng.index(n_templates);
    out.push_back(data::caption_with_template(scene, tmpl));
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  auto acc = [](const Accuracies& a) { return nlohmann::json{{"acc_e", a.acc_e}, {"acc_ir", a.acc_ir}, {"acc_g", a.acc_g}}; };
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    recs.push_back({{"group", r.group}, {"adapted", r.adapted}, {"prompt", r.prompt}, {"seed", r.seed},
                    {"expected", r.expected}, {"predicted", r.predicted}});
  }
  return nlohmann::json{{"concept", concept_word},
                        {"synonym", synonym},
                        {"attribute", attribute},
                        {"before", acc(before)},
                        {"after", acc(after)},
                        {"config_digest", io::hex64(config_digest)},
                        {"adapter_hash", io::hex64(adapter_hash)},
                        {"seed", measure.seed},
                        {"prompts_per_label", measure.prompts_per_label},
                        {"samples_per_prompt", measure.samples_per_prompt},
                        {"num_steps", measure.num_steps},
                        {"records", recs}};
}

std::uint64_t EvalReport::hash() const { return io::fnv1a(to_json().dump()); }

EvalReport measure(const engine::BaseModel& base, std::span<const lora::LoraAdapter> adapters,
                   const concepts::ConceptSpec& spec, const ConceptClassifier& classifier, const MeasureConfig& cfg) {
  if (cfg.samples_per_prompt == 0 || cfg.prompts_per_label == 0) throw EvalError("empty evaluation: zero samples requested");
  if (!classifier.gated()) throw GateError("classifier has not passed its held-out accuracy gate");
  const auto label = concept_label(spec.c_un);
  const auto attr_index = static_cast<int>(label.attribute);

  EvalReport rep;
  rep.concept_word = spec.c_un;
  rep.synonym = spec.c_syn;
  rep.attribute = std::string(data::attribute_name(label.attribute));
  rep.config_digest = base.config.digest();
  rep.measure = cfg;
  if (!adapters.empty()) {
    std::uint64_t h = io::fnv1a(std::string_view("adapters"));
    for (const auto& a : adapters) h = io::fnv1a(io::hex64(a.hash()), h);
    rep.adapter_hash = h;
  }

  struct Group {
    std::string name;
    std::vector<std::string> prompts;
    std::vector<std::size_t> expected;
  };
  std::vector<Group> groups(3);
  groups[0].name = "e";
  groups[0].prompts = label_prompts(label.attribute, label.index, cfg.prompts_per_label, mix_seed(cfg.seed, 1));
  groups[0].expected.assign(groups[0].prompts.size(), label.index);
  groups[1].name = "g";
  for (const auto& p : groups[0].prompts) groups[1].prompts.push_back(replace_word(p, spec.c_un, spec.c_syn));
  groups[1].expected = groups[0].expected;
  groups[2].name = "ir";
  for (std::size_t j = 0; j < data::class_count(label.attribute); ++j) {
    if (j == label.index) continue;
    if (label.attribute == data::Attribute::kRelation && j == static_cast<std::size_t>(data::Relation::kNone)) continue;
    for (const auto& p : label_prompts(label.attribute, j, cfg.prompts_per_label, mix_seed(cfg.seed, 100 + j))) {
      groups[2].prompts.push_back(p);
      groups[2].expected.push_back(j);
    }
  }

  std::array<std::array<std::size_t, 2>, 3> hits{}, total{};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t k = 0; k < groups[g].prompts.size(); ++k) {
      const auto& prompt = groups[g].prompts[k];
      for (std::size_t s = 0; s < cfg.samples_per_prompt; ++s) {
        // e and g share seeds prompt-for-prompt so the synonym is the only change.
        const std::uint64_t seed = mix_seed(cfg.seed, (g == 2 ? 1'000'000 : 0) + k * 1000 + s);
        for (int adapted = 0; adapted < 2; ++adapted) {
          SampleRecord rec{groups[g].name, adapted == 1, prompt, seed, groups[g].expected[k], 0};
          if (adapted == 1 && adapters.empty()) {
            rec.predicted = rep.records.back().predicted;
          } else {
            const Conditioning cond{adapted == 1 ? adapters : std::span<const lora::LoraAdapter>{}, {}};
            rec.predicted = classifier.predict(sample_image(base, cond, prompt, seed, cfg.num_steps))[attr_index];
          }
          hits[g][adapted] += rec.predicted == rec.expected;
          ++total[g][adapted];
          rep.records.push_back(std::move(rec));
        }
      }
    }
  }
  auto frac = [&](std::size_t g, int a) {
    return total[g][a] == 0 ? 0.0 : static_cast<double>(hits[g][a]) / static_cast<double>(total[g][a]);
  };
  rep.before = Accuracies{frac(0, 0), frac(2, 0), frac(1, 0)};
  rep.after = Accuracies{frac(0, 1), frac(2, 1), frac(1, 1)};
  return rep;
}

std::string AttackSpec::name() const {
  switch (kind) {
    case AttackKind::kMisspell: return "misspell:" + append;
    case AttackKind::kPrefixSuffix: return "prefix_suffix:" + prefix + ":" + suffix;
    case AttackKind::kRepeat: return "repeat:" + std::to_string(count);
  }
  return "?";
}

AttackSpec AttackSpec::parse(const std::string& text) {
  if (text.empty()) throw AttackSpecError("empty attack spec");
  std::vector<std::string> parts(1);
  for (char ch : text) {
    if (ch == ':') {
      parts.emplace_back();
    } else {
      parts.back() += ch;
    }
  }
  AttackSpec a;
  if (parts[0] == "misspell") {
    a.kind = AttackKind::kMisspell;
    if (parts.size() > 1) a.append = parts[1];
    if (a.append.empty() || parts.size() > 2) throw AttackSpecError("misspell takes one nonempty suffix: '" + text + "'");
  } else if (parts[0] == "prefix_suffix") {
    a.kind = AttackKind::kPrefixSuffix;
    if (parts.size() == 3) {
      a.prefix = parts[1];
      a.suffix = parts[2];
    } else if (parts.size() != 1) {
      throw AttackSpecError("prefix_suffix takes prefix and suffix: '" + text + "'");
    }
    if (a.prefix.empty() && a.suffix.empty()) throw AttackSpecError("prefix_suffix needs a nonempty affix");
  } else if (parts[0] == "repeat") {
    a.kind = AttackKind::kRepeat;
    if (parts.size() > 1) {
      try {
        a.count = std::stoul(parts[1]);
      } catch (const std::exception&) {
        throw AttackSpecError("repeat count must be a number: '" + text + "'");
      }
    }
    if (a.count < 1 || parts.size() > 2) throw AttackSpecError("repeat count must be >= 1: '" + text + "'");
  } else {
    throw AttackSpecError("unknown attack '" + parts[0] + "' (misspell|prefix_suffix|repeat)");
  }
  return a;
}

std::string apply_attack(const std::string& prompt, const std::string& keyword, const AttackSpec& spec,
                         std::size_t text_len) {
  if (model::split_words(prompt).empty()) throw AttackSpecError("cannot attack an empty prompt");
  const auto spans = attn::locate_spans(prompt, keyword, std::numeric_limits<std::size_t>::max());
  if (spans.empty()) throw AttackSpecError("'" + keyword + "' does not occur in '" + prompt + "'");
  auto key = model::split_words(keyword);
  std::string replacement;
  switch (spec.kind) {
    case AttackKind::kMisspell: {
      auto w = key;
      w.back() += spec.append;
      replacement = model::join_words(w);
      break;
    }
    case AttackKind::kPrefixSuffix: {
      auto w = key;
      w.front() = spec.prefix + w.front();
      w.back() += spec.suffix;
      replacement = model::join_words(w);
      break;
    }
    case AttackKind::kRepeat: {
      std::vector<std::string> w;
      for (std::size_t i = 0; i < spec.count; ++i) w.insert(w.end(), key.begin(), key.end());
      replacement = model::join_words(w);
      break;
    }
  }
  const std::string out = replace_word(prompt, keyword, replacement);
  if (model::split_words(out).size() > text_len) {
    throw AttackSpecError("attacked prompt '" + out + "' exceeds " + std::to_string(text_len) + " tokens");
  }
  return out;
}

const char* to_string(Defense d) {
  switch (d) {
    case Defense::kNone: return "none";
    case Defense::kAdapter: return "adapter";
    case Defense::kZeroColumns: return "zero_columns";
  }
  return "?";
}

std::vector<AttackResult> attack(const engine::BaseModel& base, std::span<const lora::LoraAdapter> adapters,
                                 const concepts::ConceptSpec& spec, const std::vector<AttackSpec>& attacks,
                                 const ConceptClassifier& classifier, const MeasureConfig& cfg,
                                 const std::vector<Defense>& defenses) {
  if (cfg.samples_per_prompt == 0 || cfg.prompts_per_label == 0) throw EvalError("empty attack run: zero samples requested");
  if (!classifier.gated()) throw GateError("classifier has not passed its held-out accuracy gate");
  const auto label = concept_label(spec.c_un);
  const auto prompts = label_prompts(label.attribute, label.index, cfg.prompts_per_label, mix_seed(cfg.seed, 1));
  std::vector<AttackResult> out;
  for (const auto& a : attacks) {
    AttackResult res;
    res.attack = a.name();
    for (const auto& p : prompts) res.prompts.push_back(apply_attack(p, spec.c_un, a, base.config.text_len));
    for (Defense d : defenses) {
      Conditioning cond;
      if (d == Defense::kAdapter) cond.adapters = adapters;
      if (d == Defense::kZeroColumns) cond.zero_keyword = spec.c_un;
      std::size_t hit = 0, n = 0;
      for (std::size_t k = 0; k < res.prompts.size(); ++k) {
        for (std::size_t s = 0; s < cfg.samples_per_prompt; ++s) {
          const std::uint64_t seed = mix_seed(cfg.seed, k * 1000 + s);
          const auto img = sample_image(base, cond, res.prompts[k], seed, cfg.num_steps);
          hit += classifier.predict(img)[static_cast<int>(label.attribute)] == label.index;
          ++n;
        }
      }
      res.asr[to_string(d)] = static_cast<double>(hit) / static_cast<double>(n);
    }
    out.push_back(std::move(res));
  }
  return out;
}

std::string format_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %-10s %18s %18s %18s\n", "Concept", "Attribute", "Acc_e (lower)",
                "Acc_ir (higher)", "Acc_g (lower)");
  os << line;
  auto cell = [](double b, double a) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%5.1f -> %5.1f", 100.0 * b, 100.0 * a);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-12s %-10s %18s %18s %18s\n", r.concept_word.c_str(), r.attribute.c_str(),
                  cell(r.before.acc_e, r.after.acc_e).c_str(), cell(r.before.acc_ir, r.after.acc_ir).c_str(),
                  cell(r.before.acc_g, r.after.acc_g).c_str());
    os << line;
  }
  os << "(percent; base model -> with adapter)\n";
  return os.str();
}

}  // namespace flowerase::eval
