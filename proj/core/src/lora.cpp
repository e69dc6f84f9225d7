#include "flowerase/lora.hpp"

#include <algorithm>
#include <cmath>

#include "flowerase/binary_io.hpp"
#include "flowerase/error.hpp"
#include "flowerase/rng.hpp"

namespace flowerase::lora {

std::vector<std::string> default_targets(std::size_t num_blocks) {
  std::vector<std::string> names;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    names.push_back("blocks." + std::to_string(b) + ".add_q_proj");
    names.push_back("blocks." + std::to_string(b) + ".add_k_proj");
  }
  return names;
}

LoraAdapter LoraAdapter::create(const std::vector<TargetShape>& targets, std::size_t rank, double alpha,
                                std::uint64_t seed, std::uint64_t config_digest) {
  if (rank == 0) throw ConfigError("LoRA rank must be >= 1");
  LoraTerm term;
  term.rank = rank;
  term.alpha = alpha;
  Rng rng(seed);
  for (const auto& t : targets) {
    std::vector<double> a(rank * t.in);
    const double sd = 1.0 / std::sqrt(static_cast<double>(t.in));
    for (auto& v : a) v = sd * rng.normal();
    term.pairs[t.name] = LoraPair{ag::Tensor({rank, t.in}, std::move(a), true),
                                  ag::Tensor::zeros({t.out, rank}, true)};
  }
  LoraAdapter out;
  out.terms_.push_back(std::move(term));
  out.config_digest_ = config_digest;
  return out;
}

LoraAdapter from_terms(std::vector<LoraTerm> terms, std::uint64_t digest) {
  LoraAdapter out;
  out.terms_ = std::move(terms);
  out.config_digest_ = digest;
  return out;
}

bool LoraAdapter::targets(const std::string& name) const {
  return std::any_of(terms_.begin(), terms_.end(), [&](const LoraTerm& t) { return t.pairs.count(name) > 0; });
}

std::vector<std::string> LoraAdapter::target_names() const {
  std::vector<std::string> names;
  for (const auto& t : terms_)
    for (const auto& [n, _] : t.pairs)
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  std::sort(names.begin(), names.end());
  return names;
}

ag::Tensor LoraAdapter::delta(const std::string& name) const {
  ag::Tensor total;
  for (const auto& term : terms_) {
    auto it = term.pairs.find(name);
    if (it == term.pairs.end()) continue;
    const double s = term.weight * term.alpha / static_cast<double>(term.rank);
    ag::Tensor d = ag::scale(ag::matmul(it->second.b, it->second.a), s);
    total = total.defined() ? ag::add(total, d) : d;
  }
  if (!total.defined()) throw TargetingError("'" + name + "' is not an adapter target");
  return total;
}

std::vector<ag::Tensor> LoraAdapter::parameters() const {
  std::vector<ag::Tensor> out;
  for (const auto& term : terms_) {
    for (const auto& [_, pair] : term.pairs) {
      out.push_back(pair.a);
      out.push_back(pair.b);
    }
  }
  return out;
}

void LoraAdapter::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.set_requires_grad(on);
}

LoraAdapter LoraAdapter::clone() const {
  LoraAdapter out;
  out.config_digest_ = config_digest_;
  for (const auto& term : terms_) {
    LoraTerm t = term;
    for (auto& [_, pair] : t.pairs) {
      pair.a = pair.a.clone();
      pair.b = pair.b.clone();
    }
    out.terms_.push_back(std::move(t));
  }
  return out;
}

std::uint64_t LoraAdapter::hash() const {
  const auto bytes = serialize(*this);
  return io::fnv1a(std::span<const std::uint8_t>(bytes));
}

ag::Tensor apply(const ag::Tensor& base_weight, const LoraAdapter& adapter, const std::string& name) {
  ag::Tensor d = adapter.delta(name);
  if (d.shape() != base_weight.shape()) {
    throw DimensionError("adapter delta " + ag::shape_str(d.shape()) + " does not match weight " +
                         ag::shape_str(base_weight.shape()) + " for '" + name + "'");
  }
  return ag::add(base_weight, d);
}

const char* to_string(MergeMode mode) {
  return mode == MergeMode::kNormalized ? "normalized" : "unnormalized";
}

MergeMode merge_mode_from_string(const std::string& s) {
  if (s == "normalized") return MergeMode::kNormalized;
  if (s == "unnormalized") return MergeMode::kUnnormalized;
  throw ConfigError("unknown merge mode '" + s + "' (expected normalized|unnormalized)");
}

MergeSpec MergeSpec::make(std::vector<LoraAdapter> adapters, MergeMode mode) {
  MergeSpec spec;
  const double w = mode == MergeMode::kNormalized ? 1.0 / static_cast<double>(adapters.size()) : 1.0;
  spec.weights.assign(adapters.size(), w);
  spec.adapters = std::move(adapters);
  spec.mode = mode;
  return spec;
}

LoraAdapter merge(const MergeSpec& spec) {
  if (spec.adapters.empty()) throw CompositionError("merge of zero adapters");
  if (spec.weights.size() != spec.adapters.size()) {
    throw CompositionError("merge has " + std::to_string(spec.adapters.size()) + " adapters but " +
                           std::to_string(spec.weights.size()) + " weights");
  }
  const auto names = spec.adapters.front().target_names();
  const auto digest = spec.adapters.front().config_digest();
  std::vector<LoraTerm> terms;
  for (std::size_t i = 0; i < spec.adapters.size(); ++i) {
    const auto& ad = spec.adapters[i];
    if (ad.target_names() != names) throw CompositionError("adapter " + std::to_string(i) + " has different targets");
    if (ad.config_digest() != digest) throw CompositionError("adapter " + std::to_string(i) + " was trained for a different model config");
    const LoraAdapter copy = ad.clone();
    for (const auto& term : copy.terms()) {
      LoraTerm t = term;
      t.weight *= spec.weights[i];
      for (auto& [_, pair] : t.pairs) {
        pair.a.set_requires_grad(false);
        pair.b.set_requires_grad(false);
      }
      terms.push_back(std::move(t));
    }
  }
  return from_terms(std::move(terms), digest);
}

// Layout: magic, version u32, config digest u64, term count u32, then per term
// {weight f64, rank u32, alpha f64, pair count u32, per pair {name, A rows/cols
// u32, B rows/cols u32, A f64s, B f64s}}, then an FNV-1a checksum u64.
std::vector<std::uint8_t> serialize(const LoraAdapter& adapter) {
  io::Writer w;
  w.bytes(kAdapterMagic, 4);
  w.u32(kAdapterVersion);
  w.u64(adapter.config_digest());
  w.u32(static_cast<std::uint32_t>(adapter.terms().size()));
  for (const auto& term : adapter.terms()) {
    w.f64(term.weight);
    w.u32(static_cast<std::uint32_t>(term.rank));
    w.f64(term.alpha);
    w.u32(static_cast<std::uint32_t>(term.pairs.size()));
    for (const auto& [name, pair] : term.pairs) {
      w.str(name);
      w.u32(static_cast<std::uint32_t>(pair.a.dim(0)));
      w.u32(static_cast<std::uint32_t>(pair.a.dim(1)));
      w.u32(static_cast<std::uint32_t>(pair.b.dim(0)));
      w.u32(static_cast<std::uint32_t>(pair.b.dim(1)));
      w.f64s(pair.a.data());
      w.f64s(pair.b.data());
    }
  }
  w.u64(io::fnv1a(std::span<const std::uint8_t>(w.buffer())));
  return w.buffer();
}

LoraAdapter deserialize(std::span<const std::uint8_t> bytes) {
  io::Reader r(io::verified_body(bytes, "adapter"));
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kAdapterMagic)) throw FormatError("not an adapter file (bad magic)");
  const auto version = r.u32();
  if (version != kAdapterVersion) {
    throw VersionError("unsupported adapter format version " + std::to_string(version));
  }
  const auto digest = r.u64();
  const auto n_terms = r.u32();
  std::vector<LoraTerm> terms;
  for (std::uint32_t i = 0; i < n_terms; ++i) {
    LoraTerm t;
    t.weight = r.f64();
    t.rank = r.u32();
    t.alpha = r.f64();
    const auto n_pairs = r.u32();
    for (std::uint32_t j = 0; j < n_pairs; ++j) {
      std::string name = r.str();
      const std::size_t ar = r.u32(), ac = r.u32(), br = r.u32(), bc = r.u32();
      if (ar != t.rank || bc != t.rank) throw FormatError("factor shapes disagree with rank for '" + name + "'");
      auto a = r.f64s(ar * ac);
      auto b = r.f64s(br * bc);
      t.pairs[name] = LoraPair{ag::Tensor({ar, ac}, std::move(a)), ag::Tensor({br, bc}, std::move(b))};
    }
    terms.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after adapter payload");
  return from_terms(std::move(terms), digest);
}

void save(const LoraAdapter& adapter, const std::string& path) { io::write_file(path, serialize(adapter)); }

LoraAdapter load(const std::string& path) {
  const auto bytes = io::read_file(path);
  return deserialize(bytes);
}

}  // namespace flowerase::lora
