#include "flowerase/checkpoint.hpp"

#include <algorithm>

#include "flowerase/binary_io.hpp"
#include "flowerase/error.hpp"

namespace flowerase::engine {

std::vector<std::uint8_t> serialize_model(const BaseModel& m) {
  io::Writer w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelVersion);
  w.u64(m.config.digest());
  nlohmann::json cj = m.config;
  w.str(cj.dump());
  w.u32(static_cast<std::uint32_t>(m.vocab.size()));
  for (const auto& word : m.vocab.words()) w.str(word);
  w.u32(static_cast<std::uint32_t>(m.params.tensors().size()));
  for (const auto& [name, t] : m.params.tensors()) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    w.f64s(t.data());
  }
  w.u64(m.loss_history.size());
  w.f64s(m.loss_history);
  w.u64(io::fnv1a(std::span<const std::uint8_t>(w.buffer())));
  return w.buffer();
}

BaseModel deserialize_model(std::span<const std::uint8_t> bytes) {
  // Checksum first so corruption is reported as such rather than as a parse error.
  io::Reader r(io::verified_body(bytes, "model"));
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kModelMagic)) throw FormatError("not a model file (bad magic)");
  if (const auto v = r.u32(); v != kModelVersion) throw VersionError("unsupported model format version " + std::to_string(v));
  BaseModel m;
  const auto digest = r.u64();
  try {
    m.config = nlohmann::json::parse(r.str()).get<model::ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config block: ") + e.what());
  }
  const auto n_words = r.u32();
  std::vector<std::string> words;
  for (std::uint32_t i = 0; i < n_words; ++i) words.push_back(r.str());
  if (words.size() < 3) throw FormatError("vocabulary lacks reserved tokens");
  m.vocab = model::Vocabulary::from_words(std::vector<std::string>(words.begin() + 3, words.end()));
  if (m.vocab.words() != words) throw FormatError("vocabulary reserved tokens out of order");
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    ag::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    auto data = r.f64s(ag::numel_of(shape));
    m.params.set(name, ag::Tensor(std::move(shape), std::move(data)));
  }
  const auto hist = r.u64();
  m.loss_history = r.f64s(hist);
  if (r.remaining() != 0) throw FormatError("trailing bytes after model payload");
  if (digest != m.config.digest()) throw DigestMismatchError("model header digest disagrees with its config");
  m.config.validate();
  return m;
}

void save_model(const BaseModel& m, const std::string& path) { io::write_file(path, serialize_model(m)); }

BaseModel load_model(const std::string& path) {
  const auto bytes = io::read_file(path);
  return deserialize_model(bytes);
}

}  // namespace flowerase::engine
