#include "flowerase/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>

#include "flowerase/binary_io.hpp"
#include "flowerase/error.hpp"

namespace flowerase::data {
namespace {

struct SynonymPair {
  std::string_view canonical;
  std::string_view synonym;
};

// In-world synonyms. Captions swap a canonical word for its synonym at random,
// so the pretrained model learns both as the same concept.
constexpr std::array<SynonymPair, 15> kSynonyms = {{
    {"red", "crimson"},     {"green", "emerald"},  {"blue", "azure"},   {"yellow", "golden"},
    {"white", "ivory"},     {"circle", "disc"},    {"square", "box"},   {"triangle", "wedge"},
    {"cross", "plus"},      {"star", "asterisk"},  {"solid", "plain"},  {"striped", "banded"},
    {"beside", "near"},     {"above", "over"},     {"inside", "within"},
}};

constexpr std::array<std::string_view, 3> kFillerWords = {"a", "photo", "of"};
constexpr std::array<std::string_view, 2> kSingleExtra = {"that", "is"};

std::string sub_word(std::string_view canonical, Rng* rng, double p) {
  if (rng != nullptr && rng->uniform() < p) return std::string(world_synonym(canonical));
  return std::string(canonical);
}

bool inside_shape(ShapeKind kind, double dx, double dy, double r) {
  switch (kind) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeKind::kTriangle:
      return dy >= -r && dy <= 0.8 * r && std::abs(dx) <= 0.6 * (dy + r);
    case ShapeKind::kCross: {
      const double arm = r / 3.0;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
    case ShapeKind::kStar: {
      const double rho = std::sqrt(dx * dx + dy * dy);
      const double theta = std::atan2(dx, -dy);
      const double c = std::cos(2.5 * theta);
      return rho <= r * (0.42 + 0.58 * c * c);
    }
  }
  return false;
}

std::array<double, 3> rgb(Color c) {
  switch (c) {
    case Color::kRed: return {1, -1, -1};
    case Color::kGreen: return {-1, 1, -1};
    case Color::kBlue: return {-1, -1, 1};
    case Color::kYellow: return {1, 1, -1};
    case Color::kWhite: return {1, 1, 1};
  }
  return {-1, -1, -1};
}

nlohmann::json object_json(const Object& o) {
  return {{"shape", kShapeWords[static_cast<int>(o.shape)]},
          {"color", kColorWords[static_cast<int>(o.color)]},
          {"texture", kTextureWords[static_cast<int>(o.texture)]},
          {"cx", o.cx},
          {"cy", o.cy},
          {"radius", o.radius},
          {"hollow", o.hollow}};
}

template <std::size_t N>
int index_of(const std::array<std::string_view, N>& words, const std::string& w) {
  for (std::size_t i = 0; i < N; ++i)
    if (words[i] == w) return static_cast<int>(i);
  throw FormatError("unknown label word '" + w + "'");
}

Object object_from_json(const nlohmann::json& j) {
  Object o;
  o.shape = static_cast<ShapeKind>(index_of(kShapeWords, j.at("shape").get<std::string>()));
  o.color = static_cast<Color>(index_of(kColorWords, j.at("color").get<std::string>()));
  o.texture = static_cast<Texture>(index_of(kTextureWords, j.at("texture").get<std::string>()));
  o.cx = j.at("cx").get<int>();
  o.cy = j.at("cy").get<int>();
  o.radius = j.at("radius").get<int>();
  o.hollow = j.at("hollow").get<bool>();
  return o;
}

}  // namespace

std::string_view attribute_name(Attribute a) {
  switch (a) {
    case Attribute::kShape: return "shape";
    case Attribute::kColor: return "color";
    case Attribute::kTexture: return "texture";
    case Attribute::kRelation: return "relation";
  }
  return "?";
}

std::size_t class_count(Attribute a) {
  switch (a) {
    case Attribute::kShape: return kShapeWords.size();
    case Attribute::kColor: return kColorWords.size();
    case Attribute::kTexture: return kTextureWords.size();
    case Attribute::kRelation: return kRelationWords.size();
  }
  return 0;
}

std::string_view class_word(Attribute a, std::size_t i) {
  switch (a) {
    case Attribute::kShape: return kShapeWords.at(i);
    case Attribute::kColor: return kColorWords.at(i);
    case Attribute::kTexture: return kTextureWords.at(i);
    case Attribute::kRelation: return kRelationWords.at(i);
  }
  return "?";
}

std::optional<WordLabel> label_of_word(std::string_view word) {
  std::string_view canonical = word;
  for (const auto& s : kSynonyms)
    if (s.synonym == word) canonical = s.canonical;
  for (Attribute a : kAttributes) {
    for (std::size_t i = 0; i < class_count(a); ++i) {
      if (class_word(a, i) == canonical && canonical != "none") return WordLabel{a, i};
    }
  }
  return std::nullopt;
}

std::string_view world_synonym(std::string_view canonical) {
  for (const auto& s : kSynonyms)
    if (s.canonical == canonical) return s.synonym;
  return canonical;
}

std::size_t Labels::get(Attribute a) const {
  switch (a) {
    case Attribute::kShape: return shape;
    case Attribute::kColor: return color;
    case Attribute::kTexture: return texture;
    case Attribute::kRelation: return relation;
  }
  return 0;
}

Labels labels_of(const SceneSpec& spec) {
  if (spec.objects.empty()) throw SpecError("scene has no objects to label");
  const Object& o = spec.objects.front();
  return Labels{static_cast<std::size_t>(o.shape), static_cast<std::size_t>(o.color),
                static_cast<std::size_t>(o.texture), static_cast<std::size_t>(spec.relation)};
}

void SceneSpec::validate() const {
  if (objects.size() > 2) throw SpecError("at most two objects per scene");
  const int side = static_cast<int>(image_side);
  for (const auto& o : objects) {
    if (o.radius <= 0 || o.cx - o.radius < 0 || o.cy - o.radius < 0 || o.cx + o.radius > side ||
        o.cy + o.radius > side) {
      throw SpecError("object leaves the canvas");
    }
  }
  if (objects.empty()) {
    if (relation != Relation::kNone) throw SpecError("relation without objects");
    return;
  }
  if (relation == Relation::kNone) {
    if (objects.size() != 1) throw SpecError("relation 'none' requires exactly one object");
    return;
  }
  if (objects.size() != 2) throw SpecError("relation requires exactly two objects");
  const Object& a = objects[0];
  const Object& b = objects[1];
  const int dx = b.cx - a.cx, dy = b.cy - a.cy;
  switch (relation) {
    case Relation::kBeside:
      if (std::abs(dy) > 3 || std::abs(dx) < a.radius + b.radius) throw SpecError("objects are not side by side");
      break;
    case Relation::kAbove:
      if (std::abs(dx) > 3 || dy < a.radius + b.radius) throw SpecError("first object is not above the second");
      break;
    case Relation::kInside:
      if (!a.hollow || std::sqrt(double(dx * dx + dy * dy)) + b.radius > a.radius - 2) {
        throw SpecError("second object does not fit inside the first");
      }
      break;
    case Relation::kNone:
      break;
  }
}

SceneSpec layout_scene(Relation relation, const std::vector<Object>& attrs, std::size_t image_side, Rng* jitter_rng,
                       int jitter) {
  const double u = static_cast<double>(image_side) / 32.0;
  auto j = [&]() { return jitter_rng ? static_cast<int>(jitter_rng->index(2 * jitter + 1)) - jitter : 0; };
  auto px = [&](double v) { return static_cast<int>(std::lround(v * u)); };
  SceneSpec s;
  s.image_side = image_side;
  s.relation = relation;
  const std::size_t need = relation == Relation::kNone ? 1 : 2;
  if (attrs.size() < need) throw SpecError("layout needs " + std::to_string(need) + " objects");
  std::vector<Object> obj(attrs.begin(), attrs.begin() + static_cast<std::ptrdiff_t>(need));
  switch (relation) {
    case Relation::kNone: {
      const int dx = j(), dy = j();
      obj[0].cx = px(16) + dx, obj[0].cy = px(16) + dy, obj[0].radius = px(9);
      break;
    }
    case Relation::kBeside: {
      const int dy = j();
      obj[0].cx = px(8) + j(), obj[0].cy = px(16) + dy, obj[0].radius = px(6);
      obj[1].cx = px(24) + j(), obj[1].cy = px(16) + dy, obj[1].radius = px(6);
      break;
    }
    case Relation::kAbove: {
      const int dx = j();
      obj[0].cx = px(16) + dx, obj[0].cy = px(8) + j(), obj[0].radius = px(6);
      obj[1].cx = px(16) + dx, obj[1].cy = px(24) + j(), obj[1].radius = px(6);
      break;
    }
    case Relation::kInside: {
      const int dx = j(), dy = j();
      obj[0].cx = px(16) + dx, obj[0].cy = px(16) + dy, obj[0].radius = px(14), obj[0].hollow = true;
      obj[1].cx = px(16) + dx, obj[1].cy = px(16) + dy, obj[1].radius = px(5);
      break;
    }
  }
  s.objects = std::move(obj);
  s.validate();
  return s;
}

SceneSpec random_scene(Rng& rng, std::size_t image_side, std::optional<Relation> relation) {
  const Relation rel = relation ? *relation : static_cast<Relation>(rng.index(kRelationWords.size()));
  std::vector<Object> attrs(2);
  for (auto& o : attrs) {
    o.shape = static_cast<ShapeKind>(rng.index(kShapeWords.size()));
    o.color = static_cast<Color>(rng.index(kColorWords.size()));
    o.texture = static_cast<Texture>(rng.index(kTextureWords.size()));
  }
  return layout_scene(rel, attrs, image_side, &rng);
}

ag::Tensor render(const SceneSpec& spec) {
  spec.validate();
  const std::size_t s = spec.image_side;
  std::vector<double> px(s * s * 3, -1.0);
  for (const auto& o : spec.objects) {
    const auto col = rgb(o.color);
    const double r = static_cast<double>(o.radius);
    const double ring = std::max(1.0, 2.0 * static_cast<double>(s) / 32.0);
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - o.cx;
        const double dy = static_cast<double>(y) + 0.5 - o.cy;
        bool in = inside_shape(o.shape, dx, dy, r);
        if (in && o.hollow) in = !inside_shape(o.shape, dx, dy, r - ring);
        if (!in) continue;
        if (o.texture == Texture::kStriped && ((y / 2) % 2 == 1)) continue;
        for (std::size_t k = 0; k < 3; ++k) px[(y * s + x) * 3 + k] = col[k];
      }
    }
  }
  return ag::Tensor({s, s, 3}, std::move(px));
}

namespace {

std::string describe(const Object& o, bool always_texture, Rng* rng, double p) {
  std::string out = sub_word(kColorWords[static_cast<int>(o.color)], rng, p);
  if (always_texture || o.texture == Texture::kStriped) {
    out += " " + sub_word(kTextureWords[static_cast<int>(o.texture)], rng, p);
  }
  out += " " + sub_word(kShapeWords[static_cast<int>(o.shape)], rng, p);
  return out;
}

std::string fill(const SceneSpec& spec, std::size_t tmpl, Rng* rng, double p) {
  if (spec.objects.empty()) return "";
  const Object& a = spec.objects[0];
  if (spec.relation == Relation::kNone) {
    switch (tmpl % kSingleTemplates) {
      case 0: return "a " + describe(a, false, rng, p);
      case 1: return "a photo of a " + describe(a, true, rng, p);
      default: {
        const std::string tex = sub_word(kTextureWords[static_cast<int>(a.texture)], rng, p);
        const std::string shp = sub_word(kShapeWords[static_cast<int>(a.shape)], rng, p);
        const std::string col = sub_word(kColorWords[static_cast<int>(a.color)], rng, p);
        return "a " + tex + " " + shp + " that is " + col;
      }
    }
  }
  const Object& b = spec.objects[1];
  const std::string rel = sub_word(kRelationWords[static_cast<int>(spec.relation)], rng, p);
  const std::string head = (tmpl % kPairTemplates) == 0 ? "a " : "a photo of a ";
  return head + describe(a, false, rng, p) + " " + rel + " a " + describe(b, false, rng, p);
}

}  // namespace

std::string caption_with_template(const SceneSpec& spec, std::size_t template_index) {
  return fill(spec, template_index, nullptr, 0.0);
}

std::string caption(const SceneSpec& spec, std::uint64_t seed, double synonym_prob) {
  Rng rng(seed);
  const std::size_t n = spec.relation == Relation::kNone ? kSingleTemplates : kPairTemplates;
  const std::size_t tmpl = rng.index(n);
  return fill(spec, tmpl, &rng, synonym_prob);
}

std::vector<std::string> world_words() {
  std::vector<std::string> out;
  for (auto w : kFillerWords) out.emplace_back(w);
  for (auto w : kSingleExtra) out.emplace_back(w);
  for (auto w : kColorWords) out.emplace_back(w);
  for (auto w : kTextureWords) out.emplace_back(w);
  for (auto w : kShapeWords) out.emplace_back(w);
  for (std::size_t i = 1; i < kRelationWords.size(); ++i) out.emplace_back(kRelationWords[i]);
  for (const auto& s : kSynonyms) out.emplace_back(s.synonym);
  return out;
}

model::Vocabulary world_vocabulary() { return model::Vocabulary::from_words(world_words()); }

std::uint64_t CorpusManifest::hash() const {
  std::uint64_t h = io::fnv1a("manifest/v1:" + std::to_string(seed) + ":" + std::to_string(image_side));
  for (const auto& r : records) {
    nlohmann::json j = {{"image", r.image_path}, {"caption", r.caption}, {"split", r.split},
                        {"caption_seed", r.caption_seed}};
    for (const auto& o : r.spec.objects) j["objects"].push_back(object_json(o));
    j["relation"] = kRelationWords[static_cast<int>(r.spec.relation)];
    h = io::fnv1a(j.dump(), h);
  }
  return h;
}

void CorpusManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  out << nlohmann::json{{"format", "flowerase-manifest"}, {"version", 1}, {"seed", seed},
                        {"image_side", image_side},       {"count", records.size()}}
             .dump()
      << '\n';
  for (const auto& r : records) {
    const Labels l = labels_of(r.spec);
    nlohmann::json j = {{"image", r.image_path},
                        {"caption", r.caption},
                        {"caption_seed", r.caption_seed},
                        {"split", r.split},
                        {"relation", kRelationWords[static_cast<int>(r.spec.relation)]},
                        {"labels",
                         {{"shape", kShapeWords[l.shape]},
                          {"color", kColorWords[l.color]},
                          {"texture", kTextureWords[l.texture]},
                          {"relation", kRelationWords[l.relation]}}}};
    j["objects"] = nlohmann::json::array();
    for (const auto& o : r.spec.objects) j["objects"].push_back(object_json(o));
    out << j.dump() << '\n';
  }
}

CorpusManifest CorpusManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest '" + path + "'");
  CorpusManifest m;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty manifest '" + path + "'");
  try {
    const auto head = nlohmann::json::parse(line);
    if (head.value("format", "") != "flowerase-manifest") throw FormatError("missing manifest header");
    if (head.at("version").get<int>() != 1) throw VersionError("unsupported manifest version");
    m.seed = head.at("seed").get<std::uint64_t>();
    m.image_side = head.at("image_side").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      Record r;
      r.image_path = j.at("image").get<std::string>();
      r.caption = j.at("caption").get<std::string>();
      r.caption_seed = j.at("caption_seed").get<std::uint64_t>();
      r.split = j.at("split").get<std::string>();
      r.spec.image_side = m.image_side;
      r.spec.relation = static_cast<Relation>(index_of(kRelationWords, j.at("relation").get<std::string>()));
      for (const auto& o : j.at("objects")) r.spec.objects.push_back(object_from_json(o));
      r.spec.validate();
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest '" + path + "': " + e.what());
  }
  return m;
}

CorpusManifest make_manifest(std::size_t n, std::uint64_t seed, std::size_t image_side) {
  if (n == 0) throw DataError("corpus size must be >= 1");
  CorpusManifest m;
  m.seed = seed;
  m.image_side = image_side;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng split_rng(mix_seed(seed, 0xC0FFEE));
  split_rng.shuffle(perm.begin(), perm.end());
  std::vector<bool> is_eval(n, false);
  const std::size_t n_eval = n / 5;
  for (std::size_t k = n - n_eval; k < n; ++k) is_eval[perm[k]] = true;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    Record r;
    r.spec = random_scene(rng, image_side, static_cast<Relation>(i % kRelationWords.size()));
    r.caption_seed = mix_seed(seed ^ 0xCA97105EULL, i);
    r.caption = caption(r.spec, r.caption_seed);
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.feim", i);
    r.image_path = name;
    r.split = is_eval[i] ? "eval" : "train";
    m.records.push_back(std::move(r));
  }
  return m;
}

CorpusManifest generate_corpus(std::size_t n, std::uint64_t seed, const std::string& out_dir,
                               std::size_t image_side) {
  namespace fs = std::filesystem;
  CorpusManifest m = make_manifest(n, seed, image_side);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw DataError("cannot create '" + out_dir + "': " + ec.message());
  for (const auto& r : m.records) save_image(render(r.spec), (fs::path(out_dir) / r.image_path).string());
  world_vocabulary().save((fs::path(out_dir) / "vocab.txt").string());
  m.save((fs::path(out_dir) / "manifest.jsonl").string());
  return m;
}

std::vector<Sample> materialize(const CorpusManifest& manifest, std::string_view split) {
  std::vector<Sample> out;
  for (const auto& r : manifest.records) {
    if (!split.empty() && r.split != split) continue;
    out.push_back(Sample{render(r.spec), r.caption, labels_of(r.spec)});
  }
  return out;
}

void save_image(const ag::Tensor& image, const std::string& path) {
  if (image.rank() != 3) throw DimensionError("image must be [h, w, c], got " + ag::shape_str(image.shape()));
  io::Writer w;
  w.bytes(kImageMagic, 4);
  w.u32(1);
  for (std::size_t i = 0; i < 3; ++i) w.u32(static_cast<std::uint32_t>(image.dim(i)));
  w.f64s(image.data());
  io::write_file(path, w.buffer());
}

ag::Tensor load_image(const std::string& path) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kImageMagic)) throw FormatError("'" + path + "' is not an image blob");
  if (const auto v = r.u32(); v != 1) throw VersionError("unsupported image blob version " + std::to_string(v));
  const std::size_t h = r.u32(), w = r.u32(), c = r.u32();
  auto data = r.f64s(h * w * c);
  if (r.remaining() != 0) throw FormatError("trailing bytes in image blob");
  return ag::Tensor({h, w, c}, std::move(data));
}

void write_ppm(const ag::Tensor& image, const std::string& path) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("PPM export needs [h, w, 3]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (double v : image.data()) {
    const double c = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c))));
  }
}

}  // namespace flowerase::data
