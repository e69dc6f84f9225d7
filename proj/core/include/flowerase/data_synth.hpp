#pragma once

// Closed toy world of captioned images. Shapes play the role of entities,
// colors and textures of abstractions, spatial relations of relationships.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flowerase/autograd.hpp"
#include "flowerase/rng.hpp"
#include "flowerase/toymodel.hpp"

namespace flowerase::data {

enum class ShapeKind : int { kCircle, kSquare, kTriangle, kCross, kStar };
enum class Color : int { kRed, kGreen, kBlue, kYellow, kWhite };
enum class Texture : int { kSolid, kStriped };
enum class Relation : int { kNone, kBeside, kAbove, kInside };

inline constexpr std::array<std::string_view, 5> kShapeWords = {"circle", "square", "triangle", "cross", "star"};
inline constexpr std::array<std::string_view, 5> kColorWords = {"red", "green", "blue", "yellow", "white"};
inline constexpr std::array<std::string_view, 2> kTextureWords = {"solid", "striped"};
inline constexpr std::array<std::string_view, 4> kRelationWords = {"none", "beside", "above", "inside"};

/// Attribute families the classifier predicts, one head each.
enum class Attribute : int { kShape, kColor, kTexture, kRelation };
inline constexpr std::array<Attribute, 4> kAttributes = {Attribute::kShape, Attribute::kColor, Attribute::kTexture,
                                                         Attribute::kRelation};
std::string_view attribute_name(Attribute a);
std::size_t class_count(Attribute a);
std::string_view class_word(Attribute a, std::size_t index);

/// Which attribute family and class a caption word names (canonical words
/// and their in-world synonyms both resolve).
struct WordLabel {
  Attribute attribute;
  std::size_t index;
};
std::optional<WordLabel> label_of_word(std::string_view word);

/// The corpus synonym used for a canonical label word ("red" -> "crimson").
std::string_view world_synonym(std::string_view canonical);

struct Object {
  ShapeKind shape = ShapeKind::kCircle;
  Color color = Color::kRed;
  Texture texture = Texture::kSolid;
  int cx = 16;
  int cy = 16;
  int radius = 9;
  bool hollow = false;  // outline only (outer object of an "inside" pair)
};

struct SceneSpec {
  std::vector<Object> objects;
  Relation relation = Relation::kNone;
  std::size_t image_side = 32;

  /// Throws SpecError when the layout contradicts the relation.
  void validate() const;
};

/// Ground-truth classes: shape/color/texture of the first object plus the relation.
struct Labels {
  std::size_t shape = 0, color = 0, texture = 0, relation = 0;
  std::size_t get(Attribute a) const;
};
Labels labels_of(const SceneSpec& spec);

/// Canonical layout for a relation; jitter shifts objects by up to ±jitter pixels.
SceneSpec layout_scene(Relation relation, const std::vector<Object>& attrs, std::size_t image_side, Rng* jitter_rng,
                       int jitter = 1);
SceneSpec random_scene(Rng& rng, std::size_t image_side, std::optional<Relation> relation = std::nullopt);

/// Rasterizes to [side, side, 3] with values in [-1, 1]; background is -1.
ag::Tensor render(const SceneSpec& spec);

inline constexpr std::size_t kSingleTemplates = 3;
inline constexpr std::size_t kPairTemplates = 2;

/// Deterministic template fill, canonical words only.
std::string caption_with_template(const SceneSpec& spec, std::size_t template_index);
/// Template and per-word synonym substitution both drawn from `seed`.
std::string caption(const SceneSpec& spec, std::uint64_t seed, double synonym_prob = 0.25);

/// Every word any caption can contain.
std::vector<std::string> world_words();
model::Vocabulary world_vocabulary();

struct Record {
  std::string image_path;  // relative to the manifest directory
  std::string caption;
  std::uint64_t caption_seed = 0;
  std::string split;  // "train" | "eval"
  SceneSpec spec;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::size_t image_side = 32;
  std::vector<Record> records;

  std::uint64_t hash() const;
  /// JSON-lines: a header object, then one object per record.
  void save(const std::string& path) const;
  static CorpusManifest load(const std::string& path);
};

/// Record i uses generator stream mix_seed(seed, i); relations cycle so label
/// coverage is balanced. The last 20% of a seeded permutation is "eval".
CorpusManifest make_manifest(std::size_t n, std::uint64_t seed, std::size_t image_side = 32);
/// Writes images/<index>.feim, vocab.txt and manifest.jsonl under out_dir.
CorpusManifest generate_corpus(std::size_t n, std::uint64_t seed, const std::string& out_dir,
                               std::size_t image_side = 32);

struct Sample {
  ag::Tensor image;
  std::string caption;
  Labels labels;
};
/// Renders every record in memory (images are a pure function of the spec).
std::vector<Sample> materialize(const CorpusManifest& manifest, std::string_view split = {});

inline constexpr char kImageMagic[4] = {'F', 'E', 'I', 'M'};
void save_image(const ag::Tensor& image, const std::string& path);
ag::Tensor load_image(const std::string& path);
/// Binary PPM (P6) export for viewing, mapping [-1, 1] to [0, 255].
void write_ppm(const ag::Tensor& image, const std::string& path);

}  // namespace flowerase::data
