#include "doctest.h"
#include "flowerase/error.hpp"
#include "flowerase/evaluation.hpp"
#include "test_support.hpp"

using namespace flowerase;
using namespace flowerase::eval;

namespace {

// Marks a classifier as having passed its gate so the pipeline can run on
// an untrained one.
ConceptClassifier forced_gate(ConceptClassifier c) {
  for (auto a : data::kAttributes) c.heldout[std::string(data::attribute_name(a))] = 1.0;
  return c;
}

concepts::ConceptSpec spec_for(const std::string& word) {
  const auto th = concepts::Thesaurus::load(concepts::data_path("thesaurus.json"));
  const auto store = concepts::BucketStore::load(concepts::data_path("concept_buckets.json"));
  return concepts::make_spec(word, th, store);
}

}  // namespace

TEST_CASE("attack specs parse and print") {
  CHECK(AttackSpec::parse("misspell").name() == "misspell:rs");
  CHECK(AttackSpec::parse("misspell:zz").append == "zz");
  const auto ps = AttackSpec::parse("prefix_suffix:pre:post");
  CHECK(ps.prefix == "pre");
  CHECK(ps.suffix == "post");
  CHECK(AttackSpec::parse("repeat:3").count == 3);
  CHECK_THROWS_AS(AttackSpec::parse("leet"), AttackSpecError);
  CHECK_THROWS_AS(AttackSpec::parse("repeat:x"), AttackSpecError);
  CHECK_THROWS_AS(AttackSpec::parse("repeat:0"), AttackSpecError);
  CHECK_THROWS_AS(AttackSpec::parse("misspell:"), AttackSpecError);
}

TEST_CASE("attacks rewrite every keyword occurrence") {
  const auto ms = AttackSpec::parse("misspell");
  CHECK(apply_attack("a child is kicking soccer", "soccer", ms, 12) == "a child is kicking soccerrs");
  CHECK(apply_attack("a red circle above a red square", "red", AttackSpec::parse("prefix_suffix"), 12) ==
        "a xredy circle above a xredy square");
  CHECK(apply_attack("a red circle", "red", AttackSpec::parse("repeat"), 12) == "a red red circle");
  CHECK_THROWS_AS(apply_attack("", "red", ms, 12), AttackSpecError);
  CHECK_THROWS_AS(apply_attack("a blue circle", "red", ms, 12), AttackSpecError);
  CHECK_THROWS_AS(apply_attack("a red circle", "red", AttackSpec::parse("repeat:20"), 12), AttackSpecError);
}

TEST_CASE("misspelled keywords fall outside the vocabulary") {
  const auto vocab = data::world_vocabulary();
  const auto p = apply_attack("a red circle", "red", AttackSpec::parse("misspell"), 12);
  CHECK(model::tokenize(p, vocab, 12).ids[1] == model::kUnk);
}

TEST_CASE("label prompts fix the requested class") {
  for (auto a : data::kAttributes) {
    for (std::size_t i = 0; i < data::class_count(a); ++i) {
      if (a == data::Attribute::kRelation && i == 0) continue;
      for (const auto& p : label_prompts(a, i, 5, 3)) {
        CHECK(model::split_words(p).size() <= 12);
        CHECK(p.find(std::string(data::class_word(a, i))) != std::string::npos);
      }
    }
  }
  CHECK(label_prompts(data::Attribute::kColor, 0, 4, 3) == label_prompts(data::Attribute::kColor, 0, 4, 3));
  CHECK_THROWS_AS(label_prompts(data::Attribute::kColor, 9, 1, 0), IndexError);
  CHECK(concept_label("crimson").index == 0);
  CHECK_THROWS_AS(concept_label("nude"), CoverageError);
}

TEST_CASE("classifier learns the toy world and round-trips") {
  const auto manifest = data::make_manifest(400, 17);
  ClassifierConfig cfg;
  cfg.epochs = 8;
  cfg.shift_max = 0;  // a short run is too short to learn through augmentation
  cfg.speckle_max = 0.0;
  const auto clf = train_classifier(manifest, cfg, false);
  REQUIRE(clf.heldout.size() == 4);
  for (const auto& [name, acc] : clf.heldout) {
    CHECK(acc > 0.6);  // well above chance after a short run
  }
  const auto back = ConceptClassifier::deserialize(clf.serialize());
  CHECK(back.heldout == clf.heldout);
  const auto img = data::render(manifest.records[0].spec);
  CHECK(back.predict(img) == clf.predict(img));
  auto bytes = clf.serialize();
  bytes[bytes.size() / 2] ^= 1;
  CHECK_THROWS_AS(ConceptClassifier::deserialize(bytes), ChecksumError);
}

TEST_CASE("gate is enforced") {
  const auto manifest = data::make_manifest(40, 17);
  ClassifierConfig cfg;
  cfg.epochs = 1;
  cfg.gate = 1.01;
  CHECK_THROWS_AS(train_classifier(manifest, cfg, true), GateError);
  auto ungated = ConceptClassifier::init(cfg, 32);
  CHECK_FALSE(ungated.gated());
  const auto m = testing::tiny_model(1, 16, 32);
  CHECK_THROWS_AS(measure(m, {}, spec_for("red"), ungated, MeasureConfig{}), GateError);
}

TEST_CASE("measure pairs every sample with and without adapters") {
  const auto m = testing::tiny_model(1, 16, 32);
  const auto clf = forced_gate(ConceptClassifier::init(ClassifierConfig{}, 32));
  const MeasureConfig mc{.prompts_per_label = 2, .samples_per_prompt = 1, .num_steps = 2, .seed = 4};
  const auto base_only = measure(m, {}, spec_for("red"), clf, mc);
  // e: 2 prompts, g: 2, ir: 4 other colors x 2; each sampled twice.
  CHECK(base_only.records.size() == 2 * (2 + 2 + 8));
  CHECK(base_only.before.acc_e == base_only.after.acc_e);
  CHECK(base_only.synonym == "crimson");

  const auto adapter = testing::random_adapter(m, 3, 0.5);
  const auto r1 = measure(m, std::span(&adapter, 1), spec_for("red"), clf, mc);
  const auto r2 = measure(m, std::span(&adapter, 1), spec_for("red"), clf, mc);
  CHECK(r1.hash() == r2.hash());
  CHECK(r1.before.acc_e == base_only.before.acc_e);
  CHECK(r1.hash() != base_only.hash());
  const auto rel = measure(m, {}, spec_for("above"), clf, mc);
  CHECK(rel.records.size() == 2 * (2 + 2 + 2 * 2));  // "none" is not an irrelevant class
  CHECK(format_table({r1, rel}).find("above") != std::string::npos);
}

TEST_CASE("attack harness reports each defense") {
  const auto m = testing::tiny_model(1, 16, 32);
  const auto clf = forced_gate(ConceptClassifier::init(ClassifierConfig{}, 32));
  const auto adapter = testing::random_adapter(m, 3, 0.5);
  const MeasureConfig mc{.prompts_per_label = 2, .samples_per_prompt = 1, .num_steps = 2, .seed = 4};
  const auto res = attack(m, std::span(&adapter, 1), spec_for("red"),
                          {AttackSpec::parse("misspell"), AttackSpec::parse("repeat")}, clf, mc);
  REQUIRE(res.size() == 2);
  for (const auto& r : res) {
    CHECK(r.asr.size() == 3);
    for (const auto& [d, v] : r.asr) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  // A misspelled keyword cannot be located, so index-based erasure is a no-op.
  CHECK(res[0].asr.at("zero_columns") == res[0].asr.at("none"));
}
