#include <cmath>

#include "doctest.h"
#include "flowerase/engine.hpp"
#include "flowerase/error.hpp"
#include "flowerase/pretrain.hpp"
#include "test_support.hpp"

using namespace flowerase;

namespace {

concepts::ConceptSpec circle_spec() {
  const auto th = concepts::Thesaurus::load(concepts::data_path("thesaurus.json"));
  const auto store = concepts::BucketStore::load(concepts::data_path("concept_buckets.json"));
  return concepts::make_spec("circle", th, store);
}

engine::BiLevelConfig quick_config(std::size_t iterations) {
  engine::BiLevelConfig c;
  c.iterations = iterations;
  c.sampler.num_steps = 4;
  c.preservation_count = 6;
  c.seed = 21;
  return c;
}

}  // namespace

TEST_CASE("shuffle keeps every word and the protected phrase intact") {
  Rng r(1);
  for (int k = 0; k < 50; ++k) {
    const auto s = engine::shuffle_words("a photo of a big red circle", r, "red circle");
    auto w = model::split_words(s);
    CHECK(w.size() == 7);
    CHECK(s.find("red circle") != std::string::npos);
    std::sort(w.begin(), w.end());
    auto ref = model::split_words("a photo of a big red circle");
    std::sort(ref.begin(), ref.end());
    CHECK(w == ref);
  }
}

TEST_CASE("pretraining lowers the flow-matching loss") {
  auto m = testing::tiny_model(3, 32, 16);
  const auto manifest = data::make_manifest(40, 5, 16);
  const auto samples = data::materialize(manifest, "train");
  const double before = engine::flow_matching_loss(m.config, m.params, m.vocab, samples, 9);
  engine::PretrainConfig pc;
  pc.steps = 60;
  pc.batch_size = 4;
  pc.warmup = 5;
  pc.ema_decay = 0.0;
  std::size_t calls = 0;
  const auto r = engine::pretrain(m.config, m.vocab, samples, pc, [&](const engine::PretrainStats&) { ++calls; });
  CHECK(calls == 60);
  CHECK(r.loss_history.size() == 60);
  const double after = engine::flow_matching_loss(m.config, r.params, m.vocab, samples, 9);
  CHECK(after < before);
}

TEST_CASE("erase config json rejects unknown keys and round-trips") {
  engine::BiLevelConfig c = quick_config(7);
  c.weights.rsc = 0.3;
  nlohmann::json j = c;
  const auto back = j.get<engine::BiLevelConfig>();
  CHECK(nlohmann::json(back) == j);
  j["lr"] = 1.0;
  CHECK_THROWS_AS(j.get<engine::BiLevelConfig>(), ConfigError);
  nlohmann::json w = {{"weights", {{"esd", 1.0}, {"foo", 2.0}}}};
  CHECK_THROWS_AS(w.get<engine::BiLevelConfig>(), ConfigError);
  engine::BiLevelConfig bad = quick_config(1);
  bad.preservation_count = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = quick_config(1);
  bad.weights.attn = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("preservation prompts substitute bucket words") {
  const auto spec = circle_spec();
  const auto prompts = engine::preservation_prompts(spec);
  CHECK_FALSE(prompts.empty());
  for (const auto& p : prompts) CHECK(p.find("circle") == std::string::npos);
  const auto m = testing::tiny_model();
  const auto set = engine::make_preservation_set(m, prompts, 6, 4, 3);
  REQUIRE(set.size() == 6);
  CHECK(set[0].prompt == prompts[0]);
  CHECK(set[0].u_pix.shape() == m.config.latent_shape());
  CHECK_THROWS_AS(engine::make_preservation_set(m, prompts, 11, 4, 3), ConfigError);
}

TEST_CASE("each iteration logs one lower and one upper entry") {
  const auto m = testing::tiny_model();
  engine::EraseSession s(m, circle_spec(), quick_config(3));
  std::size_t seen = 0;
  s.on_log = [&](const engine::LogEntry&) { ++seen; };
  s.run();
  CHECK(s.done());
  REQUIRE(s.log().size() == 6);
  CHECK(seen == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& e = s.log()[i];
    CHECK(e.iteration == i / 2);
    CHECK(e.level == (i % 2 == 0 ? "lower" : "upper"));
    for (const auto& [k, v] : e.losses) CHECK(std::isfinite(v));
    CHECK(e.prompt.find("circle") != std::string::npos);
  }
  CHECK(s.log()[0].losses.count("esd") == 1);
  CHECK(s.log()[1].losses.count("rsc") == 1);
  const auto jsonl = engine::log_to_jsonl(s.log());
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 6);
}

TEST_CASE("resume from a checkpoint matches an unbroken run") {
  const auto m = testing::tiny_model();
  const auto cfg = quick_config(4);
  engine::EraseSession full(m, circle_spec(), cfg);
  full.run();

  engine::EraseSession first(m, circle_spec(), cfg);
  first.run(2);
  const auto bytes = first.checkpoint_bytes();
  engine::EraseSession second(m, circle_spec(), cfg);
  second.restore(bytes);
  CHECK(second.iteration() == 2);
  second.run();
  CHECK(second.adapter().hash() == full.adapter().hash());
  CHECK(engine::log_to_jsonl(second.log()) == engine::log_to_jsonl(full.log()));
}

TEST_CASE("checkpoint restore validates its input") {
  const auto m = testing::tiny_model();
  engine::EraseSession s(m, circle_spec(), quick_config(2));
  s.run(1);
  auto bytes = s.checkpoint_bytes();

  auto corrupt = bytes;
  corrupt[20] ^= 0xff;
  engine::EraseSession t(m, circle_spec(), quick_config(2));
  CHECK_THROWS_AS(t.restore(corrupt), ChecksumError);

  auto other_cfg = quick_config(2);
  other_cfg.alpha_low = 0.5;
  engine::EraseSession u(m, circle_spec(), other_cfg);
  CHECK_THROWS_AS(u.restore(bytes), ConfigError);

  const auto bigger = testing::tiny_model(1, 48);
  engine::EraseSession v(bigger, circle_spec(), quick_config(2));
  CHECK_THROWS_AS(v.restore(bytes), DigestMismatchError);
}

TEST_CASE("pure negative guidance pulls the conditional velocity toward the unconditional one") {
  // Large text embeddings make the prompt matter at random init.
  auto m = testing::tiny_model(6);
  for (auto& x : m.params.get("text_embed").node()->data) x *= 50.0;
  auto cfg = quick_config(30);
  cfg.esd.eta = 0.0;
  cfg.weights = {1.0, 0.0, 0.0, 0.0};
  cfg.alpha_low = 1e-2;
  engine::EraseSession s(m, circle_spec(), cfg);
  s.run();
  // With eta = 0 the logged esd loss is ||v_edited(c_un) - v_base(null)||^2 / n.
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    early += s.log()[2 * i].losses.at("esd");
    late += s.log()[2 * (20 + i)].losses.at("esd");
  }
  CHECK(late < 0.8 * early);
}

TEST_CASE("erase returns a frozen adapter") {
  const auto m = testing::tiny_model();
  const auto r = engine::erase(m, circle_spec(), quick_config(1));
  CHECK(r.log.size() == 2);
  for (const auto& p : r.adapter.parameters()) CHECK_FALSE(p.requires_grad());
}
