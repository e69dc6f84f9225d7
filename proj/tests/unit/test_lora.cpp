#include "doctest.h"
#include "flowerase/error.hpp"
#include "flowerase/flow.hpp"
#include "flowerase/lora.hpp"
#include "test_support.hpp"

using namespace flowerase;
using testing::max_abs_diff;
using testing::random_adapter;
using testing::tiny_model;

TEST_CASE("fresh adapter is a no-op") {
  const auto m = tiny_model();
  const auto a = lora::LoraAdapter::create(m.params.target_shapes(lora::default_targets(2)), 4, 4.0, 1,
                                           m.config.digest());
  CHECK(a.target_names().size() == 4);
  for (const auto& n : a.target_names()) {
    const auto d = a.delta(n);
    for (double v : d.data()) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(a.delta("blocks.0.to_v"), TargetingError);
}

TEST_CASE("delta equals alpha over rank times B A") {
  const auto m = tiny_model();
  const auto a = random_adapter(m, 3);
  const auto& pair = a.terms()[0].pairs.at("blocks.0.add_q_proj");
  const auto ref = ag::scale(ag::matmul(pair.b, pair.a), 4.0 / 4.0);
  CHECK(max_abs_diff(a.delta("blocks.0.add_q_proj"), ref) < 1e-15);
  const auto w = m.params.get("blocks.0.add_q_proj");
  CHECK(max_abs_diff(lora::apply(w, a, "blocks.0.add_q_proj"), ag::add(w, ref)) < 1e-15);
  CHECK_THROWS_AS(lora::apply(w, a, "blocks.0.to_q"), TargetingError);
}

TEST_CASE("merge is linear in the deltas") {
  const auto m = tiny_model();
  const auto a = random_adapter(m, 3);
  const auto b = random_adapter(m, 4);
  for (auto mode : {lora::MergeMode::kNormalized, lora::MergeMode::kUnnormalized}) {
    const auto merged = lora::merge(lora::MergeSpec::make({a, b}, mode));
    const double w = mode == lora::MergeMode::kNormalized ? 0.5 : 1.0;
    for (const auto& n : a.target_names()) {
      const auto ref = ag::add(ag::scale(a.delta(n), w), ag::scale(b.delta(n), w));
      CHECK(max_abs_diff(merged.delta(n), ref) <= 1e-12);
    }
  }
}

TEST_CASE("normalized merge of identical adapters samples like one") {
  const auto m = tiny_model();
  const auto a = random_adapter(m, 5, 0.3);
  const auto merged = lora::merge(lora::MergeSpec::make({a, a, a}, lora::MergeMode::kNormalized));
  const auto toks = model::tokenize("a red circle", m.vocab, m.config.text_len).ids;
  const auto one = flow::euler_sample(m.config, m.params, std::span(&a, 1), toks, {.num_steps = 6, .seed = 2});
  const auto three = flow::euler_sample(m.config, m.params, std::span(&merged, 1), toks, {.num_steps = 6, .seed = 2});
  CHECK(max_abs_diff(one, three) <= 1e-6);
}

TEST_CASE("merge rejects incompatible adapters") {
  const auto m = tiny_model();
  auto other = tiny_model(1, 48);
  const auto a = random_adapter(m, 1);
  const auto b = random_adapter(other, 1);
  CHECK_THROWS_AS(lora::merge(lora::MergeSpec::make({}, lora::MergeMode::kNormalized)), CompositionError);
  CHECK_THROWS_AS(lora::merge(lora::MergeSpec::make({a, b}, lora::MergeMode::kNormalized)), CompositionError);
  lora::MergeSpec bad = lora::MergeSpec::make({a, a}, lora::MergeMode::kNormalized);
  bad.weights.pop_back();
  CHECK_THROWS_AS(lora::merge(bad), CompositionError);
  CHECK_THROWS_AS(lora::merge_mode_from_string("average"), ConfigError);
  CHECK(lora::merge_mode_from_string("unnormalized") == lora::MergeMode::kUnnormalized);
}

TEST_CASE("adapter files round-trip and detect corruption") {
  const auto m = tiny_model();
  const auto a = random_adapter(m, 8);
  const auto merged = lora::merge(lora::MergeSpec::make({a, random_adapter(m, 9)}, lora::MergeMode::kNormalized));
  for (const auto* ad : {&a, &merged}) {
    auto bytes = lora::serialize(*ad);
    const auto back = lora::deserialize(bytes);
    CHECK(back.hash() == ad->hash());
    CHECK(back.config_digest() == ad->config_digest());
    bytes[bytes.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(lora::deserialize(bytes), ChecksumError);
  }
  auto bytes = lora::serialize(a);
  bytes.resize(10);
  CHECK_THROWS_AS(lora::deserialize(bytes), Error);
  bytes = lora::serialize(a);
  bytes[0] = 'X';
  CHECK_THROWS_AS(lora::deserialize(bytes), Error);
}

TEST_CASE("adapter hash tracks its values") {
  const auto m = tiny_model();
  auto a = random_adapter(m, 8);
  const auto h = a.hash();
  CHECK(a.clone().hash() == h);
  a.terms()[0].pairs.begin()->second.a.mutable_data()[0] += 1e-9;
  CHECK(a.hash() != h);
}
