#include "doctest.h"
#include "flowerase/error.hpp"
#include "flowerase/toymodel.hpp"
#include "test_support.hpp"

using namespace flowerase;
using testing::random_tensor;
using testing::tiny_model;

TEST_CASE("tokenizer pads, maps unknown words and truncates") {
  const auto vocab = model::Vocabulary::from_words({"a", "red", "circle"});
  CHECK(vocab.lookup("<pad>") == model::kPad);
  CHECK(vocab.lookup("<null>") == model::kNull);
  CHECK(vocab.lookup("nope") == model::kUnk);

  const auto t = model::tokenize("A  Red circle zzz", vocab, 6);
  CHECK(t.ids.size() == 6);
  CHECK(t.length == 4);
  CHECK(t.ids[0] == vocab.lookup("a"));
  CHECK(t.ids[3] == model::kUnk);
  CHECK(t.ids[4] == model::kPad);
  CHECK_FALSE(t.truncated);

  const auto e = model::tokenize("", vocab, 4);
  CHECK(e.ids[0] == model::kNull);
  CHECK(e.ids[1] == model::kPad);

  const auto long_prompt = model::tokenize("a a a a a a a", vocab, 4);
  CHECK(long_prompt.truncated);
  CHECK(long_prompt.length == 4);
}

TEST_CASE("vocabulary round-trips through its text file") {
  const auto vocab = data::world_vocabulary();
  const std::string path = "test_vocab.txt";
  vocab.save(path);
  const auto back = model::Vocabulary::load(path);
  CHECK(back.words() == vocab.words());
  CHECK(back.hash() == vocab.hash());
  CHECK_THROWS_AS(vocab.word(static_cast<model::TokenId>(vocab.size())), IndexError);
}

TEST_CASE("config validation and json round trip") {
  model::ModelConfig c;
  c.vocab_size = 10;
  c.validate();
  nlohmann::json j = c;
  model::ModelConfig back = j.get<model::ModelConfig>();
  CHECK(back.digest() == c.digest());
  c.embed_dim = 30;  // not divisible by 4 heads
  CHECK_THROWS_AS(c.validate(), ConfigError);
  j["bogus"] = 1;
  CHECK_THROWS_AS(j.get<model::ModelConfig>(), ConfigError);
}

TEST_CASE("digest ignores the seed but not the architecture") {
  model::ModelConfig a, b;
  a.vocab_size = b.vocab_size = 20;
  b.seed = 99;
  CHECK(a.digest() == b.digest());
  b.num_dual_blocks = a.num_dual_blocks + 1;
  CHECK(a.digest() != b.digest());
}

TEST_CASE("forward produces a velocity of latent shape and one record per block") {
  const auto m = tiny_model();
  const auto x = random_tensor(m.config.latent_shape(), 4);
  const auto toks = model::tokenize("a red circle", m.vocab, m.config.text_len).ids;
  const auto out = model::forward(m.config, m.params, {}, x, toks, 0.5, {.capture_attention = true, .zero_columns = {}});
  CHECK(out.velocity.shape() == m.config.latent_shape());
  REQUIRE(out.records.size() == m.config.num_dual_blocks);
  const std::size_t T = m.config.total_tokens();
  CHECK(out.records[0].weights.shape() == ag::Shape{m.config.num_heads, T, T});
  CHECK(out.records[1].block_index == 1);
  CHECK(out.records[0].t == 0.5);
  for (std::size_t row = 0; row < m.config.num_heads * T; ++row) {
    double s = 0.0;
    for (std::size_t c = 0; c < T; ++c) s += out.records[0].weights[row * T + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("forward is deterministic and sensitive to the prompt") {
  const auto m = tiny_model();
  const auto x = random_tensor(m.config.latent_shape(), 4);
  const auto a = model::tokenize("a red circle", m.vocab, m.config.text_len).ids;
  const auto b = model::tokenize("a blue square", m.vocab, m.config.text_len).ids;
  const auto v1 = model::forward(m.config, m.params, {}, x, a, 0.3).velocity;
  const auto v2 = model::forward(m.config, m.params, {}, x, a, 0.3).velocity;
  const auto v3 = model::forward(m.config, m.params, {}, x, b, 0.3).velocity;
  CHECK(testing::max_abs_diff(v1, v2) == 0.0);
  CHECK(testing::max_abs_diff(v1, v3) > 0.0);
}

TEST_CASE("zeroed columns carry exactly no attention") {
  const auto m = tiny_model();
  const auto x = random_tensor(m.config.latent_shape(), 4);
  const auto toks = model::tokenize("a red circle", m.vocab, m.config.text_len).ids;
  const auto out =
      model::forward(m.config, m.params, {}, x, toks, 0.9, {.capture_attention = true, .zero_columns = {1, 2}});
  const std::size_t T = m.config.total_tokens();
  for (const auto& rec : out.records) {
    for (std::size_t row = 0; row < m.config.num_heads * T; ++row) {
      CHECK(rec.weights[row * T + 1] == 0.0);
      CHECK(rec.weights[row * T + 2] == 0.0);
    }
  }
  CHECK_THROWS_AS(model::forward(m.config, m.params, {}, x, toks, 0.9, {.capture_attention = false, .zero_columns = {40}}),
                  IndexError);
}

TEST_CASE("forward rejects malformed inputs") {
  const auto m = tiny_model();
  const auto toks = model::tokenize("a red circle", m.vocab, m.config.text_len).ids;
  CHECK_THROWS_AS(model::forward(m.config, m.params, {}, random_tensor({8, 8, 3}, 1), toks, 0.5), DimensionError);
  const auto x = random_tensor(m.config.latent_shape(), 4);
  CHECK_THROWS_AS(model::forward(m.config, m.params, {}, x, toks, 1.5), DomainError);
  std::vector<model::TokenId> short_toks(3, 0);
  CHECK_THROWS_AS(model::forward(m.config, m.params, {}, x, short_toks, 0.5), DimensionError);
}

TEST_CASE("model weight gradients match finite differences") {
  auto m = tiny_model(2, 16, 8);
  const auto x = random_tensor(m.config.latent_shape(), 5);
  const auto toks = model::tokenize("a green star", m.vocab, m.config.text_len).ids;
  const auto target = random_tensor(m.config.latent_shape(), 6);
  auto f = [&] {
    const auto v = model::forward(m.config, m.params, {}, x, toks, 0.4).velocity;
    return ag::mean(ag::square(ag::sub(v, target)));
  };
  std::vector<ag::Tensor> ps = {m.params.get("blocks.0.add_q_proj"), m.params.get("blocks.1.to_v"),
                                m.params.get("text_embed")};
  CHECK(testing::grad_check(f, ps, 10).rel_error < 1e-6);
}

TEST_CASE("timestep features are bounded and distinguish times") {
  const auto a = model::timestep_features(0.1, 8);
  const auto b = model::timestep_features(0.2, 8);
  CHECK(a.shape() == ag::Shape{1, 16});
  for (double v : a.data()) CHECK(std::abs(v) <= 1.0);
  CHECK(testing::max_abs_diff(a, b) > 0.0);
}
