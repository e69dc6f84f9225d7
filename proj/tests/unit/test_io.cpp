#include "doctest.h"
#include "flowerase/binary_io.hpp"
#include "flowerase/checkpoint.hpp"
#include "flowerase/error.hpp"
#include "test_support.hpp"

using namespace flowerase;

TEST_CASE("fnv1a reference values") {
  CHECK(io::fnv1a(std::string_view("")) == 0xcbf29ce484222325ULL);
  CHECK(io::fnv1a(std::string_view("a")) == 0xaf63dc4c8601ec8cULL);
  CHECK(io::fnv1a(std::string_view("foobar")) == 0x85944171f73967e8ULL);
  CHECK(io::hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("reader refuses to overrun") {
  io::Writer w;
  w.u32(7);
  w.str("hello");
  io::Reader r(w.buffer());
  CHECK(r.u32() == 7);
  CHECK(r.str() == "hello");
  CHECK(r.remaining() == 0);
  CHECK_THROWS_AS(r.u64(), FormatError);
  io::Reader r2(std::span(w.buffer()).subspan(0, 6));
  r2.u32();
  CHECK_THROWS_AS(r2.str(), FormatError);
}

TEST_CASE("base model file round trip") {
  auto m = testing::tiny_model(4);
  m.loss_history = {1.0, 0.5, 0.25};
  auto bytes = engine::serialize_model(m);
  const auto back = engine::deserialize_model(bytes);
  CHECK(back.params.hash() == m.params.hash());
  CHECK(back.config.digest() == m.config.digest());
  CHECK(back.vocab.hash() == m.vocab.hash());
  CHECK(back.loss_history == m.loss_history);

  engine::save_model(m, "test_model.femd");
  CHECK(engine::load_model("test_model.femd").params.hash() == m.params.hash());

  bytes[40] ^= 1;
  CHECK_THROWS_AS(engine::deserialize_model(bytes), ChecksumError);
  CHECK_THROWS_AS(engine::load_model("does_not_exist.femd"), Error);
}

TEST_CASE("model params clone is deep") {
  const auto m = testing::tiny_model(4);
  auto c = m.params.clone();
  c.get("proj_out").node()->data[0] += 1.0;
  CHECK(c.hash() != m.params.hash());
}
