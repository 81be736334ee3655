#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "flip/errors.hpp"
#include "flip/tokenizer.hpp"

using namespace flip;

TEST_CASE("shipped vocabulary file equals the built-in desk vocabulary") {
  const Vocabulary shipped = Vocabulary::load(std::string(FLIP_DATA_DIR) + "/desk_vocab.txt");
  CHECK(shipped.tokens() == Vocabulary::desk().tokens());
  CHECK(shipped.size() >= 150);
  CHECK(shipped.size() <= 260);
}

TEST_CASE("empty caption is all padding") {
  const Tokenizer tok(Vocabulary::desk());
  const auto ids = tok.encode("");
  CHECK(ids.size() == 32);
  for (auto id : ids) CHECK(id == kPadId);
}

TEST_CASE("a red circle") {
  const Vocabulary v = Vocabulary::desk();
  const Tokenizer tok(v);
  const auto ids = tok.encode("a red circle");
  REQUIRE(ids.size() == 32);
  CHECK(ids[0] == v.find("a"));
  CHECK(ids[1] == v.find("red"));
  CHECK(ids[2] == v.find("circle"));
  for (std::size_t i = 3; i < 32; ++i) CHECK(ids[i] == kPadId);
}

TEST_CASE("long captions are cut to 32") {
  const Tokenizer tok(Vocabulary::desk());
  std::string text;
  for (int i = 0; i < 40; ++i) text += (i % 2 ? "red " : "blue ");
  CHECK(tok.pieces(text).size() == 40);
  const auto ids = tok.encode(text);
  CHECK(ids.size() == 32);
  CHECK(ids[31] == Vocabulary::desk().find("red"));
  const auto batch = tok.encode_batch({text});
  CHECK(batch.valid_lengths[0] == 32);
}

TEST_CASE("lowercasing, continuation pieces and unknown characters") {
  const Vocabulary v = Vocabulary::desk();
  const Tokenizer tok(v);
  CHECK(tok.pieces("RED Circle") == tok.pieces("red circle"));
  const auto circles = tok.pieces("circles");
  REQUIRE(circles.size() == 2);
  CHECK(circles[0] == v.find("circle"));
  CHECK(circles[1] == v.find("##s"));
  // greedy longest match falls back to single characters
  const auto odd = tok.pieces("zq");
  REQUIRE(odd.size() == 2);
  CHECK(odd[0] == v.find("z"));
  CHECK(odd[1] == v.find("##q"));
  const auto unk = tok.pieces("\xE2\x82\xAC");  // one code point outside the vocabulary
  REQUIRE(unk.size() == 1);
  CHECK(unk[0] == kUnkId);
}

TEST_CASE("batch layout") {
  const Tokenizer tok(Vocabulary::desk());
  const auto b = tok.encode_batch({"a red circle", "blue"});
  CHECK(b.size() == 2);
  CHECK(b.ids.size() == 64);
  CHECK(b.valid_lengths[0] == 3);
  CHECK(b.valid_lengths[1] == 1);
  CHECK(b.is_padding(1, 1));
  CHECK_FALSE(b.is_padding(1, 0));
}

TEST_CASE("vocabulary validation and file round trip") {
  CHECK_THROWS_AS(Vocabulary({"[PAD]", "[UNK]", "a", "a"}), ConfigError);
  const auto path = (std::filesystem::temp_directory_path() / "flip_vocab_roundtrip.txt").string();
  Vocabulary::desk().save(path);
  CHECK(Vocabulary::load(path).tokens() == Vocabulary::desk().tokens());
  std::remove(path.c_str());
  CHECK_THROWS_AS(Vocabulary::load("/nonexistent/vocab.txt"), IoError);
}
