#include <catch2/catch_amalgamated.hpp>

#include "backpack/vocab.hpp"

using namespace backpack;

TEST_CASE("vocabulary orders words by frequency then lexicographically") {
  Vocabulary v = Vocabulary::build("a a b");
  REQUIRE(v.size() == 4);  // unk, bos, a, b
  CHECK(v.word(Vocabulary::kUnk) == "<unk>");
  CHECK(v.word(Vocabulary::kBos) == "<bos>");
  CHECK(v.word(2) == "a");
  CHECK(v.word(3) == "b");

  Vocabulary tie = Vocabulary::build("z q z q m");
  CHECK(tie.word(2) == "q");  // ties broken lexicographically
  CHECK(tie.word(3) == "z");
  CHECK(tie.word(4) == "m");
}

TEST_CASE("min frequency and max size prune the vocabulary") {
  Vocabulary v = Vocabulary::build("a a b", 2);
  REQUIRE(v.size() == 3);
  CHECK(v.word(2) == "a");
  CHECK(v.id("b") == Vocabulary::kUnk);

  Vocabulary capped = Vocabulary::build("a a b b b c", 1, 3);
  REQUIRE(capped.size() == 3);
  CHECK(capped.word(2) == "b");  // most frequent survives
}

TEST_CASE("empty corpora are rejected") {
  CHECK_THROWS_AS(Vocabulary::build(""), DataError);
  CHECK_THROWS_AS(Vocabulary::build("   \n\t  "), DataError);
  CHECK_THROWS_AS(Vocabulary::build("a", 0), UsageError);
  CHECK_THROWS_AS(Vocabulary::build("a", 1, 2), UsageError);
}

TEST_CASE("tokenizer separates punctuation and keeps word-internal marks") {
  auto t = Vocabulary::tokenize("The cat, who isn't well-fed, ran.");
  std::vector<std::string> expect{"The", "cat", ",", "who", "isn't", "well-fed", ",", "ran", "."};
  REQUIRE(t == expect);
  // UTF-8 multibyte sequences stay glued together
  auto u = Vocabulary::tokenize("caf\xc3\xa9 au lait");
  REQUIRE(u.size() == 3);
  CHECK(u[0] == "caf\xc3\xa9");
}

TEST_CASE("encode maps unknown words to UNK and decode round-trips") {
  Vocabulary v = Vocabulary::build("the cat sat on the mat .");
  std::string sentence = "the cat sat on the mat .";
  std::vector<int> ids = v.encode(sentence);
  CHECK(v.decode(ids) == sentence);

  std::vector<int> oov = v.encode("the dog sat");
  REQUIRE(oov.size() == 3);
  CHECK(oov[0] == v.id("the"));
  CHECK(oov[1] == Vocabulary::kUnk);
  CHECK(v.encode("").empty());
}

TEST_CASE("byte mode covers all bytes and concatenates on decode") {
  Vocabulary v = Vocabulary::build("anything", 1, 1 << 30, TokenizerMode::Byte);
  REQUIRE(v.size() == 258);
  std::string text = "Hi \xf0\x9f\x99\x82!";
  std::vector<int> ids = v.encode(text);
  REQUIRE(ids.size() == text.size());
  CHECK(v.decode(ids) == text);
  for (int id : ids) CHECK(id >= 2);
}

TEST_CASE("vocabulary reconstruction validates specials") {
  Vocabulary v = Vocabulary::build("x y");
  Vocabulary copy = Vocabulary::from_tokens(v.tokens(), v.mode());
  CHECK(copy.size() == v.size());
  CHECK(copy.id("x") == v.id("x"));
  CHECK_THROWS_AS(Vocabulary::from_tokens({"a", "b"}, TokenizerMode::Word), DataError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"<unk>", "<bos>", "a", "a"}, TokenizerMode::Word),
                  DataError);
}
