#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mein/data.hpp"
#include "mein/tokenize.hpp"

using namespace mein;

namespace {

std::vector<std::string> symbols_of(const BpeVocabulary& bpe, const TokenIds& ids) {
  std::vector<std::string> out;
  for (auto id : ids) out.push_back(bpe.symbol(id));
  return out;
}

}  // namespace

TEST_SUITE("tokenize") {
  TEST_CASE("word vocabulary keeps tokens at min_count") {
    const std::vector<std::string> corpus{"a a b"};
    const auto vocab = WordVocabulary::build(corpus, 2);
    CHECK(vocab.size() == 3);
    CHECK(vocab.contains("a"));
    CHECK_FALSE(vocab.contains("b"));
    CHECK(vocab.id("b") == WordVocabulary::kUnknown);
    const auto ids = vocab.encode("a b", 10);
    CHECK(ids == TokenIds{vocab.id("a"), WordVocabulary::kUnknown, WordVocabulary::kEndOfSequence});
  }

  TEST_CASE("empty corpus gives only the specials") {
    const auto vocab = WordVocabulary::build({}, 2);
    CHECK(vocab.size() == 2);
  }

  TEST_CASE("min_count 1 keeps every token") {
    const std::vector<std::string> corpus{"x y z", "y"};
    const auto vocab = WordVocabulary::build(corpus, 1);
    CHECK(vocab.size() == 5);
    CHECK(vocab.id("y") == 2);  // most frequent first
  }

  TEST_CASE("words are lowercased and truncated with room for the end id") {
    const std::vector<std::string> corpus{"Hello hello world world"};
    const auto vocab = WordVocabulary::build(corpus, 2);
    CHECK(vocab.encode("HELLO", 10) == vocab.encode("hello", 10));
    const auto ids = vocab.encode("hello world hello world", 3);
    CHECK(ids.size() == 3);
    CHECK(ids.back() == WordVocabulary::kEndOfSequence);
  }

  TEST_CASE("first merge of ab ab ab is (a,b)") {
    const std::vector<std::string> corpus{"ab ab ab"};
    const auto bpe = BpeVocabulary::learn(corpus, 1);
    REQUIRE(bpe.merges().size() == 1);
    CHECK(bpe.merges()[0] == BpeVocabulary::Merge{"a", "b"});
  }

  TEST_CASE("zero merges give characters plus the boundary") {
    const std::vector<std::string> corpus{"ab"};
    const auto bpe = BpeVocabulary::learn(corpus, 0);
    CHECK(symbols_of(bpe, bpe.encode("ab")) == std::vector<std::string>{"a", "b", "</w>"});
  }

  TEST_CASE("merge replay on abab") {
    const auto bpe = BpeVocabulary::from_merges({"a", "b"}, {{"a", "b"}});
    CHECK(symbols_of(bpe, bpe.encode("abab")) == std::vector<std::string>{"ab", "ab", "</w>"});
  }

  TEST_CASE("pad symbol sits at id 0") {
    const BpeVocabulary bpe;
    CHECK(bpe.symbol(BpeVocabulary::kPad) == "$");
  }

  TEST_CASE("unknown characters map to the unknown symbol") {
    const std::vector<std::string> corpus{"ab"};
    const auto bpe = BpeVocabulary::learn(corpus, 0);
    CHECK(bpe.encode("az")[1] == BpeVocabulary::kUnknown);
  }

  TEST_CASE("round trip on generated sentences") {
    SyntheticSpec spec;
    spec.unlabeled = 300;
    const auto corpus = generate_synthetic(spec).corpus;
    const auto bpe = BpeVocabulary::learn(corpus.vocabulary_texts(), 150);
    for (const auto& text : corpus.unlabeled) CHECK(bpe.decode(bpe.encode(text)) == text);
    const std::string mixed = "Ünïcode  wörds, w1 w22";
    const auto wide = BpeVocabulary::learn(std::vector<std::string>{mixed}, 20);
    CHECK(wide.decode(wide.encode("Ünïcode wörds, w1 w22")) == "Ünïcode wörds, w1 w22");
  }

  TEST_CASE("learning does not depend on corpus order") {
    std::vector<std::string> corpus{"low lower lowest", "newer newest", "wide wider", "low new"};
    const auto a = BpeVocabulary::learn(corpus, 12);
    std::reverse(corpus.begin(), corpus.end());
    const auto b = BpeVocabulary::learn(corpus, 12);
    CHECK(a == b);
  }

  TEST_CASE("vocabularies survive save and load") {
    const auto dir = std::filesystem::temp_directory_path() / "mein_tokenize_test";
    std::filesystem::create_directories(dir);
    const std::vector<std::string> corpus{"the cat the dog", "a cat"};
    const auto words = WordVocabulary::build(corpus, 1);
    words.save(dir / "words.vocab");
    CHECK(WordVocabulary::load(dir / "words.vocab") == words);
    const auto bpe = BpeVocabulary::learn(corpus, 5);
    bpe.save(dir / "bpe");
    const auto loaded = BpeVocabulary::load(dir / "bpe");
    CHECK(loaded == bpe);
    CHECK(loaded.encode("the cat") == bpe.encode("the cat"));
    std::filesystem::remove_all(dir);
  }
}
