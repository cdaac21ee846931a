#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>
#include <vector>

#include "graphtext/rng.hpp"
#include "graphtext/text.hpp"

using namespace graphtext;

namespace {

// Reference greedy matcher working on piece strings instead of the
// vocabulary's id machinery.
std::vector<std::string> reference_greedy(const std::string& word,
                                          const SubwordVocabulary& vocab) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos < word.size()) {
    bool found = false;
    for (size_t len = word.size() - pos; len > 0; --len) {
      std::string cand = (pos ? "##" : "") + word.substr(pos, len);
      if (vocab.id_of(cand) >= 0) {
        out.push_back(cand);
        pos += len;
        found = true;
        break;
      }
    }
    if (!found) return {"[UNK]"};
  }
  return out;
}

std::string random_word(Rng& rng) {
  int n = 1 + int(rng.uniform_int(8));
  std::string w;
  for (int i = 0; i < n; ++i) w.push_back(char('a' + rng.uniform_int(5)));
  return w;
}

}  // namespace

TEST_CASE("tokenize forced segmentation and unknown word") {
  SubwordVocabulary vocab({"ab", "##c"});
  auto ids = tokenize("abc", vocab);
  REQUIRE(ids.size() == 2);
  CHECK(vocab.piece(ids[0]) == "ab");
  CHECK(vocab.piece(ids[1]) == "##c");

  auto unk = tokenize("zzz", vocab);
  REQUIRE(unk.size() == 1);
  CHECK(unk[0] == SubwordVocabulary::kUnk);
}

TEST_CASE("tokenize lowercases input") {
  SubwordVocabulary vocab({"ab", "##c"});
  CHECK(tokenize("ABC", vocab) == tokenize("abc", vocab));
}

TEST_CASE("tokenize matches reference greedy matcher on 1000 random words") {
  SubwordVocabulary vocab({"aa", "ab", "abc", "##b", "##bc", "##cc", "a", "b",
                           "c", "##a", "##c", "de"});
  Rng rng(19);
  for (int t = 0; t < 1000; ++t) {
    std::string word = random_word(rng);
    auto got = tokenize(word, vocab);
    auto expect = reference_greedy(word, vocab);
    REQUIRE(got.size() == expect.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(vocab.piece(got[i]) == expect[i]);
    }
  }
}

TEST_CASE("encode_text single section framing") {
  SubwordVocabulary vocab({"x", "y", "z"});
  TextSequence seq = encode_text({{2, "x y z"}}, vocab);
  REQUIRE(seq.length() == 5);
  CHECK(seq.token_ids.front() == SubwordVocabulary::kCls);
  CHECK(seq.token_ids.back() == SubwordVocabulary::kSep);
  CHECK(seq.positions == std::vector<int64_t>{0, 1, 2, 3, 4});
  for (int s : seq.section_ids) CHECK(s == 2);
}

TEST_CASE("encode_text truncates to max length preserving final [SEP]") {
  SubwordVocabulary vocab({"w"});
  std::string text;
  for (int i = 0; i < 600; ++i) text += "w ";
  TextSequence seq = encode_text({{0, text}}, vocab);
  CHECK(seq.length() == 512);
  CHECK(seq.token_ids.back() == SubwordVocabulary::kSep);
  CHECK(seq.token_ids.front() == SubwordVocabulary::kCls);
  for (int64_t i = 1; i < 511; ++i) {
    CHECK(vocab.piece(seq.token_ids[i]) == "w");
  }
}

TEST_CASE("encode_text two sections: two [SEP]s, section ids switch after the first") {
  SubwordVocabulary vocab({"dx", "px"});
  TextSequence seq = encode_text({{0, "dx dx"}, {1, "px"}}, vocab);
  // [CLS] dx dx [SEP] px [SEP]
  REQUIRE(seq.length() == 6);
  int sep_count = 0;
  for (int64_t id : seq.token_ids) sep_count += id == SubwordVocabulary::kSep;
  CHECK(sep_count == 2);
  CHECK(seq.section_ids == std::vector<int>{0, 0, 0, 0, 1, 1});
  CHECK(seq.token_ids[3] == SubwordVocabulary::kSep);
  CHECK(seq.token_ids[5] == SubwordVocabulary::kSep);
}

TEST_CASE("encode_text rejects empty text and bad headers") {
  SubwordVocabulary vocab({"x"});
  CHECK_THROWS_AS(encode_text({{0, "   "}}, vocab), std::invalid_argument);
  CHECK_THROWS_AS(encode_text({}, vocab), std::invalid_argument);
  CHECK_THROWS_AS(encode_text({{3, "x"}}, vocab), std::invalid_argument);
}

TEST_CASE("build_text_vocab tiny corpus and empty corpus") {
  SubwordVocabulary v = build_text_vocab({"a a b"}, 9);
  CHECK(v.size() == 9);
  CHECK(v.id_of("a") >= SubwordVocabulary::kReservedCount);
  CHECK(v.id_of("b") >= 0);
  CHECK(v.id_of("##a") >= 0);

  SubwordVocabulary empty = build_text_vocab({}, SubwordVocabulary::kReservedCount);
  CHECK(empty.size() == SubwordVocabulary::kReservedCount);
}

TEST_CASE("build_text_vocab rejects too-small target") {
  CHECK_THROWS_AS(build_text_vocab({"abc"}, 6), std::invalid_argument);
}

TEST_CASE("generous vocabulary covers every corpus word without [UNK]") {
  Rng rng(77);
  std::vector<std::string> corpus;
  for (int d = 0; d < 20; ++d) {
    std::string doc;
    for (int w = 0; w < 30; ++w) doc += random_word(rng) + " ";
    corpus.push_back(doc);
  }
  SubwordVocabulary vocab = build_text_vocab(corpus, 2000);
  for (const std::string& doc : corpus) {
    for (int64_t id : tokenize(doc, vocab)) {
      CHECK(id != SubwordVocabulary::kUnk);
    }
  }
}

TEST_CASE("tokenization is deterministic") {
  std::vector<std::string> corpus = {"alpha beta gamma", "beta beta delta"};
  SubwordVocabulary v1 = build_text_vocab(corpus, 60);
  SubwordVocabulary v2 = build_text_vocab(corpus, 60);
  CHECK(v1.size() == v2.size());
  for (int64_t i = 0; i < v1.size(); ++i) CHECK(v1.piece(i) == v2.piece(i));
  CHECK(tokenize("alpha delta", v1) == tokenize("alpha delta", v2));
}

TEST_CASE("vocabulary save/load round-trip") {
  SubwordVocabulary vocab({"hello", "##lo", "wor"});
  std::string path = "vocab_roundtrip_test.txt";
  vocab.save(path);
  SubwordVocabulary loaded = SubwordVocabulary::load(path);
  CHECK(loaded.size() == vocab.size());
  for (int64_t i = 0; i < vocab.size(); ++i) {
    CHECK(loaded.piece(i) == vocab.piece(i));
  }
  std::remove(path.c_str());
}

TEST_CASE("detokenize merges continuations and skips reserved") {
  SubwordVocabulary vocab({"he", "##llo", "world"});
  std::vector<int64_t> ids = {SubwordVocabulary::kCls, vocab.id_of("he"),
                              vocab.id_of("##llo"), vocab.id_of("world"),
                              SubwordVocabulary::kSep};
  CHECK(detokenize(ids, vocab) == "hello world");
}
