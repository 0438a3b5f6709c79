#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "lrasr/common.hpp"
#include "lrasr/tokenizer.hpp"

using namespace lrasr;

namespace {

std::vector<std::string> symbols(const BpeModel& m, const TokenSequence& t) {
  std::vector<std::string> out;
  for (int id : t.ids) out.push_back(m.symbol(id));
  return out;
}

std::string random_sentence(Rng& rng, const std::string& alphabet) {
  std::string s;
  const int words = static_cast<int>(uniform_int(rng, 1, 5));
  for (int w = 0; w < words; ++w) {
    if (w > 0) s += ' ';
    const int len = static_cast<int>(uniform_int(rng, 1, 6));
    for (int k = 0; k < len; ++k) s += alphabet[uniform_int(rng, 0, alphabet.size() - 1)];
  }
  return s;
}

const std::vector<std::string> kCorpus = {
    "the cat sat on the mat", "a cat and a hat", "that hat sat there",
    "the mat is flat", "cats and hats and mats"};

}  // namespace

TEST_CASE("first merge is the most frequent pair") {
  // Each "aaab" yields pairs (a,a) x2 and (a,b) x1.
  const BpeModel m = train_bpe({"aaab", "aaab"}, kNumSpecials + 3 + 2);
  REQUIRE_FALSE(m.merges().empty());
  CHECK(m.merges()[0] == std::pair<std::string, std::string>("a", "a"));
}

TEST_CASE("merges apply greedily in priority order") {
  const BpeModel m = BpeModel::deserialize(
      "bpe v1 10\nbase a\nbase b\nbase \xe2\x96\x81\nmerge a a\nmerge aa a\n"
      "special blank 0\nspecial sos 1\nspecial eos 2\nspecial unk 3\n");
  const auto t = m.encode("aaab");
  CHECK(symbols(m, t) == std::vector<std::string>{"aaa", "b"});
  CHECK(m.decode(t.ids) == "aaab");
}

TEST_CASE("corpus without repeated pairs learns no merges") {
  const BpeModel m = train_bpe({"a", "b", "c"}, 50);
  CHECK(m.merges().empty());
  // Base symbols are the characters plus the word-boundary marker.
  CHECK(m.size() == kNumSpecials + 4);
}

TEST_CASE("training is deterministic") {
  const BpeModel a = train_bpe(kCorpus, 40);
  const BpeModel b = train_bpe(kCorpus, 40);
  CHECK(a.merges() == b.merges());
  CHECK(a.serialize() == b.serialize());
  CHECK(a.size() <= 40);
}

TEST_CASE("too-small vocabulary names the minimum") {
  try {
    train_bpe(kCorpus, 5);
    FAIL("expected an error");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("minimum is") != std::string::npos);
  }
  CHECK_THROWS_AS(train_bpe({}, 40), DataError);
}

TEST_CASE("encode edge cases") {
  const BpeModel m = train_bpe(kCorpus, 40);
  CHECK(m.encode("").ids.empty());
  const auto t = m.encode("cat z");
  REQUIRE_FALSE(t.ids.empty());
  CHECK(t.ids.back() == m.specials().unk);
  for (int id : m.encode("the hat").ids) {
    CHECK(id >= 0);
    CHECK(id < m.declared_size());
  }
  CHECK(m.decode(std::vector<int>{}) == "");
  CHECK_THROWS_AS(m.decode(std::vector<int>{m.declared_size() + 5}), DataError);
}

TEST_CASE("specials are distinct and never produced by encode") {
  const BpeModel m = train_bpe(kCorpus, 40);
  const auto& sp = m.specials();
  CHECK(sp.blank != sp.sos);
  CHECK(sp.sos != sp.eos);
  CHECK(sp.eos != sp.unk);
  CHECK(sp.blank != sp.unk);
  for (int id : m.encode("the cat sat on the mat").ids) {
    CHECK_FALSE(m.is_special(id));
  }
}

TEST_CASE("round trip on random text, with and without specials") {
  const BpeModel m = train_bpe(kCorpus, 40);
  const std::string alphabet = "acehmnorst";
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const std::string s = random_sentence(rng, alphabet);
    const auto t = m.encode(s);
    CHECK(m.decode(t.ids) == s);
    CHECK(t.ids.size() <= utf8_chars(s).size());

    std::vector<int> with = {m.specials().sos};
    with.insert(with.end(), t.ids.begin(), t.ids.end());
    with.push_back(m.specials().eos);
    CHECK(m.decode(with) == s);
  }
}

TEST_CASE("model file round trip") {
  const BpeModel m = train_bpe(kCorpus, 40);
  const auto path = std::filesystem::temp_directory_path() / "lrasr_test.bpe";
  m.save(path.string());
  const BpeModel r = BpeModel::load(path.string());
  std::filesystem::remove(path);
  CHECK(r.serialize() == m.serialize());
  CHECK(r.serialize().rfind("bpe v1 40\n", 0) == 0);
  CHECK(r.encode("the flat cats").ids == m.encode("the flat cats").ids);
  CHECK_THROWS_AS(BpeModel::deserialize("bpe v2 10\n"), DataError);
}
