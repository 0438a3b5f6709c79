#include <doctest.h>

#include <cmath>

#include "lrasr/decoder.hpp"
#include "oracles.hpp"

using namespace lrasr;

namespace {

bool boundaries_increase(const Hypothesis& h) {
  for (size_t i = 1; i < h.boundaries.size(); ++i) {
    if (h.boundaries[i] < h.boundaries[i - 1]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("beam of one is greedy decoding") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const TwoPassModel m = oracle::toy_model(5, seed);
    const FeatMatrix f = oracle::toy_feats(14, seed + 50);
    const EncodedStates enc = encode(m.params(), m.config(), f);
    for (Pass pass : {Pass::First, Pass::Second}) {
      const DecoderRunner runner(m.params(), m.config(), enc, pass);
      BeamOptions opt;
      opt.beam_size = 1;
      const auto beam = beam_search(runner, SpecialIds{}, opt);
      const Hypothesis g = greedy_decode(runner, SpecialIds{}, 0);
      REQUIRE(beam.size() == 1);
      CHECK(beam[0].tokens == g.tokens);
      CHECK(beam[0].log_score == doctest::Approx(g.log_score).epsilon(1e-9));
    }
  }
}

TEST_CASE("exhaustive beam matches brute-force enumeration") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const TwoPassModel m = oracle::toy_model(3, seed, 1.5);
    const EncodedStates enc = encode(m.params(), m.config(), oracle::toy_feats(10, seed + 7));
    const DecoderRunner runner(m.params(), m.config(), enc, Pass::Second);
    BeamOptions opt;
    opt.beam_size = 40;  // 1 + 3 + 9 + 27 sequences
    opt.max_len = 3;
    const auto nbest = beam_search(runner, SpecialIds{}, opt);
    const auto truth = oracle::best_sequence(runner, 3, 3);
    REQUIRE_FALSE(nbest.empty());
    CHECK(nbest[0].tokens == truth.tokens);
    CHECK(std::abs(nbest[0].log_score - truth.score) < 1e-5);
  }
}

TEST_CASE("wider beams never find a worse best hypothesis") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const TwoPassModel m = oracle::toy_model(3, seed, 1.5);
    const EncodedStates enc = encode(m.params(), m.config(), oracle::toy_feats(10, seed + 7));
    const DecoderRunner runner(m.params(), m.config(), enc, Pass::Second);
    const double exhaustive = oracle::best_sequence(runner, 3, 3).score;
    double prev = -INFINITY;
    for (int k : {1, 2, 3, 5, 8, 12, 40}) {
      BeamOptions opt;
      opt.beam_size = k;
      opt.max_len = 3;
      const double top = beam_search(runner, SpecialIds{}, opt)[0].log_score;
      CHECK(top <= exhaustive + 1e-6);
      CHECK(top >= prev - 1e-6);
      prev = top;
    }
  }
}

TEST_CASE("n-best lists are sorted, bounded and rescorable") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    const TwoPassModel m = oracle::toy_model(6, seed);
    const EncodedStates enc = encode(m.params(), m.config(), oracle::toy_feats(16, seed));
    for (Pass pass : {Pass::First, Pass::Second}) {
      const DecoderRunner runner(m.params(), m.config(), enc, pass);
      BeamOptions opt;
      opt.beam_size = 6;
      const auto nbest = beam_search(runner, SpecialIds{}, opt);
      REQUIRE_FALSE(nbest.empty());
      CHECK(nbest.size() <= 6);
      for (size_t i = 0; i < nbest.size(); ++i) {
        const auto& h = nbest[i];
        CHECK(h.finished);
        CHECK(h.log_score <= 0.0);
        if (i > 0) CHECK(nbest[i - 1].log_score >= h.log_score);
        for (int t : h.tokens) CHECK(t >= kNumSpecials);
        CHECK(static_cast<int>(h.tokens.size()) <= runner.frames());
        // A first-pass hypothesis may end at end-of-input instead of eos.
        double with_eos = NAN;
        try {
          with_eos = score_sequence(runner, h.tokens, SpecialIds{}, true);
        } catch (const DataError&) {
        }
        const double without = score_sequence(runner, h.tokens, SpecialIds{}, false);
        const bool match = std::abs(with_eos - h.log_score) < 1e-5 ||
                           (pass == Pass::First && std::abs(without - h.log_score) < 1e-5);
        CHECK(match);
        if (pass == Pass::First) {
          CHECK(h.boundaries.size() == h.tokens.size());
          CHECK(boundaries_increase(h));
        }
      }
    }
  }
}

TEST_CASE("first pass boundaries never move backwards") {
  int decodes = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const TwoPassModel m = oracle::toy_model(4, seed, 0.8);
    BeamOptions opt;
    opt.beam_size = 4;
    for (const auto& h : streaming_decode_first_pass(m, oracle::toy_feats(20, seed), opt)) {
      CHECK(boundaries_increase(h));
      for (int b : h.boundaries) {
        CHECK(b >= 1);
        CHECK(b <= 10);
      }
      ++decodes;
    }
  }
  CHECK(decodes >= 100);
}

TEST_CASE("first pass with no selectable frame yields an empty hypothesis") {
  TwoPassModel m = oracle::toy_model(4, 3);
  m.params().get("mocha.mono.r")(0, 0) = -1000.0f;
  const auto nbest = streaming_decode_first_pass(m, oracle::toy_feats(12, 1));
  REQUIRE(nbest.size() == 1);
  CHECK(nbest[0].tokens.empty());
  CHECK(nbest[0].log_score == 0.0);
  CHECK(nbest[0].finished);
}

TEST_CASE("decoding errors") {
  const TwoPassModel m = oracle::toy_model(4, 3);
  CHECK_THROWS_AS(beam_search_second_pass(m, oracle::toy_feats(0, 1)), DataError);
  BeamOptions bad;
  bad.beam_size = 0;
  CHECK_THROWS_AS(beam_search_second_pass(m, oracle::toy_feats(8, 1), bad), UsageError);
}

TEST_CASE("batch decoding matches serial decoding") {
  const TwoPassModel m = oracle::toy_model(5, 9);
  std::vector<FeatMatrix> feats;
  for (int i = 0; i < 6; ++i) feats.push_back(oracle::toy_feats(10 + i, i));
  BeamOptions opt;
  opt.beam_size = 3;
  for (Pass pass : {Pass::First, Pass::Second}) {
    const auto serial = decode_batch(m, feats, pass, opt, 1);
    const auto threaded = decode_batch(m, feats, pass, opt, 3);
    REQUIRE(serial.size() == feats.size());
    for (size_t i = 0; i < feats.size(); ++i) {
      REQUIRE(serial[i].size() == threaded[i].size());
      for (size_t k = 0; k < serial[i].size(); ++k) {
        CHECK(serial[i][k].tokens == threaded[i][k].tokens);
        CHECK(serial[i][k].log_score == threaded[i][k].log_score);
      }
    }
  }
}

TEST_CASE("n-best record format") {
  const std::vector<NbestEntry> in = {{"utt-1", 1, -0.25, "ab cd"},
                                      {"utt-1", 2, -3.1234567, "ab"},
                                      {"utt-2", 1, 0.0, ""}};
  const std::string text = format_nbest(in);
  CHECK(text.find("utt-1\t2\t-3.123457\tab\n") != std::string::npos);
  const auto out = parse_nbest(text);
  REQUIRE(out.size() == 3);
  CHECK(out[0].text == "ab cd");
  CHECK(out[1].log_score == doctest::Approx(-3.123457));
  CHECK(out[2].text.empty());
  CHECK_THROWS_AS(parse_nbest("a\tb\n"), DataError);
  CHECK_THROWS_AS(parse_nbest("a\tx\t1\tt\n"), DataError);
}
