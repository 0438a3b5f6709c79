#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "lrasr/corpus.hpp"

using namespace lrasr;
namespace fs = std::filesystem;

namespace {

CorpusSizes tiny_sizes() {
  CorpusSizes s;
  s.donor = 30;
  s.donor_dev = 5;
  s.target_large = 40;
  s.target_mid = 16;
  s.target_small = 6;
  s.dev = 8;
  s.test = 8;
  s.donor_speakers = 4;
  s.target_speakers = 3;
  return s;
}

LanguagePair pair_for(uint64_t seed) {
  auto [d, t] = generate_language_pair(seed);
  return {std::move(d), std::move(t)};
}

std::set<std::string> ids_of(const UttList& l) {
  std::set<std::string> out;
  for (const auto& u : l) out.insert(u.utt_id);
  return out;
}

// Per-frame phone label (-1 for silence) using the shared layout: a gap,
// then each word's phones followed by a gap.
std::vector<int> frame_labels(const LanguageSpec& spec, const std::vector<std::string>& words,
                              const Rendered& r, int gap) {
  std::vector<int> out(gap, -1);
  size_t k = 0;
  for (const auto& w : words) {
    for (int p : spec.lexicon.at(w)) out.insert(out.end(), r.phone_durations[k++], p);
    out.insert(out.end(), gap, -1);
  }
  return out;
}

}  // namespace

TEST_CASE("language pair is deterministic and shares only the acoustic alphabet") {
  const auto [d1, t1] = generate_language_pair(11);
  const auto [d2, t2] = generate_language_pair(11);
  CHECK(d1.words == d2.words);
  CHECK(t1.words == t2.words);
  CHECK(d1.phones->prototypes == d2.phones->prototypes);
  CHECK(d1.phones == t1.phones);

  std::set<int> pd, pt;
  for (const auto& [w, ph] : d1.lexicon) pd.insert(ph.begin(), ph.end());
  for (const auto& [w, ph] : t1.lexicon) pt.insert(ph.begin(), ph.end());
  CHECK(pd == pt);
  CHECK(word_overlap(d1, t1) < 0.2);
  CHECK(word_overlap(d1, t1) > 0.0);

  const auto [d3, t3] = generate_language_pair(12);
  CHECK(d3.words != d1.words);
}

TEST_CASE("canonical speaker without noise concatenates prototypes exactly") {
  const auto p = pair_for(3);
  const std::vector<std::string> words = {p.target.words[0], p.target.words[1]};
  const Rendered r = render_utterance(p.target, words, 0, 0.0, 42);
  RenderOptions opt;
  int phone_frames = 0;
  for (int d : r.phone_durations) {
    CHECK(d >= opt.min_phone_frames);
    CHECK(d <= opt.max_phone_frames);
    phone_frames += d;
  }
  CHECK(r.silence_frames == 3 * opt.word_gap_frames);
  REQUIRE(r.feats.frames.rows() == phone_frames + r.silence_frames);
  const auto labels = frame_labels(p.target, words, r, opt.word_gap_frames);
  REQUIRE(static_cast<int>(labels.size()) == r.feats.frames.rows());
  for (int t = 0; t < r.feats.frames.rows(); ++t) {
    const Eigen::RowVectorXf expect =
        labels[t] < 0 ? p.target.phones->silence
                      : Eigen::RowVectorXf(p.target.phones->prototypes.row(labels[t]) +
                                           p.target.accent);
    CHECK(r.feats.frames.row(t) == expect);
  }
}

TEST_CASE("speakers and noise change the rendering") {
  const auto p = pair_for(3);
  const std::vector<std::string> words = {p.donor.words[2]};
  const auto a = render_utterance(p.donor, words, 1, 0.0, 5);
  const auto b = render_utterance(p.donor, words, 2, 0.0, 5);
  const auto a2 = render_utterance(p.donor, words, 1, 0.0, 5);
  CHECK(a.phone_durations == b.phone_durations);
  CHECK(a.feats.frames == a2.feats.frames);
  CHECK(a.feats.frames != b.feats.frames);
  const auto noisy = render_utterance(p.donor, words, 1, 0.1, 5);
  CHECK(noisy.phone_durations == a.phone_durations);
  CHECK(noisy.feats.frames != a.feats.frames);
}

TEST_CASE("rendering an unknown word is a data error") {
  const auto p = pair_for(3);
  CHECK_THROWS_AS(render_utterance(p.target, {"zzzz"}, 0, 0.0, 1), DataError);
  CHECK_THROWS_AS(tts_render(p.target, {}), DataError);
}

TEST_CASE("TTS is identical across renders and differs from real speech") {
  const auto p = pair_for(5);
  const std::vector<std::string> words = {p.target.words[3], p.target.words[4]};
  const auto a = tts_render(p.target, words);
  const auto b = tts_render(p.target, words);
  CHECK(a.feats.frames == b.feats.frames);
  const auto real = render_utterance(p.target, words, 0, 0.0, 9);
  CHECK(a.feats.frames.cols() == real.feats.frames.cols());
  const int n = static_cast<int>(std::min(a.feats.frames.rows(), real.feats.frames.rows()));
  CHECK((a.feats.frames.topRows(n) - real.feats.frames.topRows(n)).norm() > 0.1f);
}

TEST_CASE("TTS frames are offset from real speech beyond sampling noise") {
  // Noise-free TTS frames sit near the mode of any unimodal fit, so the
  // mismatch is measured as a shift of the frame mean, compared with the
  // shift between two independent real samples.
  const auto p = pair_for(6);
  Rng rng(1);
  auto mean_of = [&](bool tts, int count, uint64_t base) {
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(kNumMelBins);
    long n = 0;
    for (int i = 0; i < count; ++i) {
      const auto words = p.target.sample_sentence(rng);
      const auto r = tts ? tts_render(p.target, words)
                         : render_utterance(p.target, words, 1 + i % 5, 0.08, base + i);
      m += r.feats.frames.cast<double>().colwise().sum();
      n += r.feats.frames.rows();
    }
    return Eigen::RowVectorXd(m / static_cast<double>(n));
  };
  const auto real_a = mean_of(false, 60, 100);
  const auto real_b = mean_of(false, 60, 900);
  const auto tts = mean_of(true, 60, 0);
  const double real_gap = (real_a - real_b).norm();
  const double tts_gap = (real_a - tts).norm();
  CHECK(tts_gap > 3.0 * real_gap);
}

TEST_CASE("held-out real speech is less likely under a density model fitted on TTS") {
  const auto p = pair_for(6);
  Rng rng(3);
  auto frames = [&](bool tts, int count, uint64_t base) {
    std::vector<Eigen::RowVectorXd> out;
    for (int i = 0; i < count; ++i) {
      const auto words = p.target.sample_sentence(rng);
      const auto r = tts ? tts_render(p.target, words)
                         : render_utterance(p.target, words, 1 + i % 10, 0.08, base + i);
      for (int t = 0; t < r.feats.frames.rows(); ++t) {
        out.push_back(r.feats.frames.row(t).cast<double>());
      }
    }
    return out;
  };
  // Diagonal Gaussian, variance floored so a noise-free fit stays proper.
  struct Gauss {
    Eigen::RowVectorXd mean, var;
    double avg_ll(const std::vector<Eigen::RowVectorXd>& xs) const {
      double s = 0;
      for (const auto& x : xs) {
        s -= 0.5 * ((x - mean).array().square() / var.array() + var.array().log()).sum();
      }
      return s / static_cast<double>(xs.size());
    }
  };
  auto fit = [](const std::vector<Eigen::RowVectorXd>& xs) {
    Gauss g{Eigen::RowVectorXd::Zero(kNumMelBins), Eigen::RowVectorXd::Zero(kNumMelBins)};
    for (const auto& x : xs) g.mean += x;
    g.mean /= static_cast<double>(xs.size());
    for (const auto& x : xs) g.var += (x - g.mean).array().square().matrix();
    g.var /= static_cast<double>(xs.size());
    g.var = g.var.array().max(1e-4);
    return g;
  };
  const Gauss on_real = fit(frames(false, 60, 100));
  const Gauss on_tts = fit(frames(true, 60, 0));
  const auto held_out = frames(false, 30, 900);
  CHECK(on_real.avg_ll(held_out) > on_tts.avg_ll(held_out));
}

TEST_CASE("a donor-trained phone classifier transfers to the target language") {
  const auto p = pair_for(8);
  RenderOptions opt;
  Rng rng(2);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(kNumPhones, kNumMelBins);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(kNumPhones);
  for (int i = 0; i < 80; ++i) {
    const auto words = p.donor.sample_sentence(rng);
    const auto r = render_utterance(p.donor, words, 1 + i % 8, 0.08, 300 + i);
    const auto labels = frame_labels(p.donor, words, r, opt.word_gap_frames);
    for (int t = 0; t < r.feats.frames.rows(); ++t) {
      if (labels[t] < 0) continue;
      sums.row(labels[t]) += r.feats.frames.row(t).cast<double>();
      counts(labels[t]) += 1;
    }
  }
  int correct = 0, total = 0;
  for (int i = 0; i < 40; ++i) {
    const auto words = p.target.sample_sentence(rng);
    const auto r = render_utterance(p.target, words, 1 + i % 6, 0.08, 700 + i);
    const auto labels = frame_labels(p.target, words, r, opt.word_gap_frames);
    for (int t = 0; t < r.feats.frames.rows(); ++t) {
      if (labels[t] < 0) continue;
      int best = -1;
      double best_d = INFINITY;
      for (int q = 0; q < kNumPhones; ++q) {
        if (counts(q) == 0) continue;
        const double d =
            (r.feats.frames.row(t).cast<double>() - sums.row(q) / counts(q)).squaredNorm();
        if (d < best_d) best_d = d, best = q;
      }
      correct += best == labels[t] ? 1 : 0;
      ++total;
    }
  }
  const double acc = static_cast<double>(correct) / total;
  CHECK(acc > 2.0 / kNumPhones);
}

TEST_CASE("corpus splits nest, stay disjoint and do not depend on threads") {
  const auto p = pair_for(4);
  const auto sizes = tiny_sizes();
  const auto s = build_corpus_splits(p, sizes, 77, 1);
  CHECK(s.donor_train.size() == 30);
  CHECK(s.donor_dev.size() == 5);
  CHECK(s.target_large.size() == 40);
  CHECK(s.target_mid.size() == 16);
  CHECK(s.target_small.size() == 6);
  CHECK(s.dev.size() == 8);
  CHECK(s.test.size() == 8);
  CHECK(s.text_only_pool.size() == 16 - 6);
  CHECK(s.unlabeled_pool.size() == 16 - 6);

  const auto large = ids_of(s.target_large), mid = ids_of(s.target_mid),
             small = ids_of(s.target_small), dev = ids_of(s.dev), test = ids_of(s.test);
  CHECK(std::includes(large.begin(), large.end(), mid.begin(), mid.end()));
  CHECK(std::includes(mid.begin(), mid.end(), small.begin(), small.end()));
  for (const auto& id : dev) {
    CHECK(large.count(id) == 0);
    CHECK(test.count(id) == 0);
  }
  for (const auto& id : test) CHECK(large.count(id) == 0);

  for (const auto& u : s.text_only_pool) {
    CHECK(u.feats == nullptr);
    CHECK(u.transcript.has_value());
    CHECK(small.count(u.utt_id) == 0);
  }
  for (const auto& u : s.unlabeled_pool) {
    CHECK(u.feats != nullptr);
    CHECK_FALSE(u.transcript.has_value());
    CHECK(s.sealed_oracle.count(u.utt_id) == 1);
  }

  const auto again = build_corpus_splits(p, sizes, 77, 3);
  REQUIRE(again.dev.size() == s.dev.size());
  for (size_t i = 0; i < s.dev.size(); ++i) {
    CHECK(again.dev[i].utt_id == s.dev[i].utt_id);
    CHECK(*again.dev[i].feats == *s.dev[i].feats);
    CHECK(*again.dev[i].transcript == *s.dev[i].transcript);
  }
}

TEST_CASE("inconsistent corpus sizes are rejected") {
  const auto p = pair_for(4);
  auto sizes = tiny_sizes();
  sizes.target_mid = sizes.target_large + 1;
  CHECK_THROWS_AS(build_corpus_splits(p, sizes, 1), UsageError);
  sizes = tiny_sizes();
  sizes.target_small = 0;
  CHECK_THROWS_AS(build_corpus_splits(p, sizes, 1), UsageError);
}

TEST_CASE("TTS pool renders every text-only sentence") {
  const auto p = pair_for(4);
  const auto s = build_corpus_splits(p, tiny_sizes(), 77);
  std::vector<std::string> failed;
  const auto tts = render_tts_pool(p.target, s.text_only_pool, &failed);
  CHECK(failed.empty());
  REQUIRE(tts.size() == s.text_only_pool.size());
  for (size_t i = 0; i < tts.size(); ++i) {
    CHECK(tts[i].provenance == Provenance::Tts);
    CHECK(tts[i].transcript == s.text_only_pool[i].transcript);
    CHECK(tts[i].feats != nullptr);
  }
  UttList bad = {s.text_only_pool[0]};
  bad[0].transcript = "notaword";
  failed.clear();
  CHECK(render_tts_pool(p.target, bad, &failed).empty());
  CHECK(failed.size() == 1);
}

TEST_CASE("waveform rendering goes through the feature extractor") {
  const auto p = pair_for(4);
  const std::vector<std::string> words = {p.target.words[0]};
  const Waveform w = render_waveform(p.target, words, 3);
  const auto feats = extract_powermel(w);
  CHECK(feats.frames.cols() == kNumMelBins);
  CHECK(feats.frames.rows() == num_frames_for_samples(static_cast<int64_t>(w.samples.size())));
  CHECK(feats.frames.allFinite());
  CHECK(render_waveform(p.target, words, 3).samples == w.samples);
}

TEST_CASE("manifests and the sealed oracle round trip through disk") {
  const auto p = pair_for(4);
  const auto s = build_corpus_splits(p, tiny_sizes(), 77);
  const auto dir = fs::temp_directory_path() / "lrasr_corpus_test";
  fs::remove_all(dir);
  const auto paths = write_corpus(dir.string(), s);
  CHECK(paths.count("dev") == 1);
  CHECK(paths.count("oracle") == 1);

  const auto dev = load_manifest_utterances(paths.at("dev"));
  REQUIRE(dev.size() == s.dev.size());
  for (size_t i = 0; i < dev.size(); ++i) {
    CHECK(dev[i].utt_id == s.dev[i].utt_id);
    CHECK(*dev[i].transcript == *s.dev[i].transcript);
    CHECK(dev[i].feats->isApprox(*s.dev[i].feats, 1e-6f));
  }
  const auto text = load_manifest_utterances(paths.at("text_only"));
  for (const auto& u : text) CHECK(u.feats == nullptr);
  const auto unl = read_manifest(paths.at("unlabeled"));
  for (const auto& r : unl) CHECK(r.transcript.empty());

  const auto oracle = parse_sealed_oracle(read_text_file(paths.at("oracle")));
  CHECK(oracle == s.sealed_oracle);

  const std::vector<ManifestRecord> recs = {{"a", "feats/a.pmel", 12, Provenance::Pseudo, "x y"},
                                            {"b", "", 0, Provenance::Tts, ""}};
  const auto back = parse_manifest(format_manifest(recs));
  REQUIRE(back.size() == 2);
  CHECK(back[0].provenance == Provenance::Pseudo);
  CHECK(back[0].duration_frames == 12);
  CHECK(back[1].transcript.empty());
  CHECK_THROWS_AS(parse_manifest("a\tb\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("a\tb\tx\treal\tt\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("a\tb\t1\tsynthetic\tt\n"), DataError);
  fs::remove_all(dir);
}
