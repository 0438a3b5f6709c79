#include "lrasr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

namespace lrasr {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

PhoneInventory make_inventory(uint64_t seed) {
  Rng rng(derive_seed(seed, "phones"));
  PhoneInventory inv;
  inv.prototypes.resize(kNumPhones, kNumMelBins);
  for (int p = 0; p < kNumPhones; ++p) {
    // Rejection keeps prototypes well separated.
    for (int attempt = 0;; ++attempt) {
      Eigen::RowVectorXf v = Eigen::RowVectorXf::Constant(kNumMelBins, 0.35f);
      for (int b = 0; b < 2; ++b) {
        const double centre = uniform(rng, 0.0, kNumMelBins - 1);
        const double width = uniform(rng, 1.5, 4.0);
        const double amp = uniform(rng, 0.5, 1.1);
        for (int d = 0; d < kNumMelBins; ++d) {
          const double z = (d - centre) / width;
          v(d) += static_cast<float>(amp * std::exp(-0.5 * z * z));
        }
      }
      bool ok = true;
      for (int q = 0; q < p && ok; ++q) {
        ok = (inv.prototypes.row(q) - v).norm() > 1.0f;
      }
      if (ok || attempt > 1000) {
        inv.prototypes.row(p) = v;
        break;
      }
    }
  }
  inv.silence = Eigen::RowVectorXf::Constant(kNumMelBins, 0.2f);
  return inv;
}

std::string random_word(Rng& rng) {
  const int len = static_cast<int>(uniform_int(rng, 2, 5));
  std::string w;
  for (int i = 0; i < len; ++i) {
    w.push_back(static_cast<char>('a' + uniform_int(rng, 0, kNumPhones - 1)));
  }
  return w;
}

void build_grammar(LanguageSpec& spec, Rng& rng) {
  const int n = static_cast<int>(spec.words.size());
  const int fanout = std::min(n, 5);
  spec.successors.assign(n + 1, {});
  for (int w = 0; w <= n; ++w) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    shuffle(order, rng);
    std::vector<double> weight(fanout);
    double total = 0;
    for (int k = 0; k < fanout; ++k) {
      const double u = uniform(rng, 0.2, 1.0);
      weight[k] = u * u;
      total += weight[k];
    }
    double acc = 0;
    for (int k = 0; k < fanout; ++k) {
      acc += weight[k] / total;
      spec.successors[w].push_back({order[k], k + 1 == fanout ? 1.0 : acc});
    }
  }
}

void fill_lexicon(LanguageSpec& spec) {
  spec.lexicon.clear();
  for (const auto& w : spec.words) {
    std::vector<int> phones;
    for (char ch : w) phones.push_back(ch - 'a');
    spec.lexicon[w] = std::move(phones);
  }
}

struct Speaker {
  Eigen::RowVectorXf scale;
  Eigen::RowVectorXf shift;
};

Speaker make_speaker(uint64_t seed, double scale_sd, double shift_sd) {
  Rng rng(seed);
  Speaker s{Eigen::RowVectorXf(kNumMelBins), Eigen::RowVectorXf(kNumMelBins)};
  for (int d = 0; d < kNumMelBins; ++d) {
    s.scale(d) = static_cast<float>(1.0 + scale_sd * gaussian(rng));
    s.shift(d) = static_cast<float>(shift_sd * gaussian(rng));
  }
  return s;
}

const std::vector<int>& phones_of(const LanguageSpec& spec, const std::string& word) {
  auto it = spec.lexicon.find(word);
  if (it == spec.lexicon.end()) {
    throw DataError("word '" + word + "' is not in the " + spec.name + " lexicon");
  }
  return it->second;
}

// Shared frame layout: silence gap, then per word its phones and a gap.
template <typename Duration, typename Frame>
Rendered assemble(const LanguageSpec& spec, const std::vector<std::string>& words,
                  const RenderOptions& opt, Duration duration, Frame frame) {
  if (words.empty()) throw DataError("cannot render an empty sentence");
  Rendered out;
  std::vector<int> seq;  // phone ids, -1 = silence
  seq.insert(seq.end(), opt.word_gap_frames, -1);
  for (const auto& w : words) {
    for (int p : phones_of(spec, w)) {
      const int d = duration();
      out.phone_durations.push_back(d);
      seq.insert(seq.end(), d, p);
    }
    seq.insert(seq.end(), opt.word_gap_frames, -1);
  }
  out.silence_frames = static_cast<int>((words.size() + 1) * opt.word_gap_frames);
  FeatMatrix m(static_cast<int>(seq.size()), kNumMelBins);
  for (size_t t = 0; t < seq.size(); ++t) {
    const Eigen::RowVectorXf base =
        seq[t] < 0 ? spec.phones->silence
                   : Eigen::RowVectorXf(spec.phones->prototypes.row(seq[t]) + spec.accent);
    m.row(static_cast<int>(t)) = frame(base);
  }
  out.feats.frames = std::move(m);
  return out;
}

}  // namespace

std::vector<std::string> LanguageSpec::sample_sentence(Rng& rng) const {
  const int len = static_cast<int>(uniform_int(rng, 2, 5));
  std::vector<std::string> out;
  int state = static_cast<int>(words.size());  // start
  for (int i = 0; i < len; ++i) {
    const double u = uniform01(rng);
    const auto& succ = successors[state];
    int next = succ.back().first;
    for (const auto& [w, cum] : succ) {
      if (u < cum) {
        next = w;
        break;
      }
    }
    out.push_back(words[next]);
    state = next;
  }
  return out;
}

std::pair<LanguageSpec, LanguageSpec> generate_language_pair(uint64_t global_seed,
                                                             const LanguageOptions& opt) {
  if (opt.shared_words > std::min(opt.donor_words, opt.target_words)) {
    throw UsageError("shared_words exceeds a lexicon size");
  }
  auto inv = std::make_shared<const PhoneInventory>(make_inventory(global_seed));

  LanguageSpec donor, target;
  donor.name = "donor";
  target.name = "target";
  donor.phones = target.phones = inv;
  donor.seed = derive_seed(global_seed, "donor");
  target.seed = derive_seed(global_seed, "target");

  Rng rng(derive_seed(global_seed, "lexicon"));
  std::set<std::string> used;
  while (static_cast<int>(donor.words.size()) < opt.donor_words) {
    auto w = random_word(rng);
    if (used.insert(w).second) donor.words.push_back(w);
  }
  std::vector<std::string> pick = donor.words;
  shuffle(pick, rng);
  target.words.assign(pick.begin(), pick.begin() + opt.shared_words);
  while (static_cast<int>(target.words.size()) < opt.target_words) {
    auto w = random_word(rng);
    if (used.insert(w).second) target.words.push_back(w);
  }
  std::sort(target.words.begin(), target.words.end());
  fill_lexicon(donor);
  fill_lexicon(target);

  Rng g1(derive_seed(donor.seed, "grammar"));
  Rng g2(derive_seed(target.seed, "grammar"));
  build_grammar(donor, g1);
  build_grammar(target, g2);

  donor.accent = Eigen::RowVectorXf::Zero(kNumMelBins);
  target.accent.resize(kNumMelBins);
  Rng ar(derive_seed(target.seed, "accent"));
  for (int d = 0; d < kNumMelBins; ++d) {
    target.accent(d) = static_cast<float>(opt.accent_scale * gaussian(ar));
  }

  if (word_overlap(donor, target) >= opt.max_overlap) {
    throw UsageError("lexicon overlap exceeds max_overlap");
  }
  return {std::move(donor), std::move(target)};
}

double word_overlap(const LanguageSpec& a, const LanguageSpec& b) {
  int shared = 0;
  for (const auto& w : b.words) shared += a.lexicon.count(w) > 0 ? 1 : 0;
  const size_t denom = std::min(a.words.size(), b.words.size());
  return denom == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(denom);
}

Rendered render_utterance(const LanguageSpec& spec, const std::vector<std::string>& words,
                          int speaker_id, double noise_level, uint64_t seed,
                          const RenderOptions& opt) {
  Rng rng(seed);
  Speaker spk{Eigen::RowVectorXf::Ones(kNumMelBins), Eigen::RowVectorXf::Zero(kNumMelBins)};
  if (speaker_id != 0) {
    spk = make_speaker(derive_seed(derive_seed(spec.seed, "speaker"), static_cast<uint64_t>(speaker_id)),
                       0.12, 0.06);
  }
  auto duration = [&] {
    return static_cast<int>(uniform_int(rng, opt.min_phone_frames, opt.max_phone_frames));
  };
  // Durations are drawn first so the noise stream does not shift them.
  std::vector<int> durations;
  for (const auto& w : words) {
    for (size_t i = 0; i < phones_of(spec, w).size(); ++i) durations.push_back(duration());
  }
  size_t next = 0;
  Rng noise(derive_seed(seed, "noise"));
  return assemble(
      spec, words, opt, [&] { return durations[next++]; },
      [&](const Eigen::RowVectorXf& base) {
        Eigen::RowVectorXf v = base.cwiseProduct(spk.scale) + spk.shift;
        if (noise_level > 0) {
          for (int d = 0; d < kNumMelBins; ++d) {
            v(d) += static_cast<float>(noise_level * gaussian(noise));
          }
        }
        return v;
      });
}

Rendered tts_render(const LanguageSpec& spec, const std::vector<std::string>& words,
                    const RenderOptions& opt) {
  static const Speaker voice = make_speaker(hash_string("tts-voice"), 0.05, 0.03);
  Eigen::RowVectorXf tilt(kNumMelBins);
  for (int d = 0; d < kNumMelBins; ++d) {
    tilt(d) = 0.15f * (1.0f - 2.0f * static_cast<float>(d) / (kNumMelBins - 1));
  }
  const int fixed = (opt.min_phone_frames + opt.max_phone_frames) / 2;
  return assemble(
      spec, words, opt, [&] { return fixed; },
      [&](const Eigen::RowVectorXf& base) {
        Eigen::RowVectorXf v = base.cwiseProduct(voice.scale) + voice.shift + tilt;
        return v;
      });
}

Waveform render_waveform(const LanguageSpec& spec, const std::vector<std::string>& words,
                         uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  const int per_phone = 5 * kHopSamples;
  const int gap = 2 * kHopSamples;
  auto silence = [&] {
    for (int i = 0; i < gap; ++i) w.samples.push_back(static_cast<float>(1e-3 * gaussian(rng)));
  };
  silence();
  for (const auto& word : words) {
    for (int p : phones_of(spec, word)) {
      const double f1 = 250.0 + 90.0 * p;
      const double f2 = 1200.0 + 230.0 * ((p * 7) % kNumPhones);
      const double f3 = 3000.0 + 180.0 * ((p * 13) % kNumPhones);
      for (int i = 0; i < per_phone; ++i) {
        const double t = static_cast<double>(i) / kSampleRateHz;
        const double s = 0.3 * std::sin(2 * kPi * f1 * t) + 0.2 * std::sin(2 * kPi * f2 * t) +
                         0.1 * std::sin(2 * kPi * f3 * t) + 1e-3 * gaussian(rng);
        w.samples.push_back(static_cast<float>(s));
      }
    }
    silence();
  }
  return w;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Real: return "real";
    case Provenance::Tts: return "tts";
    case Provenance::Pseudo: return "pseudo";
  }
  return "real";
}

Provenance parse_provenance(const std::string& s) {
  if (s == "real") return Provenance::Real;
  if (s == "tts") return Provenance::Tts;
  if (s == "pseudo") return Provenance::Pseudo;
  throw DataError("unknown provenance '" + s + "'");
}

void CorpusSizes::validate() const {
  if (donor_dev < 0) throw UsageError("corpus sizes: donor_dev must be >= 0");
  if (donor < 1 || dev < 1 || test < 1 || target_small < 1) {
    throw UsageError("corpus sizes: donor, dev, test and target_small must be positive");
  }
  if (!(target_small <= target_mid && target_mid <= target_large)) {
    throw UsageError("corpus sizes: need target_small <= target_mid <= target_large");
  }
  if (noise_level < 0) throw UsageError("corpus sizes: noise_level must be >= 0");
  if (donor_speakers < 1 || target_speakers < 1) {
    throw UsageError("corpus sizes: speaker counts must be positive");
  }
}

namespace {

std::string make_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05d", prefix, i);
  return buf;
}

UttList render_set(const LanguageSpec& spec, const std::vector<std::string>& ids,
                   int speakers, double noise, uint64_t seed, int threads) {
  UttList out(ids.size());
  parallel_for(static_cast<int>(ids.size()), threads, [&](int i) {
    const uint64_t s = derive_seed(seed, ids[i]);
    Rng rng(s);
    const auto words = spec.sample_sentence(rng);
    const int speaker = 1 + static_cast<int>(uniform_int(rng, 0, speakers - 1));
    auto r = render_utterance(spec, words, speaker, noise, derive_seed(s, "render"));
    out[i].utt_id = ids[i];
    out[i].feats = std::make_shared<const FeatMatrix>(std::move(r.feats.frames));
    out[i].transcript = join_words(words);
  });
  return out;
}

}  // namespace

CorpusSplits build_corpus_splits(const LanguagePair& pair, const CorpusSizes& sizes,
                                 uint64_t seed, int threads) {
  sizes.validate();
  CorpusSplits s;

  std::vector<std::string> donor_ids;
  for (int i = 0; i < sizes.donor + sizes.donor_dev; ++i) {
    donor_ids.push_back(make_id("don", i));
  }
  UttList donor = render_set(pair.donor, donor_ids, sizes.donor_speakers, sizes.noise_level,
                             derive_seed(seed, "donor-utts"), threads);
  s.donor_train.assign(donor.begin(), donor.begin() + sizes.donor);
  s.donor_dev.assign(donor.begin() + sizes.donor, donor.end());

  const int total = sizes.target_large + sizes.dev + sizes.test;
  std::vector<std::string> ids;
  for (int i = 0; i < total; ++i) ids.push_back(make_id("tgt", i));
  UttList all = render_set(pair.target, ids, sizes.target_speakers, sizes.noise_level,
                           derive_seed(seed, "target-utts"), threads);
  std::vector<int> order(total);
  for (int i = 0; i < total; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  shuffle(order, rng);

  int k = 0;
  for (; k < sizes.dev; ++k) s.dev.push_back(all[order[k]]);
  for (; k < sizes.dev + sizes.test; ++k) s.test.push_back(all[order[k]]);
  for (; k < total; ++k) s.target_large.push_back(all[order[k]]);
  s.target_mid.assign(s.target_large.begin(), s.target_large.begin() + sizes.target_mid);
  s.target_small.assign(s.target_large.begin(), s.target_large.begin() + sizes.target_small);

  for (int i = sizes.target_small; i < sizes.target_mid; ++i) {
    const Utterance& u = s.target_mid[i];
    Utterance text = u;
    text.feats.reset();
    s.text_only_pool.push_back(text);
    Utterance audio = u;
    audio.transcript.reset();
    s.unlabeled_pool.push_back(audio);
    s.sealed_oracle[u.utt_id] = *u.transcript;
  }
  return s;
}

UttList render_tts_pool(const LanguageSpec& spec, const UttList& text_only,
                        std::vector<std::string>* failed) {
  UttList out;
  for (const auto& u : text_only) {
    try {
      if (!u.transcript) throw DataError("no transcript");
      auto r = tts_render(spec, split_words(*u.transcript));
      Utterance t;
      t.utt_id = u.utt_id + "-tts";
      t.feats = std::make_shared<const FeatMatrix>(std::move(r.feats.frames));
      t.transcript = u.transcript;
      t.provenance = Provenance::Tts;
      out.push_back(std::move(t));
    } catch (const DataError&) {
      if (failed) failed->push_back(u.utt_id);
    }
  }
  return out;
}

// --- manifests ------------------------------------------------------------------

std::string format_manifest(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.utt_id + "\t" + r.feature_path + "\t" + std::to_string(r.duration_frames) + "\t" +
           provenance_name(r.provenance) + "\t" + r.transcript + "\n";
  }
  return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> f;
  size_t pos = 0;
  while (true) {
    const size_t tab = line.find('\t', pos);
    f.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
    if (tab == std::string::npos) break;
    pos = tab + 1;
  }
  return f;
}

}  // namespace

std::vector<ManifestRecord> parse_manifest(const std::string& text) {
  std::vector<ManifestRecord> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 5) {
      throw DataError("manifest line " + std::to_string(lineno) + ": expected 5 fields, got " +
                      std::to_string(f.size()));
    }
    ManifestRecord r;
    r.utt_id = f[0];
    r.feature_path = f[1];
    try {
      r.duration_frames = std::stoi(f[2]);
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(lineno) + ": bad duration");
    }
    r.provenance = parse_provenance(f[3]);
    r.transcript = f[4];
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  return parse_manifest(read_text_file(path));
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  write_text_file(path, format_manifest(records));
}

std::string format_sealed_oracle(const std::map<std::string, std::string>& refs) {
  std::string out = "# sealed oracle references\n";
  for (const auto& [id, text] : refs) out += id + "\t" + text + "\n";
  return out;
}

std::map<std::string, std::string> parse_sealed_oracle(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("sealed oracle: missing tab");
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

namespace {

std::string write_split_impl(const std::string& dir, const std::string& name,
                             const UttList& utts, std::set<std::string>& written) {
  fs::create_directories(fs::path(dir) / "feats");
  std::vector<ManifestRecord> out;
  for (const auto& u : utts) {
    ManifestRecord r;
    r.utt_id = u.utt_id;
    r.provenance = u.provenance;
    r.transcript = u.transcript.value_or("");
    if (u.feats) {
      r.feature_path = "feats/" + u.utt_id + ".pmel";
      r.duration_frames = u.duration_frames();
      if (written.insert(u.utt_id).second) {
        FeatureSequence fsq;
        fsq.frames = *u.feats;
        fsq.utt_id = u.utt_id;
        write_pmel((fs::path(dir) / r.feature_path).string(), fsq);
      }
    }
    out.push_back(std::move(r));
  }
  const std::string path = (fs::path(dir) / (name + ".tsv")).string();
  write_manifest(path, out);
  return path;
}

}  // namespace

std::string write_split(const std::string& dir, const std::string& name, const UttList& utts) {
  std::set<std::string> written;
  return write_split_impl(dir, name, utts, written);
}

std::map<std::string, std::string> write_corpus(const std::string& dir,
                                                const CorpusSplits& splits) {
  std::set<std::string> written;
  std::map<std::string, std::string> paths;
  const std::pair<const char*, const UttList*> all[] = {
      {"donor_train", &splits.donor_train},   {"donor_dev", &splits.donor_dev},
      {"target_large", &splits.target_large}, {"target_mid", &splits.target_mid},
      {"target_small", &splits.target_small}, {"text_only", &splits.text_only_pool},
      {"unlabeled", &splits.unlabeled_pool},  {"dev", &splits.dev},
      {"test", &splits.test}};
  for (const auto& [name, list] : all) {
    paths[name] = write_split_impl(dir, name, *list, written);
  }
  const std::string oracle = (fs::path(dir) / "oracle.sealed.tsv").string();
  write_text_file(oracle, format_sealed_oracle(splits.sealed_oracle));
  paths["oracle"] = oracle;
  return paths;
}

UttList load_manifest_utterances(const std::string& manifest_path) {
  const auto records = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  UttList out;
  for (const auto& r : records) {
    Utterance u;
    u.utt_id = r.utt_id;
    u.provenance = r.provenance;
    u.feature_path = r.feature_path;
    if (!r.transcript.empty()) u.transcript = r.transcript;
    if (!r.feature_path.empty()) {
      fs::path p(r.feature_path);
      if (p.is_relative()) p = base / p;
      auto feat = read_pmel(p.string());
      u.feats = std::make_shared<const FeatMatrix>(std::move(feat.frames));
    }
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace lrasr
