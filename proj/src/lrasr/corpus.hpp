#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lrasr/common.hpp"
#include "lrasr/frontend.hpp"

namespace lrasr {

// Acoustic alphabet shared by both languages: one prototype feature vector
// per phone, plus a silence vector used between words.
inline constexpr int kNumPhones = 20;

struct PhoneInventory {
  FeatMatrix prototypes;  // kNumPhones x kNumMelBins
  Eigen::RowVectorXf silence;
};

struct LanguageSpec {
  std::string name;
  std::shared_ptr<const PhoneInventory> phones;
  std::vector<std::string> words;                 // spelled with letters 'a'..'t'
  std::map<std::string, std::vector<int>> lexicon;  // word -> phone ids
  // successors[w] lists (next word, cumulative probability); index W is the
  // sentence-start distribution.
  std::vector<std::vector<std::pair<int, double>>> successors;
  Eigen::RowVectorXf accent;  // language-wide spectral offset
  uint64_t seed = 0;

  std::vector<std::string> sample_sentence(Rng& rng) const;
};

struct LanguageOptions {
  int donor_words = 60;
  int target_words = 40;
  int shared_words = 4;  // words present in both lexicons
  double max_overlap = 0.2;
  double accent_scale = 0.12;
};

std::pair<LanguageSpec, LanguageSpec> generate_language_pair(
    uint64_t global_seed, const LanguageOptions& opt = {});

// |donor words ∩ target words| / min(|donor|, |target|)
double word_overlap(const LanguageSpec& a, const LanguageSpec& b);

struct RenderOptions {
  int min_phone_frames = 4;
  int max_phone_frames = 7;
  int word_gap_frames = 2;
};

struct Rendered {
  FeatureSequence feats;
  std::vector<int> phone_durations;  // per phone, in order (silence excluded)
  int silence_frames = 0;
};

// Real-speech simulator. Speaker 0 is the canonical speaker (no distortion);
// other speakers get a seeded per-dimension scale and shift.
Rendered render_utterance(const LanguageSpec& spec, const std::vector<std::string>& words,
                          int speaker_id, double noise_level, uint64_t seed,
                          const RenderOptions& opt = {});

// Simulated TTS: one fixed voice, fixed durations, a spectral tilt and no
// noise, so every rendering of a text is identical.
Rendered tts_render(const LanguageSpec& spec, const std::vector<std::string>& words,
                    const RenderOptions& opt = {});

// Waveform-backed rendering: each phone becomes a sum of sinusoids at
// phone-specific frequencies, then extract_powermel computes the features.
Waveform render_waveform(const LanguageSpec& spec, const std::vector<std::string>& words,
                         uint64_t seed);

std::vector<std::string> split_words(const std::string& text);
std::string join_words(const std::vector<std::string>& words);

enum class Provenance { Real, Tts, Pseudo };
const char* provenance_name(Provenance p);
Provenance parse_provenance(const std::string& s);

struct Utterance {
  std::string utt_id;
  std::shared_ptr<const FeatMatrix> feats;  // null for text-only records
  std::optional<std::string> transcript;
  Provenance provenance = Provenance::Real;
  std::string feature_path;  // set once written to disk

  int duration_frames() const { return feats ? static_cast<int>(feats->rows()) : 0; }
};

using UttList = std::vector<Utterance>;

struct CorpusSizes {
  int donor = 5000;
  int donor_dev = 100;  // held out for the donor model's early stopping
  int target_large = 2000;
  int target_mid = 200;
  int target_small = 20;
  int dev = 200;
  int test = 200;
  double noise_level = 0.08;
  int donor_speakers = 40;
  int target_speakers = 24;

  void validate() const;
};

struct CorpusSplits {
  UttList donor_train;
  UttList donor_dev;
  UttList target_large;
  UttList target_mid;
  UttList target_small;
  UttList text_only_pool;  // transcripts only
  UttList unlabeled_pool;  // audio only
  UttList dev;
  UttList test;
  std::map<std::string, std::string> sealed_oracle;  // unlabeled utt -> reference
};

struct LanguagePair {
  LanguageSpec donor;
  LanguageSpec target;
};

// Nested target subsets are prefixes of one seeded shuffle; dev and test are
// held out before the shuffle is cut. Utterance content depends only on
// (seed, utt_id), so `threads` does not change the output.
CorpusSplits build_corpus_splits(const LanguagePair& pair, const CorpusSizes& sizes,
                                 uint64_t seed, int threads = 1);

// Renders every text-only record with tts_render (provenance tts). Records
// that fail to render are reported in `failed` and skipped.
UttList render_tts_pool(const LanguageSpec& spec, const UttList& text_only,
                        std::vector<std::string>* failed = nullptr);

// --- manifests ------------------------------------------------------------------

struct ManifestRecord {
  std::string utt_id;
  std::string feature_path;
  int duration_frames = 0;
  Provenance provenance = Provenance::Real;
  std::string transcript;  // empty when unlabeled
};

std::string format_manifest(const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> parse_manifest(const std::string& text);
std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

std::string format_sealed_oracle(const std::map<std::string, std::string>& refs);
std::map<std::string, std::string> parse_sealed_oracle(const std::string& text);

// Writes features as PMEL files under `dir` and one manifest per split plus
// the sealed oracle file. Returns the manifest paths by split name.
std::map<std::string, std::string> write_corpus(const std::string& dir,
                                                const CorpusSplits& splits);

// Writes one manifest `<dir>/<name>.tsv` plus any missing feature files.
std::string write_split(const std::string& dir, const std::string& name, const UttList& utts);

// Loads a manifest and its feature files (relative paths resolve against
// the manifest's directory).
UttList load_manifest_utterances(const std::string& manifest_path);

}  // namespace lrasr
