#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lrasr/corpus.hpp"
#include "lrasr/decoder.hpp"
#include "lrasr/frontend.hpp"
#include "lrasr/model.hpp"
#include "lrasr/tokenizer.hpp"

namespace lrasr {

enum class StageKind { Scratch, Transfer, TtsAugment, Ssl };
const char* stage_kind_name(StageKind k);
StageKind parse_stage_kind(const std::string& s);

struct DataSource {
  std::string name;
  UttList utts;  // labeled
  double weight = 1.0;
};

struct TrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  int batch_size = 8;
  int patience = 3;             // dev evaluations without improvement
  int min_epoch_utts = 0;       // small sources are cycled up to this many
  double label_smoothing = 0.1;
  bool spec_augment = true;
  SpecAugmentPolicy augment;
  int eval_beam = 1;            // beam used for early-stopping dev WER
  int max_dev_utts = 0;         // 0 = whole dev set for early stopping
  std::set<nn::Group> frozen;
  uint64_t seed = 0;
  int threads = 1;
  std::string loss_log_path;    // JSON lines, one record per update
  std::string tag = "train";    // stage name in log records
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double dev_wer = 0.0;
  int utts_used = 0;
  int skipped = 0;
};

struct WerPair {
  double first_pass = 0.0;
  double second_pass = 0.0;
};

struct StageResult {
  TwoPassModel model;
  std::vector<EpochRecord> curve;
  int best_epoch = 0;  // 0 when no training happened
  int utts_per_epoch = 0;
  int skipped_total = 0;
  std::map<std::string, int> stats;  // data statistics (pool sizes, kept counts)
};

// Minimizes the joint loss over the mixed sources. Each source contributes
// round(weight * unit) utterances per epoch, where unit = max |s| / weight
// (scaled up to min_epoch_utts), cycling through reshuffles of smaller
// sources. The best post-training dev checkpoint is kept.
StageResult train_supervised(const TwoPassModel& init, const TrainConfig& cfg,
                             const std::vector<DataSource>& sources, const UttList& dev,
                             const BpeModel& bpe);

// Initializes from the donor (shape-compatible) and fine-tunes on target_small;
// with freeze_encoder both encoder groups stay fixed.
StageResult stage1_transfer(const TwoPassModel& donor, const UttList& target_small,
                            bool freeze_encoder, TrainConfig cfg, const UttList& dev,
                            const BpeModel& bpe);

// Trains on TTS renderings of the text-only pool mixed with target_small.
StageResult stage2_tts(const TwoPassModel& model, const LanguageSpec& target,
                       const UttList& text_only, const UttList& target_small,
                       bool freeze_encoder, TrainConfig cfg, const UttList& dev,
                       const BpeModel& bpe, double tts_weight = 1.0);

struct PseudoLabel {
  std::string utt_id;
  Hypothesis hyp;
  std::string text;
};

std::vector<PseudoLabel> generate_pseudo_labels(const TwoPassModel& model,
                                                const UttList& unlabeled,
                                                const BpeModel& bpe, int beam_size,
                                                int threads,
                                                std::vector<std::string>* failed = nullptr);

struct FilterResult {
  std::vector<PseudoLabel> kept;
  int pool_size = 0;
};

// Keeps labels with log_score >= threshold; nullopt keeps everything.
FilterResult ssl_filter(const std::vector<PseudoLabel>& labels, std::optional<double> threshold);

// Keeps labels whose normalized text equals the sealed reference.
FilterResult oracle_filter(const std::vector<PseudoLabel>& labels,
                           const std::map<std::string, std::string>& sealed);

// Trains on the kept pseudo-labels (their audio comes from `unlabeled`) mixed
// with target_small. Throws when nothing was kept.
StageResult train_with_pseudo_labels(const TwoPassModel& model, const FilterResult& kept,
                                     const UttList& unlabeled, const UttList& target_small,
                                     double pseudo_weight, const TrainConfig& cfg,
                                     const UttList& dev, const BpeModel& bpe);

struct SslOptions {
  std::optional<double> threshold;  // nullopt = keep all
  bool oracle = false;
  int beam_size = 12;
  double pseudo_weight = 1.0;
  std::string nbest_path;  // pseudo-label audit file, optional
};

StageResult stage3_ssl(const TwoPassModel& model, const UttList& unlabeled,
                       const UttList& target_small,
                       const std::map<std::string, std::string>& sealed,
                       const SslOptions& ssl, TrainConfig cfg, const UttList& dev,
                       const BpeModel& bpe);

// Decodes utts with either pass and scores against their transcripts.
struct EvalResult {
  double wer = 0.0;
  std::map<std::string, std::string> hypotheses;
};
EvalResult evaluate(const TwoPassModel& model, const UttList& utts, const BpeModel& bpe,
                    Pass pass, int beam_size, int threads);

// BPE trained on the transcripts of `utts` with the requested size.
BpeModel train_bpe_on(const UttList& utts, int vocab_size);

}  // namespace lrasr
