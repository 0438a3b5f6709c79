#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lrasr/model.hpp"
#include "lrasr/tokenizer.hpp"

namespace lrasr {

struct Hypothesis {
  std::vector<int> tokens;  // sos/eos stripped
  double log_score = 0.0;   // sum of per-token log-probabilities
  bool finished = false;
  std::vector<int> boundaries;  // first pass only: MoChA frame per token
};

struct BeamOptions {
  int beam_size = 12;
  int max_len = 0;  // tokens before a forced eos; 0 = encoder length
  bool length_normalized = false;  // rank finished hypotheses by score/len
};

// Label-synchronous beam search over the BFA decoder. Hypotheses finish on
// eos; at max_len eos is forced. Returns up to beam_size finished
// hypotheses, best first.
std::vector<Hypothesis> beam_search_second_pass(const TwoPassModel& model,
                                                const FeatMatrix& feats,
                                                const BeamOptions& opt = {});

// Same search driven by hard MoChA steps over Uni-Enc. A hypothesis also
// finishes (without eos) when no frame past its boundary is selected.
std::vector<Hypothesis> streaming_decode_first_pass(const TwoPassModel& model,
                                                    const FeatMatrix& feats,
                                                    const BeamOptions& opt = {});

std::vector<Hypothesis> beam_search(const DecoderRunner& runner, const SpecialIds& sp,
                                    const BeamOptions& opt);

// Argmax decoding with the same token restrictions as the beam.
Hypothesis greedy_decode(const DecoderRunner& runner, const SpecialIds& sp, int max_len);

// Teacher-forced log-probability of `tokens` (plus eos when with_eos).
double score_sequence(const DecoderRunner& runner, const std::vector<int>& tokens,
                      const SpecialIds& sp, bool with_eos);

struct NbestEntry {
  std::string utt_id;
  int rank = 0;
  double log_score = 0.0;
  std::string text;
};

// "utt_id \t rank \t log_score(%.6f) \t text" per line.
std::string format_nbest(const std::vector<NbestEntry>& entries);
std::vector<NbestEntry> parse_nbest(const std::string& text);

// Decodes feats[i] for every i on `threads` workers; output order follows
// input order and each result depends only on its own input.
std::vector<std::vector<Hypothesis>> decode_batch(const TwoPassModel& model,
                                                  const std::vector<FeatMatrix>& feats,
                                                  Pass pass, const BeamOptions& opt,
                                                  int threads);

}  // namespace lrasr
