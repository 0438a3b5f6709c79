#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lrasr {

struct EditCounts {
  int64_t substitutions = 0;
  int64_t deletions = 0;
  int64_t insertions = 0;
  int64_t total() const { return substitutions + deletions + insertions; }
};

// Unit-cost word Levenshtein alignment; among minimum-cost alignments the
// backtrace prefers a substitution over a deletion/insertion pair.
EditCounts align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

struct WerReport {
  int64_t substitutions = 0;
  int64_t deletions = 0;
  int64_t insertions = 0;
  int64_t reference_words = 0;
  double wer_percent = 0.0;
};

// Lowercase and collapse whitespace runs.
std::string normalize_text(const std::string& text);

// Corpus WER pooled over utterances: 100 * sum(edits) / sum(ref words).
// Every hypothesis key must have a reference and vice versa; references must
// be non-empty after normalization.
WerReport compute_wer(const std::map<std::string, std::string>& references,
                      const std::map<std::string, std::string>& hypotheses);

}  // namespace lrasr
