#include "lrasr/wer.hpp"

#include <algorithm>
#include <cctype>

#include "lrasr/common.hpp"
#include "lrasr/corpus.hpp"

namespace lrasr {

EditCounts align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const size_t n = ref.size();
  const size_t m = hyp.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1));
  for (size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
  for (size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      const int diag = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  EditCounts c;
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (d[i][j] == d[i - 1][j - 1] + (same ? 0 : 1)) {
        if (!same) ++c.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

std::string normalize_text(const std::string& text) {
  std::string lower;
  lower.reserve(text.size());
  for (unsigned char ch : text) lower.push_back(static_cast<char>(std::tolower(ch)));
  return join_words(split_words(lower));
}

WerReport compute_wer(const std::map<std::string, std::string>& references,
                      const std::map<std::string, std::string>& hypotheses) {
  for (const auto& [id, _] : hypotheses) {
    if (!references.count(id)) throw DataError("hypothesis '" + id + "' has no reference");
  }
  WerReport r;
  for (const auto& [id, ref_text] : references) {
    auto it = hypotheses.find(id);
    if (it == hypotheses.end()) throw DataError("reference '" + id + "' has no hypothesis");
    const auto ref = split_words(normalize_text(ref_text));
    if (ref.empty()) throw DataError("reference '" + id + "' is empty");
    const auto c = align_words(ref, split_words(normalize_text(it->second)));
    r.substitutions += c.substitutions;
    r.deletions += c.deletions;
    r.insertions += c.insertions;
    r.reference_words += static_cast<int64_t>(ref.size());
  }
  if (r.reference_words == 0) throw DataError("no references to score");
  r.wer_percent = 100.0 * static_cast<double>(r.substitutions + r.deletions + r.insertions) /
                  static_cast<double>(r.reference_words);
  return r;
}

}  // namespace lrasr
