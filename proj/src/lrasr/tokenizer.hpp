#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lrasr {

struct SpecialIds {
  int blank = 0;  // reserved for CTC, never produced by the decoders
  int sos = 1;
  int eos = 2;
  int unk = 3;
};

inline constexpr int kNumSpecials = 4;

struct TokenSequence {
  std::vector<int> ids;
  std::string text;
};

// Byte-pair-encoding subword model over Unicode code points. Every space in
// the text becomes a word-boundary marker (U+2581) prefixed to the word that
// follows it; merges never cross word boundaries.
class BpeModel {
 public:
  static constexpr std::string_view kBoundary = "\xe2\x96\x81";

  BpeModel() = default;

  // Number of ids actually assigned (<= declared_size()).
  int size() const { return static_cast<int>(id_to_symbol_.size()); }
  // The vocabulary size requested at training time; the width of the model's
  // output layers.
  int declared_size() const { return declared_size_; }
  const SpecialIds& specials() const { return specials_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }
  const std::vector<std::string>& base_symbols() const { return base_; }
  const std::string& symbol(int id) const;
  int id_of(const std::string& symbol) const;
  bool is_special(int id) const;

  TokenSequence encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  std::string serialize() const;
  static BpeModel deserialize(const std::string& text);
  void save(const std::string& path) const;
  static BpeModel load(const std::string& path);

  friend BpeModel train_bpe(const std::vector<std::string>& corpus,
                            int vocab_size);

 private:
  void build_index();
  std::vector<std::string> apply_merges(std::vector<std::string> symbols) const;

  int declared_size_ = 0;
  SpecialIds specials_;
  std::vector<std::string> base_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::vector<std::string> id_to_symbol_;
  std::unordered_map<std::string, int> symbol_to_id_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
};

// Trains merges until the vocabulary reaches vocab_size or no pair occurs
// more than once. Pair-count ties break on the lexicographically smallest
// pair, so training is deterministic for a given corpus.
BpeModel train_bpe(const std::vector<std::string>& corpus, int vocab_size);

// Splits UTF-8 text into code points (each returned as its UTF-8 bytes).
std::vector<std::string> utf8_chars(std::string_view text);

}  // namespace lrasr
