#include "lrasr/tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

#include "lrasr/common.hpp"

namespace lrasr {
namespace {

const char* const kSpecialNames[kNumSpecials] = {"<blank>", "<sos>", "<eos>",
                                                 "<unk>"};

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) {
        words.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) {
    words.push_back(std::move(cur));
  }
  return words;
}

// Pre-tokens: the first word as-is, every later word prefixed with the
// boundary marker.
std::vector<std::vector<std::string>> pretokenize(std::string_view text) {
  std::vector<std::vector<std::string>> out;
  const auto words = split_words(text);
  for (size_t i = 0; i < words.size(); ++i) {
    std::vector<std::string> syms;
    if (i > 0) {
      syms.emplace_back(BpeModel::kBoundary);
    }
    for (auto& c : utf8_chars(words[i])) {
      syms.push_back(std::move(c));
    }
    out.push_back(std::move(syms));
  }
  return out;
}

using Pair = std::pair<std::string, std::string>;

void merge_in_place(std::vector<std::string>& syms, const Pair& pair) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (size_t i = 0; i < syms.size(); ++i) {
    if (i + 1 < syms.size() && syms[i] == pair.first &&
        syms[i + 1] == pair.second) {
      out.push_back(syms[i] + syms[i + 1]);
      ++i;
    } else {
      out.push_back(std::move(syms[i]));
    }
  }
  syms = std::move(out);
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    size_t len = 1;
    if (lead >= 0xf0) {
      len = 4;
    } else if (lead >= 0xe0) {
      len = 3;
    } else if (lead >= 0xc0) {
      len = 2;
    }
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

const std::string& BpeModel::symbol(int id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " out of range [0, " +
                    std::to_string(size()) + ")");
  }
  return id_to_symbol_[id];
}

int BpeModel::id_of(const std::string& symbol) const {
  auto it = symbol_to_id_.find(symbol);
  return it == symbol_to_id_.end() ? specials_.unk : it->second;
}

bool BpeModel::is_special(int id) const { return id >= 0 && id < kNumSpecials; }

void BpeModel::build_index() {
  id_to_symbol_.clear();
  symbol_to_id_.clear();
  merge_rank_.clear();
  for (const char* name : kSpecialNames) {
    id_to_symbol_.emplace_back(name);
  }
  for (const auto& b : base_) {
    id_to_symbol_.push_back(b);
  }
  for (size_t r = 0; r < merges_.size(); ++r) {
    merge_rank_.emplace(merges_[r], static_cast<int>(r));
    id_to_symbol_.push_back(merges_[r].first + merges_[r].second);
  }
  for (size_t id = 0; id < id_to_symbol_.size(); ++id) {
    symbol_to_id_.emplace(id_to_symbol_[id], static_cast<int>(id));
  }
}

std::vector<std::string> BpeModel::apply_merges(
    std::vector<std::string> syms) const {
  while (syms.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    size_t best_at = 0;
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_rank_.find({syms[i], syms[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_at = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) {
      break;
    }
    merge_in_place(syms, {syms[best_at], syms[best_at + 1]});
  }
  return syms;
}

TokenSequence BpeModel::encode(std::string_view text) const {
  TokenSequence out;
  out.text = std::string(text);
  for (auto& word : pretokenize(text)) {
    // Out-of-alphabet characters become unk and never take part in merges.
    std::vector<std::string> run;
    auto flush = [&] {
      for (const auto& s : apply_merges(std::move(run))) {
        out.ids.push_back(id_of(s));
      }
      run.clear();
    };
    for (auto& s : word) {
      if (symbol_to_id_.count(s) == 0) {
        flush();
        out.ids.push_back(specials_.unk);
      } else {
        run.push_back(std::move(s));
      }
    }
    flush();
  }
  return out;
}

std::string BpeModel::decode(std::span<const int> ids) const {
  std::string joined;
  for (int id : ids) {
    const std::string& s = symbol(id);
    if (id == specials_.sos || id == specials_.eos || id == specials_.blank) {
      continue;
    }
    joined += s;
  }
  // Boundary markers become single spaces; leading/trailing ones vanish.
  std::string out;
  bool pending_space = false;
  for (auto& c : utf8_chars(joined)) {
    if (c == kBoundary) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out += c;
  }
  return out;
}

std::string BpeModel::serialize() const {
  std::ostringstream os;
  os << "bpe v1 " << declared_size_ << "\n";
  for (const auto& b : base_) {
    os << "base " << b << "\n";
  }
  for (const auto& [a, b] : merges_) {
    os << "merge " << a << " " << b << "\n";
  }
  os << "special blank " << specials_.blank << "\n";
  os << "special sos " << specials_.sos << "\n";
  os << "special eos " << specials_.eos << "\n";
  os << "special unk " << specials_.unk << "\n";
  return os.str();
}

BpeModel BpeModel::deserialize(const std::string& text) {
  BpeModel m;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) {
    throw DataError("empty BPE model file");
  }
  {
    std::istringstream hs(line);
    std::string magic, version;
    hs >> magic >> version >> m.declared_size_;
    if (magic != "bpe" || version != "v1" || !hs) {
      throw DataError("bad BPE model header: " + line);
    }
  }
  while (std::getline(is, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "base") {
      std::string s;
      ls >> s;
      m.base_.push_back(s);
    } else if (kind == "merge") {
      std::string a, b;
      ls >> a >> b;
      if (a.empty() || b.empty()) {
        throw DataError("bad merge line: " + line);
      }
      m.merges_.emplace_back(a, b);
    } else if (kind == "special") {
      std::string name;
      int id = -1;
      ls >> name >> id;
      const bool ok = (name == "blank" && id == 0) || (name == "sos" && id == 1) ||
                      (name == "eos" && id == 2) || (name == "unk" && id == 3);
      if (!ok) {
        throw DataError("unsupported special assignment: " + line);
      }
    } else {
      throw DataError("unknown BPE model line: " + line);
    }
  }
  m.build_index();
  if (m.size() > m.declared_size_) {
    throw DataError("BPE model has more symbols than its declared size");
  }
  return m;
}

void BpeModel::save(const std::string& path) const {
  write_text_file(path, serialize());
}

BpeModel BpeModel::load(const std::string& path) {
  return deserialize(read_text_file(path));
}

BpeModel train_bpe(const std::vector<std::string>& corpus, int vocab_size) {
  if (corpus.empty()) {
    throw DataError("cannot train BPE on an empty corpus");
  }
  std::map<std::vector<std::string>, long> word_freq;
  std::set<std::string> alphabet{std::string(BpeModel::kBoundary)};
  for (const auto& line : corpus) {
    for (auto& w : pretokenize(line)) {
      for (const auto& s : w) {
        alphabet.insert(s);
      }
      ++word_freq[std::move(w)];
    }
  }

  BpeModel m;
  m.declared_size_ = vocab_size;
  m.base_.assign(alphabet.begin(), alphabet.end());
  const int minimum = kNumSpecials + static_cast<int>(m.base_.size());
  if (vocab_size < minimum) {
    throw UsageError("vocab_size " + std::to_string(vocab_size) +
                     " too small; minimum is " + std::to_string(minimum) +
                     " (" + std::to_string(kNumSpecials) + " specials + " +
                     std::to_string(m.base_.size()) + " base symbols)");
  }

  std::vector<std::pair<std::vector<std::string>, long>> words(word_freq.begin(),
                                                               word_freq.end());
  const int num_merges = vocab_size - minimum;
  for (int step = 0; step < num_merges; ++step) {
    std::map<Pair, long> counts;
    for (const auto& [syms, freq] : words) {
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        counts[{syms[i], syms[i + 1]}] += freq;
      }
    }
    // std::map iterates pairs in lexicographic order, so strict '>' keeps
    // the smallest pair among equal counts.
    const Pair* best = nullptr;
    long best_count = 1;
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr) {
      break;
    }
    const Pair chosen = *best;
    m.merges_.push_back(chosen);
    for (auto& [syms, freq] : words) {
      merge_in_place(syms, chosen);
    }
  }
  m.build_index();
  return m;
}

}  // namespace lrasr
