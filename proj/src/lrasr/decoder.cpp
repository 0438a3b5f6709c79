#include "lrasr/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace lrasr {

namespace {

struct Live {
  std::vector<int> tokens;
  std::vector<int> boundaries;
  double score = 0.0;
  DecoderState state;
};

struct Candidate {
  int parent;
  int token;  // -1: end of input (first pass)
  double score;
};

bool allowed(int token, const SpecialIds& sp) {
  return token != sp.blank && token != sp.sos && token != sp.unk;
}

double rank_key(const Hypothesis& h, bool normalized) {
  if (!normalized) return h.log_score;
  return h.log_score / static_cast<double>(h.tokens.size() + 1);
}

// Orders by score, then by token sequence so ties are stable.
bool better(double sa, const std::vector<int>& ta, double sb, const std::vector<int>& tb) {
  if (sa != sb) return sa > sb;
  return ta < tb;
}

}  // namespace

std::vector<Hypothesis> beam_search(const DecoderRunner& runner, const SpecialIds& sp,
                                    const BeamOptions& opt) {
  if (opt.beam_size < 1) throw UsageError("beam_size must be >= 1");
  const int max_len = opt.max_len > 0 ? opt.max_len : runner.frames();

  std::vector<Hypothesis> finished;
  std::vector<Live> live(1);
  live[0].state = runner.initial_state();
  double best_finished = -INFINITY;

  for (int step = 0; !live.empty(); ++step) {
    std::vector<Candidate> cands;
    std::vector<FMat> logp(live.size());
    for (size_t b = 0; b < live.size(); ++b) {
      Live& h = live[b];
      runner.advance_cell(h.state, h.tokens.empty() ? sp.sos : h.tokens.back());
      if (!runner.attend(h.state)) {
        cands.push_back({static_cast<int>(b), -1, h.score});
        continue;
      }
      logp[b] = nn::log_softmax_row_kernel(runner.logits(h.state));
      if (step >= max_len) {
        cands.push_back({static_cast<int>(b), sp.eos, h.score + logp[b](0, sp.eos)});
        continue;
      }
      for (int k = 0; k < logp[b].cols(); ++k) {
        if (allowed(k, sp)) {
          cands.push_back({static_cast<int>(b), k, h.score + logp[b](0, k)});
        }
      }
    }
    auto seq = [&](const Candidate& c) {
      std::vector<int> s = live[c.parent].tokens;
      s.push_back(c.token);
      return s;
    };
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      return seq(a) < seq(b);
    });
    if (static_cast<int>(cands.size()) > opt.beam_size) cands.resize(opt.beam_size);

    std::vector<Live> next;
    for (const Candidate& c : cands) {
      const Live& parent = live[c.parent];
      if (c.token < 0 || c.token == sp.eos) {
        Hypothesis h;
        h.tokens = parent.tokens;
        h.boundaries = parent.boundaries;
        h.log_score = c.score;
        h.finished = true;
        best_finished = std::max(best_finished, c.score);
        finished.push_back(std::move(h));
        continue;
      }
      Live child;
      child.tokens = parent.tokens;
      child.tokens.push_back(c.token);
      child.boundaries = parent.boundaries;
      child.boundaries.push_back(parent.state.boundary);
      child.score = c.score;
      child.state = parent.state;
      next.push_back(std::move(child));
    }
    live = std::move(next);
    // Scores only decrease with length, so no live entry can overtake the
    // best finished one once it falls below it.
    double best_live = -INFINITY;
    for (const Live& h : live) best_live = std::max(best_live, h.score);
    if (!opt.length_normalized && best_live < best_finished) break;
  }

  std::sort(finished.begin(), finished.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return better(rank_key(a, opt.length_normalized), a.tokens,
                  rank_key(b, opt.length_normalized), b.tokens);
  });
  if (static_cast<int>(finished.size()) > opt.beam_size) finished.resize(opt.beam_size);
  return finished;
}

std::vector<Hypothesis> beam_search_second_pass(const TwoPassModel& model,
                                                const FeatMatrix& feats,
                                                const BeamOptions& opt) {
  const EncodedStates enc = encode(model.params(), model.config(), feats);
  const DecoderRunner runner(model.params(), model.config(), enc, Pass::Second);
  return beam_search(runner, SpecialIds{}, opt);
}

std::vector<Hypothesis> streaming_decode_first_pass(const TwoPassModel& model,
                                                    const FeatMatrix& feats,
                                                    const BeamOptions& opt) {
  const EncodedStates enc = encode(model.params(), model.config(), feats);
  const DecoderRunner runner(model.params(), model.config(), enc, Pass::First);
  return beam_search(runner, SpecialIds{}, opt);
}

Hypothesis greedy_decode(const DecoderRunner& runner, const SpecialIds& sp, int max_len) {
  if (max_len <= 0) max_len = runner.frames();
  Hypothesis h;
  DecoderState s = runner.initial_state();
  for (int step = 0;; ++step) {
    runner.advance_cell(s, h.tokens.empty() ? sp.sos : h.tokens.back());
    if (!runner.attend(s)) break;
    const FMat lp = nn::log_softmax_row_kernel(runner.logits(s));
    if (step >= max_len) {
      h.log_score += lp(0, sp.eos);
      break;
    }
    int best = -1;
    for (int k = 0; k < lp.cols(); ++k) {
      if (allowed(k, sp) && (best < 0 || lp(0, k) > lp(0, best))) best = k;
    }
    h.log_score += lp(0, best);
    if (best == sp.eos) break;
    h.tokens.push_back(best);
    h.boundaries.push_back(s.boundary);
  }
  h.finished = true;
  return h;
}

double score_sequence(const DecoderRunner& runner, const std::vector<int>& tokens,
                      const SpecialIds& sp, bool with_eos) {
  DecoderState s = runner.initial_state();
  double total = 0.0;
  int prev = sp.sos;
  const size_t n = tokens.size() + (with_eos ? 1 : 0);
  for (size_t i = 0; i < n; ++i) {
    runner.advance_cell(s, prev);
    if (!runner.attend(s)) throw DataError("sequence runs past the end of input");
    const FMat lp = nn::log_softmax_row_kernel(runner.logits(s));
    prev = i < tokens.size() ? tokens[i] : sp.eos;
    total += lp(0, prev);
  }
  return total;
}

std::string format_nbest(const std::vector<NbestEntry>& entries) {
  std::string out;
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%.6f", e.log_score);
    out += e.utt_id + "\t" + std::to_string(e.rank) + "\t" + buf + "\t" + e.text + "\n";
  }
  return out;
}

std::vector<NbestEntry> parse_nbest(const std::string& text) {
  std::vector<NbestEntry> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      const size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        throw DataError("n-best line " + std::to_string(lineno) + ": expected 4 fields");
      }
      f.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    f.push_back(line.substr(pos));
    NbestEntry e;
    e.utt_id = f[0];
    try {
      e.rank = std::stoi(f[1]);
      e.log_score = std::stod(f[2]);
    } catch (const std::exception&) {
      throw DataError("n-best line " + std::to_string(lineno) + ": bad number");
    }
    e.text = f[3];
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::vector<Hypothesis>> decode_batch(const TwoPassModel& model,
                                                  const std::vector<FeatMatrix>& feats,
                                                  Pass pass, const BeamOptions& opt,
                                                  int threads) {
  std::vector<std::vector<Hypothesis>> out(feats.size());
  parallel_for(static_cast<int>(feats.size()), threads, [&](int i) {
    out[i] = pass == Pass::First ? streaming_decode_first_pass(model, feats[i], opt)
                                 : beam_search_second_pass(model, feats[i], opt);
  });
  return out;
}

}  // namespace lrasr
