#include "lrasr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "lrasr/losses.hpp"
#include "lrasr/optimizer.hpp"
#include "lrasr/wer.hpp"

namespace lrasr {

const char* stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::Scratch: return "scratch";
    case StageKind::Transfer: return "transfer";
    case StageKind::TtsAugment: return "tts_augment";
    case StageKind::Ssl: return "ssl";
  }
  return "scratch";
}

StageKind parse_stage_kind(const std::string& s) {
  if (s == "scratch") return StageKind::Scratch;
  if (s == "transfer") return StageKind::Transfer;
  if (s == "tts_augment") return StageKind::TtsAugment;
  if (s == "ssl") return StageKind::Ssl;
  throw UsageError("unknown stage kind '" + s + "'");
}

namespace {

struct Example {
  const Utterance* utt;
  std::vector<int> ids;
};

struct UttGrad {
  nn::Gradients<float> grads;
  LossBundle loss;
  bool ok = false;
};

std::vector<std::vector<Example>> tokenize_sources(const std::vector<DataSource>& sources,
                                                   const BpeModel& bpe, int vocab) {
  std::vector<std::vector<Example>> out;
  for (const auto& s : sources) {
    std::vector<Example> ex;
    for (const auto& u : s.utts) {
      if (!u.transcript) throw DataError("source " + s.name + ": " + u.utt_id + " is unlabeled");
      if (!u.feats) throw DataError("source " + s.name + ": " + u.utt_id + " has no audio");
      auto ids = bpe.encode(*u.transcript).ids;
      for (int id : ids) {
        if (id >= vocab) throw DataError("token id exceeds the model vocabulary");
      }
      ex.push_back({&u, std::move(ids)});
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// Per-source draw order that reshuffles each time it wraps around.
class Cycler {
 public:
  Cycler(int n, uint64_t seed) : n_(n), rng_(seed) {}
  int next() {
    if (pos_ == static_cast<int>(order_.size())) {
      order_.resize(n_);
      for (int i = 0; i < n_; ++i) order_[i] = i;
      shuffle(order_, rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  int n_;
  Rng rng_;
  std::vector<int> order_;
  int pos_ = 0;
};

UttGrad utterance_grad(const TwoPassModel& model, const Example& ex, const TrainConfig& cfg,
                       uint64_t seed) {
  UttGrad r;
  nn::Tape<float> t;
  nn::ParamBinding<float> bind(t, model.params());
  FeatMatrix feats = *ex.utt->feats;
  if (cfg.spec_augment) {
    FeatureSequence fs;
    fs.frames = std::move(feats);
    SpecAugmentPolicy pol = cfg.augment;
    pol.seed = derive_seed(seed, "augment");
    feats = spec_augment(fs, pol).frames;
  }
  Rng rng(derive_seed(seed, "forward"));
  ForwardOptions opt{true, &rng};
  const SpecialIds sp;
  try {
    const JointLogits heads = forward_joint(bind, model.config(), feats, ex.ids, sp, opt);
    std::vector<int> targets = ex.ids;
    targets.push_back(sp.eos);
    const auto loss = joint_loss(t, heads, ex.ids, targets, sp.blank, cfg.label_smoothing);
    r.loss = loss.bundle;
    if (!std::isfinite(loss.bundle.l_total)) {
      throw DivergenceError("non-finite loss on " + ex.utt->utt_id);
    }
    t.backward(loss.total);
  } catch (const CtcLengthError&) {
    return r;
  }
  r.grads = nn::Gradients<float>::zeros_like(model.params());
  bind.accumulate(r.grads);
  r.ok = true;
  return r;
}

void log_step(std::ofstream* log, const TrainConfig& cfg, int epoch, long step,
              const LossBundle& mean, int used, double norm) {
  if (log == nullptr) return;
  nlohmann::json j = {{"stage", cfg.tag},       {"epoch", epoch},
                      {"step", step},           {"l_ctc_uni", mean.l_ctc_uni},
                      {"l_ctc_bi", mean.l_ctc_bi}, {"l_ce_mocha", mean.l_ce_mocha},
                      {"l_ce_bfa", mean.l_ce_bfa}, {"l_total", mean.l_total},
                      {"utts", used},           {"grad_norm", norm}};
  *log << j.dump() << "\n";
}

}  // namespace

StageResult train_supervised(const TwoPassModel& init, const TrainConfig& cfg,
                             const std::vector<DataSource>& sources, const UttList& dev,
                             const BpeModel& bpe) {
  if (cfg.batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (cfg.epochs < 0) throw UsageError("epochs must be >= 0");
  StageResult result;
  result.model = init;
  TwoPassModel& model = result.model;
  for (nn::Group g : nn::kAllGroups) {
    model.params().set_trainable(g, cfg.frozen.count(g) == 0);
  }
  if (bpe.declared_size() > model.config().vocab_size) {
    throw UsageError("tokenizer size " + std::to_string(bpe.declared_size()) +
                     " exceeds model vocab_size " + std::to_string(model.config().vocab_size));
  }
  const auto examples = tokenize_sources(sources, bpe, model.config().vocab_size);
  double unit = 0.0, weight_sum = 0.0;
  for (size_t s = 0; s < sources.size(); ++s) {
    if (sources[s].weight <= 0) throw UsageError("mixing weights must be positive");
    if (!examples[s].empty()) {
      unit = std::max(unit, examples[s].size() / sources[s].weight);
      weight_sum += sources[s].weight;
    }
  }
  if (unit == 0.0) throw DataError("no training data");
  if (unit * weight_sum < cfg.min_epoch_utts) unit = cfg.min_epoch_utts / weight_sum;
  std::vector<int> per_source(sources.size(), 0);
  std::vector<Cycler> cyclers;
  for (size_t s = 0; s < sources.size(); ++s) {
    if (!examples[s].empty()) {
      per_source[s] = std::max(1, static_cast<int>(std::lround(sources[s].weight * unit)));
    }
    cyclers.emplace_back(static_cast<int>(examples[s].size()),
                         derive_seed(derive_seed(cfg.seed, "cycle"), s));
    result.stats["source." + sources[s].name] = static_cast<int>(examples[s].size());
    result.utts_per_epoch += per_source[s];
  }

  std::unique_ptr<std::ofstream> log;
  if (!cfg.loss_log_path.empty()) {
    log = std::make_unique<std::ofstream>(cfg.loss_log_path, std::ios::app);
    if (!*log) throw DataError("cannot open loss log " + cfg.loss_log_path);
  }

  UttList dev_subset = dev;
  if (cfg.max_dev_utts > 0 && static_cast<int>(dev_subset.size()) > cfg.max_dev_utts) {
    dev_subset.resize(cfg.max_dev_utts);
  }

  nn::Adam<float> adam(nn::AdamConfig{cfg.lr});
  double best = INFINITY;
  nn::ParamStore<float> best_params;
  int since_best = 0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<const Example*> plan;
    for (size_t s = 0; s < sources.size(); ++s) {
      for (int k = 0; k < per_source[s]; ++k) plan.push_back(&examples[s][cyclers[s].next()]);
    }
    Rng order_rng(derive_seed(derive_seed(cfg.seed, "epoch"), static_cast<uint64_t>(epoch)));
    shuffle(plan, order_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (size_t b0 = 0; b0 < plan.size(); b0 += cfg.batch_size) {
      const int n = static_cast<int>(std::min(plan.size() - b0, size_t(cfg.batch_size)));
      std::vector<UttGrad> parts(n);
      ++step;
      parallel_for(n, cfg.threads, [&](int k) {
        parts[k] = utterance_grad(model, *plan[b0 + k], cfg,
                                  derive_seed(cfg.seed, static_cast<uint64_t>(step),
                                              static_cast<uint64_t>(k)));
      });
      nn::Gradients<float> total = nn::Gradients<float>::zeros_like(model.params());
      LossBundle mean;
      int used = 0;
      for (const auto& p : parts) {
        if (!p.ok) {
          ++rec.skipped;
          continue;
        }
        total.add(p.grads);
        mean.l_ctc_uni += p.loss.l_ctc_uni;
        mean.l_ctc_bi += p.loss.l_ctc_bi;
        mean.l_ce_mocha += p.loss.l_ce_mocha;
        mean.l_ce_bfa += p.loss.l_ce_bfa;
        mean.l_total += p.loss.l_total;
        ++used;
      }
      if (used == 0) continue;
      total.scale(1.0f / used);
      for (double* v : {&mean.l_ctc_uni, &mean.l_ctc_bi, &mean.l_ce_mocha, &mean.l_ce_bfa,
                        &mean.l_total}) {
        *v /= used;
      }
      const double norm = adam.step(model.params(), total);
      log_step(log.get(), cfg, epoch, step, mean, used, norm);
      loss_sum += mean.l_total * used;
      rec.utts_used += used;
    }
    rec.mean_loss = rec.utts_used > 0 ? loss_sum / rec.utts_used : 0.0;
    result.skipped_total += rec.skipped;

    if (!dev_subset.empty()) {
      rec.dev_wer = evaluate(model, dev_subset, bpe, Pass::Second, cfg.eval_beam, cfg.threads).wer;
    }
    result.curve.push_back(rec);
    if (dev_subset.empty()) continue;
    if (rec.dev_wer < best) {
      best = rec.dev_wer;
      best_params = model.params();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (result.best_epoch > 0) {
    for (int i = 0; i < model.params().size(); ++i) {
      model.params().entry(i).value = best_params.entry(i).value;
    }
  } else if (!result.curve.empty()) {
    result.best_epoch = result.curve.back().epoch;
  }
  for (nn::Group g : nn::kAllGroups) model.params().set_trainable(g, true);
  return result;
}

StageResult stage1_transfer(const TwoPassModel& donor, const UttList& target_small,
                            bool freeze_encoder, TrainConfig cfg, const UttList& dev,
                            const BpeModel& bpe) {
  if (freeze_encoder) {
    cfg.frozen.insert(nn::Group::UniEnc);
    cfg.frozen.insert(nn::Group::BiEnc);
  }
  return train_supervised(donor, cfg, {{"target_small", target_small, 1.0}}, dev, bpe);
}

StageResult stage2_tts(const TwoPassModel& model, const LanguageSpec& target,
                       const UttList& text_only, const UttList& target_small,
                       bool freeze_encoder, TrainConfig cfg, const UttList& dev,
                       const BpeModel& bpe, double tts_weight) {
  std::vector<std::string> failed;
  UttList tts = render_tts_pool(target, text_only, &failed);
  if (freeze_encoder) {
    cfg.frozen.insert(nn::Group::UniEnc);
    cfg.frozen.insert(nn::Group::BiEnc);
  }
  std::vector<DataSource> sources = {{"target_small", target_small, 1.0}};
  if (!tts.empty()) sources.push_back({"tts", std::move(tts), tts_weight});
  StageResult r = train_supervised(model, cfg, sources, dev, bpe);
  r.stats["tts_failed"] = static_cast<int>(failed.size());
  return r;
}

std::vector<PseudoLabel> generate_pseudo_labels(const TwoPassModel& model,
                                                const UttList& unlabeled,
                                                const BpeModel& bpe, int beam_size,
                                                int threads,
                                                std::vector<std::string>* failed) {
  std::vector<std::optional<PseudoLabel>> slots(unlabeled.size());
  BeamOptions opt;
  opt.beam_size = beam_size;
  parallel_for(static_cast<int>(unlabeled.size()), threads, [&](int i) {
    const Utterance& u = unlabeled[i];
    if (!u.feats) return;
    try {
      auto nbest = beam_search_second_pass(model, *u.feats, opt);
      if (nbest.empty()) return;
      slots[i] = PseudoLabel{u.utt_id, nbest.front(), bpe.decode(nbest.front().tokens)};
    } catch (const DataError&) {
    }
  });
  std::vector<PseudoLabel> out;
  for (size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) {
      out.push_back(std::move(*slots[i]));
    } else if (failed) {
      failed->push_back(unlabeled[i].utt_id);
    }
  }
  return out;
}

FilterResult ssl_filter(const std::vector<PseudoLabel>& labels,
                        std::optional<double> threshold) {
  FilterResult r;
  r.pool_size = static_cast<int>(labels.size());
  for (const auto& l : labels) {
    if (!threshold || l.hyp.log_score >= *threshold) r.kept.push_back(l);
  }
  return r;
}

FilterResult oracle_filter(const std::vector<PseudoLabel>& labels,
                           const std::map<std::string, std::string>& sealed) {
  FilterResult r;
  r.pool_size = static_cast<int>(labels.size());
  for (const auto& l : labels) {
    auto it = sealed.find(l.utt_id);
    if (it == sealed.end()) throw DataError("no sealed reference for " + l.utt_id);
    if (normalize_text(l.text) == normalize_text(it->second)) r.kept.push_back(l);
  }
  return r;
}

StageResult train_with_pseudo_labels(const TwoPassModel& model, const FilterResult& kept,
                                     const UttList& unlabeled, const UttList& target_small,
                                     double pseudo_weight, const TrainConfig& cfg,
                                     const UttList& dev, const BpeModel& bpe) {
  if (kept.kept.empty()) {
    throw DataError("no pseudo-labels survive the filter; loosen the threshold");
  }
  std::map<std::string, const Utterance*> by_id;
  for (const auto& u : unlabeled) by_id[u.utt_id] = &u;
  UttList pseudo;
  for (const auto& l : kept.kept) {
    auto it = by_id.find(l.utt_id);
    if (it == by_id.end()) throw DataError("pseudo-label for unknown utterance " + l.utt_id);
    Utterance u = *it->second;
    u.transcript = l.text;
    u.provenance = Provenance::Pseudo;
    pseudo.push_back(std::move(u));
  }
  StageResult r = train_supervised(
      model, cfg, {{"target_small", target_small, 1.0}, {"pseudo", pseudo, pseudo_weight}}, dev,
      bpe);
  r.stats["pseudo_pool"] = kept.pool_size;
  r.stats["pseudo_kept"] = static_cast<int>(kept.kept.size());
  return r;
}

StageResult stage3_ssl(const TwoPassModel& model, const UttList& unlabeled,
                       const UttList& target_small,
                       const std::map<std::string, std::string>& sealed,
                       const SslOptions& ssl, TrainConfig cfg, const UttList& dev,
                       const BpeModel& bpe) {
  std::vector<std::string> failed;
  const auto labels =
      generate_pseudo_labels(model, unlabeled, bpe, ssl.beam_size, cfg.threads, &failed);
  if (!ssl.nbest_path.empty()) {
    std::vector<NbestEntry> entries;
    for (const auto& l : labels) entries.push_back({l.utt_id, 1, l.hyp.log_score, l.text});
    write_text_file(ssl.nbest_path, format_nbest(entries));
  }
  const FilterResult kept = ssl.oracle ? oracle_filter(labels, sealed)
                                       : ssl_filter(labels, ssl.threshold);
  StageResult r = train_with_pseudo_labels(model, kept, unlabeled, target_small,
                                           ssl.pseudo_weight, cfg, dev, bpe);
  r.stats["pseudo_failed"] = static_cast<int>(failed.size());
  return r;
}

EvalResult evaluate(const TwoPassModel& model, const UttList& utts, const BpeModel& bpe,
                    Pass pass, int beam_size, int threads) {
  std::vector<FeatMatrix> feats;
  std::map<std::string, std::string> refs;
  for (const auto& u : utts) {
    if (!u.feats || !u.transcript) throw DataError("evaluation needs labeled audio: " + u.utt_id);
    feats.push_back(*u.feats);
    refs[u.utt_id] = *u.transcript;
  }
  BeamOptions opt;
  opt.beam_size = beam_size;
  const auto nbest = decode_batch(model, feats, pass, opt, threads);
  EvalResult r;
  for (size_t i = 0; i < utts.size(); ++i) {
    r.hypotheses[utts[i].utt_id] = nbest[i].empty() ? "" : bpe.decode(nbest[i].front().tokens);
  }
  r.wer = compute_wer(refs, r.hypotheses).wer_percent;
  return r;
}

BpeModel train_bpe_on(const UttList& utts, int vocab_size) {
  std::vector<std::string> text;
  for (const auto& u : utts) {
    if (u.transcript) text.push_back(*u.transcript);
  }
  return train_bpe(text, vocab_size);
}

}  // namespace lrasr
