#include "lrasr/plan.hpp"

#include <chrono>
#include <filesystem>

namespace lrasr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::optional<double> parse_threshold(const json& v) {
  if (v.is_string()) {
    if (v.get<std::string>() == "all") return std::nullopt;
    throw UsageError("threshold must be a number or \"all\"");
  }
  return v.get<double>();
}

}  // namespace

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  maybe(j, "epochs", c.epochs);
  maybe(j, "lr", c.lr);
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "patience", c.patience);
  maybe(j, "min_epoch_utts", c.min_epoch_utts);
  maybe(j, "label_smoothing", c.label_smoothing);
  maybe(j, "spec_augment", c.spec_augment);
  maybe(j, "eval_beam", c.eval_beam);
  maybe(j, "max_dev_utts", c.max_dev_utts);
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    maybe(a, "num_freq_masks", c.augment.num_freq_masks);
    maybe(a, "max_freq_width", c.augment.max_freq_width);
    maybe(a, "num_time_masks", c.augment.num_time_masks);
    maybe(a, "max_time_width", c.augment.max_time_width);
  }
  return c;
}

ExperimentPlan ExperimentPlan::from_json(const json& j) {
  ExperimentPlan p;
  try {
    maybe(j, "seed", p.seed);
    maybe(j, "threads", p.threads);
    maybe(j, "vocab_size", p.vocab_size);
    maybe(j, "beam_size", p.beam_size);
    maybe(j, "save_checkpoints", p.save_checkpoints);
    if (j.contains("corpus")) {
      const json& c = j.at("corpus");
      maybe(c, "donor", p.corpus.donor);
      maybe(c, "donor_dev", p.corpus.donor_dev);
      maybe(c, "target_large", p.corpus.target_large);
      maybe(c, "target_mid", p.corpus.target_mid);
      maybe(c, "target_small", p.corpus.target_small);
      maybe(c, "dev", p.corpus.dev);
      maybe(c, "test", p.corpus.test);
      maybe(c, "noise_level", p.corpus.noise_level);
      maybe(c, "donor_speakers", p.corpus.donor_speakers);
      maybe(c, "target_speakers", p.corpus.target_speakers);
    }
    if (j.contains("language")) {
      const json& l = j.at("language");
      maybe(l, "donor_words", p.language.donor_words);
      maybe(l, "target_words", p.language.target_words);
      maybe(l, "shared_words", p.language.shared_words);
      maybe(l, "max_overlap", p.language.max_overlap);
      maybe(l, "accent_scale", p.language.accent_scale);
    }
    json model = j.value("model", json::object());
    model["vocab_size"] = p.vocab_size;
    p.model = ModelConfig::from_json(model);
    p.train = train_config_from_json(j.value("train", json::object()), p.train);

    std::set<std::string> names;
    for (const json& s : j.at("stages")) {
      StagePlan st;
      st.name = s.at("name");
      if (!names.insert(st.name).second) throw UsageError("duplicate stage '" + st.name + "'");
      st.kind = parse_stage_kind(s.at("kind"));
      maybe(s, "language", st.language);
      if (st.language != "donor" && st.language != "target") {
        throw UsageError("stage " + st.name + ": language must be donor or target");
      }
      maybe(s, "init", st.init);
      if (s.contains("frozen")) {
        std::set<nn::Group> g;
        for (const auto& name : s.at("frozen")) g.insert(nn::parse_group(name.get<std::string>()));
        st.frozen = g;
      }
      for (const json& d : s.value("data", json::array())) {
        st.data.push_back({d.at("source"), d.value("weight", 1.0)});
      }
      if (s.contains("threshold")) st.threshold = parse_threshold(s.at("threshold"));
      maybe(s, "oracle", st.oracle);
      st.report = s.value("report", st.language == "target");
      st.train = s.value("train", json::object());
      if (s.contains("epochs")) st.train["epochs"] = s.at("epochs");
      if (s.contains("lr")) st.train["lr"] = s.at("lr");
      if (st.kind != StageKind::Scratch && st.init.empty()) {
        throw UsageError("stage " + st.name + ": kind " + stage_kind_name(st.kind) +
                         " needs an init stage");
      }
      if (!st.init.empty() && !names.count(st.init)) {
        throw UsageError("stage " + st.name + ": init '" + st.init +
                         "' must name an earlier stage");
      }
      p.stages.push_back(std::move(st));
    }
    if (j.contains("sweep")) {
      SweepPlan sw;
      sw.init = j.at("sweep").at("init");
      if (!names.count(sw.init)) throw UsageError("sweep init '" + sw.init + "' is not a stage");
      for (const json& t : j.at("sweep").at("thresholds")) sw.thresholds.push_back(parse_threshold(t));
      maybe(j.at("sweep"), "train", sw.train);
      p.sweep = sw;
    }
    for (const json& c : j.value("comparisons", json::array())) {
      p.comparisons.push_back({c.at("label"), c.at("base"), c.at("arm")});
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("plan: ") + e.what());
  }
  p.corpus.validate();
  if (p.threads < 1) throw UsageError("plan: threads must be >= 1");
  return p;
}

ExperimentPlan ExperimentPlan::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw UsageError("plan " + path + ": " + e.what());
  }
  return from_json(j);
}

const StagePlan* ExperimentPlan::find(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

namespace {

class Runner {
 public:
  Runner(const ExperimentPlan& plan, const RunOptions& opt) : plan_(plan), opt_(opt) {}

  ExperimentResults run() {
    results_.seed = plan_.seed;
    results_.comparisons = plan_.comparisons;
    const std::set<std::string> wanted = required_stages();
    try {
      setup();
      for (const auto& st : plan_.stages) {
        if (wanted.count(st.name)) run_stage(st);
      }
      if (plan_.sweep && (opt_.stage == "all")) run_sweep(*plan_.sweep);
    } catch (const Error& e) {
      results_.complete = false;
      results_.error = e.what();
      if (!results_.arms.empty() && !opt_.out_dir.empty()) emit_report(results_, opt_.out_dir);
      throw;
    }
    if (!opt_.out_dir.empty() && !results_.arms.empty()) emit_report(results_, opt_.out_dir);
    return results_;
  }

 private:
  void say(const std::string& msg) {
    if (opt_.progress) opt_.progress(msg);
  }

  std::set<std::string> required_stages() const {
    std::set<std::string> out;
    if (opt_.stage == "all") {
      for (const auto& s : plan_.stages) out.insert(s.name);
      return out;
    }
    const StagePlan* s = plan_.find(opt_.stage);
    if (!s) throw UsageError("no stage named '" + opt_.stage + "' in the plan");
    while (s) {
      out.insert(s->name);
      s = s->init.empty() ? nullptr : plan_.find(s->init);
    }
    return out;
  }

  void setup() {
    if (!opt_.out_dir.empty()) {
      fs::create_directories(opt_.out_dir);
      loss_log_ = (fs::path(opt_.out_dir) / "loss_log.jsonl").string();
      std::error_code ec;
      fs::remove(loss_log_, ec);
    }
    say("generating corpus");
    auto [donor, target] = generate_language_pair(plan_.seed, plan_.language);
    pair_ = LanguagePair{std::move(donor), std::move(target)};
    splits_ = build_corpus_splits(pair_, plan_.corpus, plan_.seed, plan_.threads);
    donor_bpe_ = train_bpe_on(splits_.donor_train, plan_.vocab_size);
    target_bpe_ = train_bpe_on(splits_.target_mid, plan_.vocab_size);
  }

  const BpeModel& bpe_for(const StagePlan& st) const {
    return st.language == "donor" ? donor_bpe_ : target_bpe_;
  }

  const UttList& dev_for(const StagePlan& st) const {
    return st.language == "donor" ? splits_.donor_dev : splits_.dev;
  }

  const UttList& source(const std::string& name) const {
    if (name == "donor_train") return splits_.donor_train;
    if (name == "target_small") return splits_.target_small;
    if (name == "target_mid") return splits_.target_mid;
    if (name == "target_large") return splits_.target_large;
    throw UsageError("unknown data source '" + name + "'");
  }

  TrainConfig config_for(const StagePlan& st) const {
    TrainConfig cfg = train_config_from_json(st.train, plan_.train);
    cfg.seed = derive_seed(plan_.seed, "train:" + st.name);
    cfg.threads = plan_.threads;
    cfg.loss_log_path = loss_log_;
    cfg.tag = st.name;
    if (st.frozen) {
      cfg.frozen = *st.frozen;
    } else if (st.kind == StageKind::TtsAugment) {
      cfg.frozen = {nn::Group::UniEnc, nn::Group::BiEnc};
    }
    return cfg;
  }

  const std::vector<PseudoLabel>& pseudo_labels(const std::string& init) {
    auto it = pseudo_.find(init);
    if (it != pseudo_.end()) return it->second;
    say("pseudo-labelling with " + init);
    std::vector<std::string> failed;
    auto labels = generate_pseudo_labels(models_.at(init), splits_.unlabeled_pool, target_bpe_,
                                         plan_.beam_size, plan_.threads, &failed);
    if (!opt_.out_dir.empty()) {
      std::vector<NbestEntry> entries;
      for (const auto& l : labels) entries.push_back({l.utt_id, 1, l.hyp.log_score, l.text});
      write_text_file((fs::path(opt_.out_dir) / ("pseudo_" + init + ".nbest")).string(),
                      format_nbest(entries));
    }
    return pseudo_[init] = std::move(labels);
  }

  StageResult train_ssl(const StagePlan& st, const TrainConfig& cfg, const TwoPassModel& init,
                        const std::vector<PseudoLabel>& labels, std::optional<double> threshold,
                        bool oracle) {
    const FilterResult kept = oracle ? oracle_filter(labels, splits_.sealed_oracle)
                                     : ssl_filter(labels, threshold);
    double weight = 1.0;
    for (const auto& d : st.data) {
      if (d.source == "pseudo") weight = d.weight;
    }
    return train_with_pseudo_labels(init, kept, splits_.unlabeled_pool, splits_.target_small,
                                    weight, cfg, splits_.dev, target_bpe_);
  }

  std::vector<DataSource> sources_for(const StagePlan& st) {
    std::vector<DataSource> out;
    std::vector<SourceRef> refs = st.data;
    if (refs.empty()) {
      if (st.language == "donor") {
        refs.push_back({"donor_train", 1.0});
      } else {
        refs.push_back({"target_small", 1.0});
        if (st.kind == StageKind::TtsAugment) refs.push_back({"tts", 1.0});
      }
    }
    for (const auto& r : refs) {
      if (r.source == "tts") {
        std::vector<std::string> failed;
        out.push_back({"tts", render_tts_pool(pair_.target, splits_.text_only_pool, &failed),
                       r.weight});
        tts_failed_ = static_cast<int>(failed.size());
        if (out.back().utts.empty()) out.pop_back();
      } else {
        out.push_back({r.source, source(r.source), r.weight});
      }
    }
    return out;
  }

  void run_stage(const StagePlan& st) {
    const auto t0 = std::chrono::steady_clock::now();
    say("stage " + st.name + " (" + stage_kind_name(st.kind) + ")");
    const TrainConfig cfg = config_for(st);
    TwoPassModel init = st.init.empty()
                            ? TwoPassModel(plan_.model, derive_seed(plan_.seed, "init:" + st.name))
                            : models_.at(st.init);
    StageResult r;
    if (st.kind == StageKind::Ssl) {
      r = train_ssl(st, cfg, init, pseudo_labels(st.init), st.threshold, st.oracle);
    } else {
      r = train_supervised(init, cfg, sources_for(st), dev_for(st), bpe_for(st));
      if (st.kind == StageKind::TtsAugment) r.stats["tts_failed"] = tts_failed_;
    }
    models_[st.name] = r.model;
    if (plan_.save_checkpoints && !opt_.out_dir.empty()) {
      fs::create_directories(fs::path(opt_.out_dir) / "ckpt");
      r.model.save((fs::path(opt_.out_dir) / "ckpt" / (st.name + ".ckpt")).string());
    }
    if (st.report) {
      ArmResult a;
      a.name = st.name;
      a.kind = stage_kind_name(st.kind);
      a.init = st.init;
      a.best_epoch = r.best_epoch;
      const UttList& dev = dev_for(st);
      a.dev_first = eval(r.model, dev, Pass::First, st);
      a.dev_second = eval(r.model, dev, Pass::Second, st);
      a.test_first = eval(r.model, splits_.test, Pass::First, st);
      a.test_second = eval(r.model, splits_.test, Pass::Second, st);
      for (const auto& [k, v] : r.stats) a.stats[k] = v;
      a.stats["epochs_run"] = static_cast<double>(r.curve.size());
      a.stats["skipped_utts"] = r.skipped_total;
      results_.arms.push_back(std::move(a));
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string msg = "stage " + st.name + " done: " + std::to_string(r.curve.size()) +
                      " epochs, best " + std::to_string(r.best_epoch);
    if (st.report) msg += ", dev WER " + format_fixed(results_.arms.back().dev_second, 2);
    say(msg + " (" + format_fixed(secs, 1) + " s)");
  }

  double eval(const TwoPassModel& m, const UttList& utts, Pass pass, const StagePlan& st) {
    return evaluate(m, utts, bpe_for(st), pass, plan_.beam_size, plan_.threads).wer;
  }

  void run_sweep(const SweepPlan& sw) {
    const auto& labels = pseudo_labels(sw.init);
    const StagePlan* init_plan = plan_.find(sw.init);
    for (const auto& t : sw.thresholds) {
      const FilterResult f = ssl_filter(labels, t);
      SweepRow row;
      row.threshold = t;
      row.kept = static_cast<int>(f.kept.size());
      row.pool = f.pool_size;
      if (sw.train && !f.kept.empty()) {
        StagePlan st;
        st.name = "sweep_" + (t ? format_fixed(*t, 1) : std::string("all"));
        st.kind = StageKind::Ssl;
        st.init = sw.init;
        st.train = init_plan->train;
        const TrainConfig cfg = config_for(st);
        const StageResult r = train_ssl(st, cfg, models_.at(sw.init), labels, t, false);
        row.dev_wer = eval(r.model, splits_.dev, Pass::Second, st);
        row.test_wer = eval(r.model, splits_.test, Pass::Second, st);
      }
      results_.sweep.push_back(row);
    }
  }

  const ExperimentPlan& plan_;
  const RunOptions& opt_;
  ExperimentResults results_;
  LanguagePair pair_;
  CorpusSplits splits_;
  BpeModel donor_bpe_, target_bpe_;
  std::map<std::string, TwoPassModel> models_;
  std::map<std::string, std::vector<PseudoLabel>> pseudo_;
  std::string loss_log_;
  int tts_failed_ = 0;
};

}  // namespace

ExperimentResults run_experiment_plan(const ExperimentPlan& plan, const RunOptions& opt) {
  return Runner(plan, opt).run();
}

}  // namespace lrasr
