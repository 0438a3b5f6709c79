#include "lrasr.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <map>
#include <optional>
#include <new>
#include <string>

#include <json.hpp>

#include "lrasr/corpus.hpp"
#include "lrasr/decoder.hpp"
#include "lrasr/pipeline.hpp"
#include "lrasr/plan.hpp"
#include "lrasr/report.hpp"
#include "lrasr/tokenizer.hpp"
#include "lrasr/wer.hpp"

struct lrasr_bpe {
  lrasr::BpeModel impl;
};

struct lrasr_model {
  lrasr::TwoPassModel impl;
};

namespace {

thread_local std::string g_last_error;

lrasr_status fail(lrasr_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename Fn>
lrasr_status guard(Fn&& fn) {
  try {
    fn();
    return LRASR_OK;
  } catch (const lrasr::Error& e) {
    return fail(static_cast<lrasr_status>(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(LRASR_ERR_USAGE, std::string("json: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(LRASR_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(LRASR_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(LRASR_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw lrasr::UsageError(what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_json(const char* text) {
  if (text == nullptr || *text == '\0') return nlohmann::json::object();
  return nlohmann::json::parse(text);
}

std::optional<double> parse_threshold(const std::string& t) {
  if (t == "all") return std::nullopt;
  try {
    size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw lrasr::UsageError("threshold must be a number or 'all', got '" + t + "'");
  }
}

std::vector<lrasr::PseudoLabel> read_rank1(const std::string& path) {
  std::vector<lrasr::PseudoLabel> out;
  for (const auto& e : lrasr::parse_nbest(lrasr::read_text_file(path))) {
    if (e.rank != 1) continue;
    lrasr::PseudoLabel l;
    l.utt_id = e.utt_id;
    l.hyp.log_score = e.log_score;
    l.hyp.finished = true;
    l.text = e.text;
    out.push_back(std::move(l));
  }
  return out;
}

void write_kept(const std::string& path, const lrasr::FilterResult& r) {
  std::vector<lrasr::NbestEntry> entries;
  for (const auto& l : r.kept) entries.push_back({l.utt_id, 1, l.hyp.log_score, l.text});
  lrasr::write_text_file(path, lrasr::format_nbest(entries));
}

void fill(lrasr_wer_report* out, const lrasr::WerReport& r) {
  out->substitutions = r.substitutions;
  out->deletions = r.deletions;
  out->insertions = r.insertions;
  out->reference_words = r.reference_words;
  out->wer_percent = r.wer_percent;
}

}  // namespace

extern "C" {

const char* lrasr_last_error(void) { return g_last_error.c_str(); }

const char* lrasr_version(void) { return "1.0.0"; }

void lrasr_string_free(char* s) { std::free(s); }

lrasr_status lrasr_bpe_train(const char* const* manifests, int num_manifests, int vocab_size,
                             lrasr_bpe** out) {
  return guard([&] {
    require(out != nullptr && manifests != nullptr && num_manifests > 0, "bpe_train: bad arguments");
    std::vector<std::string> text;
    for (int i = 0; i < num_manifests; ++i) {
      for (const auto& r : lrasr::read_manifest(manifests[i])) {
        if (!r.transcript.empty()) text.push_back(r.transcript);
      }
    }
    *out = new lrasr_bpe{lrasr::train_bpe(text, vocab_size)};
  });
}

lrasr_status lrasr_bpe_load(const char* path, lrasr_bpe** out) {
  return guard([&] {
    require(path != nullptr && out != nullptr, "bpe_load: bad arguments");
    *out = new lrasr_bpe{lrasr::BpeModel::load(path)};
  });
}

lrasr_status lrasr_bpe_save(const lrasr_bpe* bpe, const char* path) {
  return guard([&] {
    require(bpe != nullptr && path != nullptr, "bpe_save: bad arguments");
    bpe->impl.save(path);
  });
}

int lrasr_bpe_vocab_size(const lrasr_bpe* bpe) { return bpe ? bpe->impl.declared_size() : 0; }

lrasr_status lrasr_bpe_encode(const lrasr_bpe* bpe, const char* text, int* ids, int cap,
                              int* count) {
  return guard([&] {
    require(bpe != nullptr && text != nullptr && count != nullptr, "bpe_encode: bad arguments");
    const auto seq = bpe->impl.encode(text);
    *count = static_cast<int>(seq.ids.size());
    for (int i = 0; i < std::min(cap, *count); ++i) ids[i] = seq.ids[i];
  });
}

lrasr_status lrasr_bpe_decode(const lrasr_bpe* bpe, const int* ids, int count, char** text) {
  return guard([&] {
    require(bpe != nullptr && text != nullptr && (ids != nullptr || count == 0),
            "bpe_decode: bad arguments");
    *text = dup_string(bpe->impl.decode(std::span<const int>(ids, count)));
  });
}

void lrasr_bpe_free(lrasr_bpe* bpe) { delete bpe; }

lrasr_status lrasr_model_create(const char* config_json, uint64_t seed, lrasr_model** out) {
  return guard([&] {
    require(out != nullptr, "model_create: bad arguments");
    const auto cfg = lrasr::ModelConfig::from_json(parse_json(config_json));
    *out = new lrasr_model{lrasr::TwoPassModel(cfg, seed)};
  });
}

lrasr_status lrasr_model_load(const char* path, lrasr_model** out) {
  return guard([&] {
    require(path != nullptr && out != nullptr, "model_load: bad arguments");
    *out = new lrasr_model{lrasr::TwoPassModel::load(path)};
  });
}

lrasr_status lrasr_model_save(const lrasr_model* model, const char* path) {
  return guard([&] {
    require(model != nullptr && path != nullptr, "model_save: bad arguments");
    model->impl.save(path);
  });
}

lrasr_status lrasr_model_config(const lrasr_model* model, char** config_json) {
  return guard([&] {
    require(model != nullptr && config_json != nullptr, "model_config: bad arguments");
    *config_json = dup_string(model->impl.config().to_json().dump());
  });
}

void lrasr_model_free(lrasr_model* model) { delete model; }

lrasr_status lrasr_model_train(lrasr_model* model, const lrasr_bpe* bpe,
                               const char* options_json, char** summary_json) {
  return guard([&] {
    require(model != nullptr && bpe != nullptr, "model_train: bad arguments");
    const nlohmann::json opt = parse_json(options_json);
    lrasr::TrainConfig cfg = lrasr::train_config_from_json(opt, {});
    cfg.seed = opt.value("seed", uint64_t{0});
    cfg.threads = opt.value("threads", 1);
    cfg.loss_log_path = opt.value("loss_log", std::string());
    cfg.tag = opt.value("tag", std::string("train"));
    for (const auto& g : opt.value("frozen", nlohmann::json::array())) {
      cfg.frozen.insert(lrasr::nn::parse_group(g.get<std::string>()));
    }
    std::vector<lrasr::DataSource> sources;
    for (const auto& s : opt.at("sources")) {
      const std::string path = s.at("manifest");
      sources.push_back({path, lrasr::load_manifest_utterances(path), s.value("weight", 1.0)});
    }
    lrasr::UttList dev;
    if (opt.contains("dev")) dev = lrasr::load_manifest_utterances(opt.at("dev"));
    auto result = lrasr::train_supervised(model->impl, cfg, sources, dev, bpe->impl);
    model->impl = std::move(result.model);
    if (summary_json != nullptr) {
      nlohmann::json j;
      j["best_epoch"] = result.best_epoch;
      j["utts_per_epoch"] = result.utts_per_epoch;
      j["skipped"] = result.skipped_total;
      j["curve"] = nlohmann::json::array();
      for (const auto& e : result.curve) {
        j["curve"].push_back({{"epoch", e.epoch},
                              {"mean_loss", e.mean_loss},
                              {"dev_wer", e.dev_wer},
                              {"utts", e.utts_used},
                              {"skipped", e.skipped}});
      }
      *summary_json = dup_string(j.dump());
    }
  });
}

lrasr_status lrasr_decode_manifest(const lrasr_model* model, const lrasr_bpe* bpe,
                                   const char* manifest, lrasr_pass pass, int beam_size,
                                   int nbest, int threads, const char* out_path) {
  return guard([&] {
    require(model != nullptr && bpe != nullptr && manifest != nullptr && out_path != nullptr,
            "decode: bad arguments");
    require(pass == LRASR_PASS_FIRST || pass == LRASR_PASS_SECOND, "decode: bad pass");
    require(nbest >= 1, "decode: nbest must be >= 1");
    const auto utts = lrasr::load_manifest_utterances(manifest);
    std::vector<lrasr::FeatMatrix> feats;
    for (const auto& u : utts) {
      if (!u.feats) throw lrasr::DataError("decode: " + u.utt_id + " has no audio");
      feats.push_back(*u.feats);
    }
    lrasr::BeamOptions opt;
    opt.beam_size = beam_size;
    const auto results = lrasr::decode_batch(
        model->impl, feats, pass == LRASR_PASS_FIRST ? lrasr::Pass::First : lrasr::Pass::Second,
        opt, std::max(1, threads));
    std::vector<lrasr::NbestEntry> entries;
    for (size_t i = 0; i < utts.size(); ++i) {
      for (int k = 0; k < std::min<int>(nbest, static_cast<int>(results[i].size())); ++k) {
        entries.push_back({utts[i].utt_id, k + 1, results[i][k].log_score,
                           bpe->impl.decode(results[i][k].tokens)});
      }
    }
    lrasr::write_text_file(out_path, lrasr::format_nbest(entries));
  });
}

lrasr_status lrasr_ssl_filter(const char* nbest_path, const char* threshold,
                              const char* out_path, int* kept, int* pool) {
  return guard([&] {
    require(nbest_path != nullptr && threshold != nullptr && out_path != nullptr,
            "ssl_filter: bad arguments");
    const auto r = lrasr::ssl_filter(read_rank1(nbest_path), parse_threshold(threshold));
    write_kept(out_path, r);
    if (kept) *kept = static_cast<int>(r.kept.size());
    if (pool) *pool = r.pool_size;
  });
}

lrasr_status lrasr_oracle_filter(const char* nbest_path, const char* sealed_path,
                                 const char* out_path, int* kept, int* pool) {
  return guard([&] {
    require(nbest_path != nullptr && sealed_path != nullptr && out_path != nullptr,
            "oracle_filter: bad arguments");
    const auto sealed = lrasr::parse_sealed_oracle(lrasr::read_text_file(sealed_path));
    const auto r = lrasr::oracle_filter(read_rank1(nbest_path), sealed);
    write_kept(out_path, r);
    if (kept) *kept = static_cast<int>(r.kept.size());
    if (pool) *pool = r.pool_size;
  });
}

lrasr_status lrasr_wer(const char* reference_path, const char* nbest_path,
                       lrasr_wer_report* out) {
  return guard([&] {
    require(reference_path != nullptr && nbest_path != nullptr && out != nullptr,
            "wer: bad arguments");
    const std::string text = lrasr::read_text_file(reference_path);
    std::map<std::string, std::string> refs;
    if (text.rfind("# sealed", 0) == 0) {
      refs = lrasr::parse_sealed_oracle(text);
    } else {
      for (const auto& r : lrasr::parse_manifest(text)) refs[r.utt_id] = r.transcript;
    }
    std::map<std::string, std::string> hyps;
    for (const auto& l : read_rank1(nbest_path)) hyps[l.utt_id] = l.text;
    fill(out, lrasr::compute_wer(refs, hyps));
  });
}

lrasr_status lrasr_wer_strings(const char* reference, const char* hypothesis,
                               lrasr_wer_report* out) {
  return guard([&] {
    require(reference != nullptr && hypothesis != nullptr && out != nullptr,
            "wer_strings: bad arguments");
    fill(out, lrasr::compute_wer({{"u", reference}}, {{"u", hypothesis}}));
  });
}

double lrasr_relative_improvement(double base, double arm) {
  return base == 0.0 ? 0.0 : lrasr::relative_improvement(base, arm);
}

lrasr_status lrasr_corpus_generate(uint64_t seed, const char* config_json, const char* out_dir,
                                   int threads) {
  return guard([&] {
    require(out_dir != nullptr, "corpus_generate: bad arguments");
    nlohmann::json j = parse_json(config_json);
    j["seed"] = seed;
    j["stages"] = nlohmann::json::array();
    const auto plan = lrasr::ExperimentPlan::from_json(j);
    auto [donor, target] = lrasr::generate_language_pair(seed, plan.language);
    const lrasr::LanguagePair pair{std::move(donor), std::move(target)};
    const auto splits = lrasr::build_corpus_splits(pair, plan.corpus, seed, std::max(1, threads));
    lrasr::write_corpus(out_dir, splits);
    // Text-only records rendered by the TTS simulator, ready for training.
    lrasr::write_split(out_dir, "tts", lrasr::render_tts_pool(pair.target, splits.text_only_pool));
  });
}

lrasr_status lrasr_pipeline_run(const char* plan_path, const char* stage, const char* out_dir,
                                int64_t seed, int threads, lrasr_progress_fn progress,
                                void* user) {
  return guard([&] {
    require(plan_path != nullptr && out_dir != nullptr, "pipeline_run: bad arguments");
    auto plan = lrasr::ExperimentPlan::load(plan_path);
    if (seed >= 0) plan.seed = static_cast<uint64_t>(seed);
    if (threads > 0) plan.threads = threads;
    lrasr::RunOptions opt;
    opt.out_dir = out_dir;
    opt.stage = stage ? stage : "all";
    if (progress) opt.progress = [&](const std::string& m) { progress(m.c_str(), user); };
    lrasr::run_experiment_plan(plan, opt);
  });
}

lrasr_status lrasr_report(const char* results_path, const char* out_dir) {
  return guard([&] {
    require(results_path != nullptr && out_dir != nullptr, "report: bad arguments");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lrasr::read_text_file(results_path));
    } catch (const nlohmann::json::exception& e) {
      throw lrasr::DataError(std::string("results file: ") + e.what());
    }
    lrasr::emit_report(lrasr::ExperimentResults::from_json(j), out_dir);
  });
}

}  // extern "C"
