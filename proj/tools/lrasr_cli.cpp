// Command-line front end. Talks to the library only through lrasr.h.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lrasr.h"

namespace {

using nlohmann::json;

struct Globals {
  int64_t seed = 1;
  std::string config_path;
  int threads = 1;
  json config = json::object();
};

// Thrown to leave main with the status of a failed library call.
struct Exit {
  int code;
};

void check(lrasr_status s) {
  if (s != LRASR_OK) {
    std::cerr << "error: " << lrasr_last_error() << "\n";
    throw Exit{static_cast<int>(s) == LRASR_ERR_INTERNAL ? 2 : static_cast<int>(s)};
  }
}

[[noreturn]] void usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  throw Exit{1};
}

json section(const Globals& g, const char* name) {
  return g.config.contains(name) ? g.config.at(name) : json::object();
}

std::string take_string(char* s) {
  std::string out = s ? s : "";
  lrasr_string_free(s);
  return out;
}

void print_wer(const lrasr_wer_report& r) {
  std::printf("WER %.2f%% (S=%lld D=%lld I=%lld N=%lld)\n", r.wer_percent,
              static_cast<long long>(r.substitutions), static_cast<long long>(r.deletions),
              static_cast<long long>(r.insertions), static_cast<long long>(r.reference_words));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lrasr: low-resource two-pass speech recognition toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "global random seed")->check(CLI::NonNegativeNumber);
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  // corpus generate
  auto* corpus = app.add_subcommand("corpus", "synthetic corpus tools");
  corpus->require_subcommand(1);
  auto* corpus_gen = corpus->add_subcommand("generate", "render the bilingual corpus");
  std::string corpus_out;
  corpus_gen->add_option("--out", corpus_out, "output directory")->required();

  // bpe train
  auto* bpe = app.add_subcommand("bpe", "subword tokenizer tools");
  bpe->require_subcommand(1);
  auto* bpe_train = bpe->add_subcommand("train", "train a BPE model on manifest transcripts");
  std::vector<std::string> bpe_manifests;
  int bpe_vocab = 48;
  std::string bpe_out;
  bpe_train->add_option("--manifest", bpe_manifests, "manifest(s) with transcripts")->required();
  bpe_train->add_option("--vocab", bpe_vocab, "vocabulary size");
  bpe_train->add_option("--out", bpe_out, "output model file")->required();

  // train
  auto* train = app.add_subcommand("train", "train or fine-tune a model");
  std::vector<std::string> train_manifests;
  std::string train_bpe, train_dev, train_init, train_out, train_log;
  std::vector<std::string> train_freeze;
  int train_epochs = -1;
  double train_lr = -1;
  train->add_option("--manifest", train_manifests, "training manifest, optionally path:weight")
      ->required();
  train->add_option("--bpe", train_bpe, "BPE model")->required();
  train->add_option("--dev", train_dev, "dev manifest for early stopping");
  train->add_option("--init", train_init, "initial checkpoint (default: fresh model)");
  train->add_option("--out", train_out, "output checkpoint")->required();
  train->add_option("--freeze", train_freeze, "groups to freeze")->delimiter(',');
  train->add_option("--epochs", train_epochs, "epochs");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--loss-log", train_log, "JSON-lines loss log");

  // decode
  auto* decode = app.add_subcommand("decode", "beam-search decode a manifest");
  std::string dec_model, dec_bpe, dec_manifest, dec_out, dec_pass = "second";
  int dec_beam = 12, dec_nbest = 1;
  decode->add_option("--model", dec_model, "checkpoint")->required();
  decode->add_option("--bpe", dec_bpe, "BPE model")->required();
  decode->add_option("--manifest", dec_manifest, "manifest to decode")->required();
  decode->add_option("--out", dec_out, "n-best output file")->required();
  decode->add_option("--pass", dec_pass, "first (streaming MoChA) or second (full attention)")
      ->check(CLI::IsMember({"first", "second"}));
  decode->add_option("--beam", dec_beam, "beam size")->check(CLI::PositiveNumber);
  decode->add_option("--nbest", dec_nbest, "hypotheses per utterance")->check(CLI::PositiveNumber);

  // ssl filter
  auto* ssl = app.add_subcommand("ssl", "pseudo-label tools");
  ssl->require_subcommand(1);
  auto* ssl_filter = ssl->add_subcommand("filter", "filter pseudo-labels by beam score");
  std::string ssl_nbest, ssl_threshold, ssl_oracle, ssl_out;
  ssl_filter->add_option("--nbest", ssl_nbest, "n-best file from decode")->required();
  auto* thr = ssl_filter->add_option("--threshold", ssl_threshold, "keep score >= value, or 'all'");
  auto* orc = ssl_filter->add_option("--oracle", ssl_oracle, "sealed reference file");
  thr->excludes(orc);
  ssl_filter->add_option("--out", ssl_out, "kept records")->required();

  // wer
  auto* wer = app.add_subcommand("wer", "score hypotheses");
  std::string wer_ref, wer_hyp;
  wer->add_option("--ref", wer_ref, "reference manifest or sealed file")->required();
  wer->add_option("--hyp", wer_hyp, "n-best file (rank 1 is scored)")->required();

  // pipeline run
  auto* pipeline = app.add_subcommand("pipeline", "experiment plans");
  pipeline->require_subcommand(1);
  auto* pipe_run = pipeline->add_subcommand("run", "run an experiment plan");
  std::string plan_path, plan_stage = "all", plan_out;
  bool seed_given_to_plan = false;
  pipe_run->add_option("--plan", plan_path, "plan JSON")->required();
  pipe_run->add_option("--stage", plan_stage, "stage name or 'all'");
  pipe_run->add_option("--out", plan_out, "output directory")->required();
  pipe_run->add_flag("--override-seed", seed_given_to_plan, "use --seed instead of the plan seed");

  // report
  auto* report = app.add_subcommand("report", "re-render a report");
  std::string rep_results, rep_out;
  report->add_option("--results", rep_results, "results.json")->required();
  report->add_option("--out", rep_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (!g.config_path.empty()) {
      std::ifstream in(g.config_path);
      try {
        g.config = json::parse(in);
      } catch (const json::exception& e) {
        usage_error(std::string("config: ") + e.what());
      }
    }

    if (corpus_gen->parsed()) {
      check(lrasr_corpus_generate(static_cast<uint64_t>(g.seed), g.config.dump().c_str(),
                                  corpus_out.c_str(), g.threads));
      std::cout << "corpus written to " << corpus_out << "\n";
    } else if (bpe_train->parsed()) {
      std::vector<const char*> paths;
      for (const auto& p : bpe_manifests) paths.push_back(p.c_str());
      lrasr_bpe* model = nullptr;
      check(lrasr_bpe_train(paths.data(), static_cast<int>(paths.size()), bpe_vocab, &model));
      const lrasr_status s = lrasr_bpe_save(model, bpe_out.c_str());
      lrasr_bpe_free(model);
      check(s);
    } else if (train->parsed()) {
      json opt = section(g, "train");
      opt["seed"] = g.seed;
      opt["threads"] = g.threads;
      if (train_epochs >= 0) opt["epochs"] = train_epochs;
      if (train_lr > 0) opt["lr"] = train_lr;
      if (!train_log.empty()) opt["loss_log"] = train_log;
      if (!train_dev.empty()) opt["dev"] = train_dev;
      if (!train_freeze.empty()) opt["frozen"] = train_freeze;
      opt["sources"] = json::array();
      for (const auto& m : train_manifests) {
        const auto colon = m.rfind(':');
        json src = {{"manifest", m}, {"weight", 1.0}};
        if (colon != std::string::npos) {
          try {
            src["weight"] = std::stod(m.substr(colon + 1));
            src["manifest"] = m.substr(0, colon);
          } catch (const std::exception&) {
            usage_error("bad manifest weight in '" + m + "'");
          }
        }
        opt["sources"].push_back(src);
      }
      lrasr_bpe* tok = nullptr;
      check(lrasr_bpe_load(train_bpe.c_str(), &tok));
      lrasr_model* model = nullptr;
      lrasr_status s;
      if (!train_init.empty()) {
        s = lrasr_model_load(train_init.c_str(), &model);
      } else {
        json mc = section(g, "model");
        if (!mc.contains("vocab_size")) mc["vocab_size"] = lrasr_bpe_vocab_size(tok);
        s = lrasr_model_create(mc.dump().c_str(), static_cast<uint64_t>(g.seed), &model);
      }
      char* summary = nullptr;
      if (s == LRASR_OK) s = lrasr_model_train(model, tok, opt.dump().c_str(), &summary);
      if (s == LRASR_OK) s = lrasr_model_save(model, train_out.c_str());
      lrasr_model_free(model);
      lrasr_bpe_free(tok);
      check(s);
      std::cout << take_string(summary) << "\n";
    } else if (decode->parsed()) {
      lrasr_bpe* tok = nullptr;
      check(lrasr_bpe_load(dec_bpe.c_str(), &tok));
      lrasr_model* model = nullptr;
      lrasr_status s = lrasr_model_load(dec_model.c_str(), &model);
      if (s == LRASR_OK) {
        s = lrasr_decode_manifest(model, tok, dec_manifest.c_str(),
                                  dec_pass == "first" ? LRASR_PASS_FIRST : LRASR_PASS_SECOND,
                                  dec_beam, dec_nbest, g.threads, dec_out.c_str());
      }
      lrasr_model_free(model);
      lrasr_bpe_free(tok);
      check(s);
    } else if (ssl_filter->parsed()) {
      int kept = 0, pool = 0;
      if (!ssl_oracle.empty()) {
        check(lrasr_oracle_filter(ssl_nbest.c_str(), ssl_oracle.c_str(), ssl_out.c_str(), &kept,
                                  &pool));
      } else {
        if (ssl_threshold.empty()) usage_error("ssl filter needs --threshold or --oracle");
        check(lrasr_ssl_filter(ssl_nbest.c_str(), ssl_threshold.c_str(), ssl_out.c_str(), &kept,
                               &pool));
      }
      std::cout << "kept " << kept << " of " << pool << "\n";
    } else if (wer->parsed()) {
      lrasr_wer_report r{};
      check(lrasr_wer(wer_ref.c_str(), wer_hyp.c_str(), &r));
      print_wer(r);
    } else if (pipe_run->parsed()) {
      auto progress = [](const char* msg, void*) { std::cerr << msg << "\n"; };
      check(lrasr_pipeline_run(plan_path.c_str(), plan_stage.c_str(), plan_out.c_str(),
                               seed_given_to_plan ? g.seed : -1,
                               app.get_option("--threads")->count() ? g.threads : 0, progress,
                               nullptr));
      std::cout << "report written to " << plan_out << "\n";
    } else if (report->parsed()) {
      check(lrasr_report(rep_results.c_str(), rep_out.c_str()));
    }
  } catch (const Exit& e) {
    return e.code;
  }
  return 0;
}
