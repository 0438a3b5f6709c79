// Exercises the shared library through lrasr.h only.
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lrasr.h"

namespace fs = std::filesystem;

namespace {

const char* kCorpusConfig = R"({"corpus": {"donor": 6, "donor_dev": 1, "target_large": 16,
  "target_mid": 8, "target_small": 4, "dev": 3, "test": 3, "donor_speakers": 2,
  "target_speakers": 2}})";

const char* kModelConfig = R"({"num_uni_layers": 2, "pool_factors": [2, 2], "uni_cells": 8,
  "bi_cells": 8, "dec_cells": 8, "emb_dim": 4, "att_dim": 4, "mocha_chunk": 2,
  "vocab_size": 32, "init_scale": 0.2})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string take(char* s) {
  std::string out = s ? s : "";
  lrasr_string_free(s);
  return out;
}

struct Dir {
  fs::path path;
  explicit Dir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Dir() { fs::remove_all(path); }
  std::string operator/(const char* leaf) const { return (path / leaf).string(); }
};

}  // namespace

TEST_CASE("status codes and error messages") {
  CHECK(std::strlen(lrasr_version()) > 0);
  lrasr_bpe* bpe = nullptr;
  CHECK(lrasr_bpe_load("/nonexistent/bpe.txt", &bpe) == LRASR_ERR_DATA);
  CHECK(bpe == nullptr);
  CHECK(std::strlen(lrasr_last_error()) > 0);
  lrasr_model* m = nullptr;
  CHECK(lrasr_model_create("{not json", 1, &m) == LRASR_ERR_USAGE);
  CHECK(lrasr_model_create(R"({"num_uni_layers": 0})", 1, &m) == LRASR_ERR_USAGE);
  CHECK(lrasr_model_create(nullptr, 1, nullptr) == LRASR_ERR_USAGE);
  lrasr_wer_report r{};
  CHECK(lrasr_wer_strings("", "a", &r) == LRASR_ERR_DATA);
  // Freeing null handles is a no-op.
  lrasr_bpe_free(nullptr);
  lrasr_model_free(nullptr);
  lrasr_string_free(nullptr);
}

TEST_CASE("string WER and relative improvement") {
  lrasr_wer_report r{};
  REQUIRE(lrasr_wer_strings("ciao come stai", "ciao come va", &r) == LRASR_OK);
  CHECK(r.substitutions == 1);
  CHECK(r.reference_words == 3);
  CHECK(r.wer_percent == doctest::Approx(100.0 / 3));
  CHECK(lrasr_relative_improvement(37.56, 21.52) == doctest::Approx(100.0 * 16.04 / 37.56));
}

TEST_CASE("corpus, tokenizer, training, decoding and scoring through the C API") {
  Dir dir("lrasr_capi_test");
  REQUIRE(lrasr_corpus_generate(4, kCorpusConfig, (dir / "corpus").c_str(), 1) == LRASR_OK);
  const std::string small = dir / "corpus/target_small.tsv";
  const std::string large = dir / "corpus/target_large.tsv";
  const std::string dev = dir / "corpus/dev.tsv";
  const std::string unlabeled = dir / "corpus/unlabeled.tsv";
  REQUIRE(fs::exists(small));
  REQUIRE(fs::exists(dir / "corpus/tts.tsv"));
  REQUIRE(fs::exists(dir / "corpus/oracle.sealed.tsv"));

  const char* manifests[] = {large.c_str()};
  lrasr_bpe* bpe = nullptr;
  REQUIRE(lrasr_bpe_train(manifests, 1, 32, &bpe) == LRASR_OK);
  CHECK(lrasr_bpe_vocab_size(bpe) == 32);
  CHECK(lrasr_bpe_train(manifests, 1, 5, &bpe) == LRASR_ERR_USAGE);

  // Encode with a short buffer first to learn the length.
  int count = 0;
  const char* text = "abc de";
  REQUIRE(lrasr_bpe_encode(bpe, text, nullptr, 0, &count) == LRASR_OK);
  REQUIRE(count > 0);
  std::vector<int> ids(count);
  REQUIRE(lrasr_bpe_encode(bpe, text, ids.data(), count, &count) == LRASR_OK);
  char* decoded = nullptr;
  REQUIRE(lrasr_bpe_decode(bpe, ids.data(), count, &decoded) == LRASR_OK);
  CHECK(take(decoded) == text);

  const std::string bpe_path = dir / "bpe.txt";
  REQUIRE(lrasr_bpe_save(bpe, bpe_path.c_str()) == LRASR_OK);
  lrasr_bpe* bpe2 = nullptr;
  REQUIRE(lrasr_bpe_load(bpe_path.c_str(), &bpe2) == LRASR_OK);
  CHECK(lrasr_bpe_vocab_size(bpe2) == 32);
  lrasr_bpe_free(bpe2);

  lrasr_model* model = nullptr;
  REQUIRE(lrasr_model_create(kModelConfig, 7, &model) == LRASR_OK);
  char* cfg = nullptr;
  REQUIRE(lrasr_model_config(model, &cfg) == LRASR_OK);
  CHECK(take(cfg).find("\"uni_cells\":8") != std::string::npos);

  const std::string opts = R"({"epochs": 1, "batch_size": 2, "sources": [{"manifest": ")" +
                           small + R"(", "weight": 1.0}], "dev": ")" + dev + R"("})";
  char* summary = nullptr;
  REQUIRE(lrasr_model_train(model, bpe, opts.c_str(), &summary) == LRASR_OK);
  CHECK(take(summary).find("dev_wer") != std::string::npos);
  CHECK(lrasr_model_train(model, bpe, R"({"sources": []})", nullptr) == LRASR_ERR_DATA);

  const std::string ckpt = dir / "m.ckpt";
  REQUIRE(lrasr_model_save(model, ckpt.c_str()) == LRASR_OK);
  lrasr_model* loaded = nullptr;
  REQUIRE(lrasr_model_load(ckpt.c_str(), &loaded) == LRASR_OK);

  const std::string nb1 = dir / "a.nbest", nb2 = dir / "b.nbest";
  REQUIRE(lrasr_decode_manifest(model, bpe, unlabeled.c_str(), LRASR_PASS_SECOND, 3, 2, 1,
                                nb1.c_str()) == LRASR_OK);
  REQUIRE(lrasr_decode_manifest(loaded, bpe, unlabeled.c_str(), LRASR_PASS_SECOND, 3, 2, 2,
                                nb2.c_str()) == LRASR_OK);
  CHECK(slurp(nb1) == slurp(nb2));
  CHECK(lrasr_decode_manifest(model, bpe, unlabeled.c_str(), LRASR_PASS_FIRST, 0, 1, 1,
                              nb2.c_str()) == LRASR_ERR_USAGE);

  int kept = -1, pool = -1;
  REQUIRE(lrasr_ssl_filter(nb1.c_str(), "all", (dir / "all.nbest").c_str(), &kept, &pool) ==
          LRASR_OK);
  CHECK(kept == pool);
  CHECK(pool == 4);
  REQUIRE(lrasr_ssl_filter(nb1.c_str(), "0.5", (dir / "none.nbest").c_str(), &kept, &pool) ==
          LRASR_OK);
  CHECK(kept == 0);
  CHECK(lrasr_ssl_filter(nb1.c_str(), "loose", (dir / "x").c_str(), &kept, &pool) ==
        LRASR_ERR_USAGE);
  REQUIRE(lrasr_oracle_filter(nb1.c_str(), (dir / "corpus/oracle.sealed.tsv").c_str(),
                              (dir / "oracle.nbest").c_str(), &kept, &pool) == LRASR_OK);
  CHECK(kept <= pool);

  lrasr_wer_report r{};
  REQUIRE(lrasr_wer((dir / "corpus/oracle.sealed.tsv").c_str(), nb1.c_str(), &r) == LRASR_OK);
  CHECK(r.reference_words > 0);
  CHECK(lrasr_wer(small.c_str(), nb1.c_str(), &r) == LRASR_ERR_DATA);

  lrasr_model_free(loaded);
  lrasr_model_free(model);
  lrasr_bpe_free(bpe);
}

TEST_CASE("pipeline runs and reports are reproducible") {
  Dir dir("lrasr_capi_pipeline");
  const std::string plan = std::string(LRASR_TEST_DATA) + "/tiny_plan.json";
  std::vector<std::string> messages;
  auto progress = [](const char* m, void* user) {
    static_cast<std::vector<std::string>*>(user)->push_back(m);
  };
  REQUIRE(lrasr_pipeline_run(plan.c_str(), "all", (dir / "a").c_str(), -1, 0, progress,
                             &messages) == LRASR_OK);
  CHECK_FALSE(messages.empty());
  REQUIRE(lrasr_pipeline_run(plan.c_str(), "all", (dir / "b").c_str(), -1, 0, nullptr,
                             nullptr) == LRASR_OK);
  CHECK(slurp(dir.path / "a/report.tsv") == slurp(dir.path / "b/report.tsv"));
  CHECK(slurp(dir.path / "a/results.json") == slurp(dir.path / "b/results.json"));

  REQUIRE(lrasr_report((dir / "a/results.json").c_str(), (dir / "c").c_str()) == LRASR_OK);
  CHECK(slurp(dir.path / "c/report.tsv") == slurp(dir.path / "a/report.tsv"));
  CHECK(slurp(dir.path / "c/report.md") == slurp(dir.path / "a/report.md"));

  CHECK(lrasr_pipeline_run(plan.c_str(), "nosuch", (dir / "d").c_str(), -1, 0, nullptr,
                           nullptr) == LRASR_ERR_USAGE);
  CHECK(lrasr_report((dir / "missing.json").c_str(), (dir / "e").c_str()) == LRASR_ERR_DATA);
}
