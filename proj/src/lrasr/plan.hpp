#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrasr/corpus.hpp"
#include "lrasr/model.hpp"
#include "lrasr/pipeline.hpp"
#include "lrasr/report.hpp"

namespace lrasr {

struct SourceRef {
  std::string source;  // donor_train, target_small, target_mid, target_large, tts
  double weight = 1.0;
};

struct StagePlan {
  std::string name;
  StageKind kind = StageKind::Scratch;
  std::string language = "target";
  std::string init;                            // stage whose model seeds this one
  std::optional<std::set<nn::Group>> frozen;   // unset = kind default
  std::vector<SourceRef> data;                 // empty = kind default
  std::optional<double> threshold;             // ssl; unset = keep all
  bool oracle = false;                         // ssl with the sealed references
  bool report = true;                          // adds an arm to the results
  nlohmann::json train = nlohmann::json::object();  // TrainConfig overrides
};

struct SweepPlan {
  std::string init;
  std::vector<std::optional<double>> thresholds;  // nullopt = "all"
  bool train = false;  // also fine-tune and score one model per threshold
};

struct ExperimentPlan {
  uint64_t seed = 1;
  int threads = 1;
  CorpusSizes corpus;
  LanguageOptions language;
  int vocab_size = 48;
  ModelConfig model;
  TrainConfig train;
  int beam_size = 12;
  bool save_checkpoints = false;
  std::vector<StagePlan> stages;
  std::optional<SweepPlan> sweep;
  std::vector<Comparison> comparisons;

  static ExperimentPlan from_json(const nlohmann::json& j);
  static ExperimentPlan load(const std::string& path);
  const StagePlan* find(const std::string& name) const;
};

// Applies the keys present in j on top of base.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base);

struct RunOptions {
  std::string out_dir;              // reports, loss log, pseudo-label files
  std::string stage = "all";        // run only this stage and its init chain
  std::function<void(const std::string&)> progress;  // human-readable status
};

// Generates the corpus from the plan seed, runs the requested stages in plan
// order, then the sweep, and emits the report. On a stage error the partial
// results are still written before the error propagates.
ExperimentResults run_experiment_plan(const ExperimentPlan& plan, const RunOptions& opt);

}  // namespace lrasr
