#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace lrasr {

struct ArmResult {
  std::string name;
  std::string kind;
  std::string init;
  double dev_first = 0.0;
  double dev_second = 0.0;
  double test_first = 0.0;
  double test_second = 0.0;
  int best_epoch = 0;
  std::map<std::string, double> stats;
};

struct SweepRow {
  std::optional<double> threshold;  // nullopt = "all"
  int kept = 0;
  int pool = 0;
  std::optional<double> dev_wer;  // present when the sweep trains
  std::optional<double> test_wer;
};

struct Comparison {
  std::string label;
  std::string base;
  std::string arm;
};

struct ExperimentResults {
  uint64_t seed = 0;
  std::vector<ArmResult> arms;
  std::vector<SweepRow> sweep;
  std::vector<Comparison> comparisons;
  bool complete = true;
  std::string error;

  const ArmResult* find(const std::string& name) const;
  nlohmann::json to_json() const;
  static ExperimentResults from_json(const nlohmann::json& j);
};

// 100 * (a - b) / a: positive when b improves on a.
double relative_improvement(double a, double b);

std::string format_fixed(double v, int decimals);

// Arms sorted by name; sweep rows in plan order; comparisons in plan order.
std::string emit_tsv(const ExperimentResults& r);
std::string emit_markdown(const ExperimentResults& r);
// Writes report.tsv, report.md and results.json into dir.
void emit_report(const ExperimentResults& r, const std::string& dir);

}  // namespace lrasr
