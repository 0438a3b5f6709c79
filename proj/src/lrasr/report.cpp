#include "lrasr/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "lrasr/common.hpp"

namespace lrasr {

const ArmResult* ExperimentResults::find(const std::string& name) const {
  for (const auto& a : arms) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

double relative_improvement(double a, double b) {
  if (a == 0.0) throw DataError("relative improvement against a zero baseline");
  return 100.0 * (a - b) / a;
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

namespace {

std::vector<const ArmResult*> sorted_arms(const ExperimentResults& r) {
  std::vector<const ArmResult*> out;
  for (const auto& a : r.arms) out.push_back(&a);
  std::sort(out.begin(), out.end(),
            [](const ArmResult* x, const ArmResult* y) { return x->name < y->name; });
  return out;
}

std::string threshold_text(const SweepRow& s) {
  return s.threshold ? format_fixed(*s.threshold, 1) : "all";
}

std::string opt_text(const std::optional<double>& v) {
  return v ? format_fixed(*v, 2) : "-";
}

struct CompRow {
  std::string label, base, arm;
  std::string pass;
  double a, b, rel;
};

std::vector<CompRow> comparison_rows(const ExperimentResults& r) {
  std::vector<CompRow> out;
  for (const auto& c : r.comparisons) {
    const ArmResult* a = r.find(c.base);
    const ArmResult* b = r.find(c.arm);
    if (!a || !b) continue;
    out.push_back({c.label, c.base, c.arm, "second", a->dev_second, b->dev_second,
                   relative_improvement(a->dev_second, b->dev_second)});
    out.push_back({c.label, c.base, c.arm, "first", a->dev_first, b->dev_first,
                   relative_improvement(a->dev_first, b->dev_first)});
  }
  return out;
}

}  // namespace

std::string emit_tsv(const ExperimentResults& r) {
  std::string out = "# arms\narm\tkind\tinit\tdev_first\tdev_second\ttest_first\ttest_second\tbest_epoch\n";
  for (const ArmResult* a : sorted_arms(r)) {
    out += a->name + "\t" + a->kind + "\t" + (a->init.empty() ? "-" : a->init) + "\t" +
           format_fixed(a->dev_first, 2) + "\t" + format_fixed(a->dev_second, 2) + "\t" +
           format_fixed(a->test_first, 2) + "\t" + format_fixed(a->test_second, 2) + "\t" +
           std::to_string(a->best_epoch) + "\n";
  }
  out += "# comparisons (dev WER)\nlabel\tbase\tarm\tpass\tbase_wer\tarm_wer\trelative_pct\n";
  for (const auto& c : comparison_rows(r)) {
    out += c.label + "\t" + c.base + "\t" + c.arm + "\t" + c.pass + "\t" + format_fixed(c.a, 2) +
           "\t" + format_fixed(c.b, 2) + "\t" + format_fixed(c.rel, 1) + "\n";
  }
  out += "# threshold sweep\nthreshold\tkept\tpool\tdev_wer\ttest_wer\n";
  for (const auto& s : r.sweep) {
    out += threshold_text(s) + "\t" + std::to_string(s.kept) + "\t" + std::to_string(s.pool) +
           "\t" + opt_text(s.dev_wer) + "\t" + opt_text(s.test_wer) + "\n";
  }
  if (!r.complete) out += "# incomplete: " + r.error + "\n";
  return out;
}

std::string emit_markdown(const ExperimentResults& r) {
  std::string out = "# Experiment report (seed " + std::to_string(r.seed) + ")\n\n";
  if (!r.complete) out += "**Incomplete run:** " + r.error + "\n\n";
  out += "| arm | kind | init | dev 1st | dev 2nd | test 1st | test 2nd | best epoch |\n";
  out += "|---|---|---|---|---|---|---|---|\n";
  for (const ArmResult* a : sorted_arms(r)) {
    out += "| " + a->name + " | " + a->kind + " | " + (a->init.empty() ? "-" : a->init) + " | " +
           format_fixed(a->dev_first, 2) + " | " + format_fixed(a->dev_second, 2) + " | " +
           format_fixed(a->test_first, 2) + " | " + format_fixed(a->test_second, 2) + " | " +
           std::to_string(a->best_epoch) + " |\n";
  }
  const auto comps = comparison_rows(r);
  if (!comps.empty()) {
    out += "\nRelative dev WER change, 100*(base-arm)/base:\n\n";
    out += "| comparison | base | arm | pass | base WER | arm WER | relative % |\n";
    out += "|---|---|---|---|---|---|---|\n";
    for (const auto& c : comps) {
      out += "| " + c.label + " | " + c.base + " | " + c.arm + " | " + c.pass + " | " +
             format_fixed(c.a, 2) + " | " + format_fixed(c.b, 2) + " | " +
             format_fixed(c.rel, 1) + " |\n";
    }
  }
  if (!r.sweep.empty()) {
    out += "\nBeam-score threshold sweep (keep if score >= threshold):\n\n";
    out += "| threshold | kept | pool | dev WER | test WER |\n|---|---|---|---|---|\n";
    for (const auto& s : r.sweep) {
      out += "| " + threshold_text(s) + " | " + std::to_string(s.kept) + " | " +
             std::to_string(s.pool) + " | " + opt_text(s.dev_wer) + " | " + opt_text(s.test_wer) +
             " |\n";
    }
  }
  return out;
}

nlohmann::json ExperimentResults::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["complete"] = complete;
  j["error"] = error;
  j["arms"] = nlohmann::json::array();
  for (const auto& a : arms) {
    j["arms"].push_back({{"name", a.name},
                         {"kind", a.kind},
                         {"init", a.init},
                         {"dev_first", a.dev_first},
                         {"dev_second", a.dev_second},
                         {"test_first", a.test_first},
                         {"test_second", a.test_second},
                         {"best_epoch", a.best_epoch},
                         {"stats", a.stats}});
  }
  j["sweep"] = nlohmann::json::array();
  for (const auto& s : sweep) {
    nlohmann::json row = {{"kept", s.kept}, {"pool", s.pool}};
    row["threshold"] = s.threshold ? nlohmann::json(*s.threshold) : nlohmann::json("all");
    if (s.dev_wer) row["dev_wer"] = *s.dev_wer;
    if (s.test_wer) row["test_wer"] = *s.test_wer;
    j["sweep"].push_back(row);
  }
  j["comparisons"] = nlohmann::json::array();
  for (const auto& c : comparisons) {
    j["comparisons"].push_back({{"label", c.label}, {"base", c.base}, {"arm", c.arm}});
  }
  return j;
}

ExperimentResults ExperimentResults::from_json(const nlohmann::json& j) {
  ExperimentResults r;
  try {
    r.seed = j.at("seed").get<uint64_t>();
    r.complete = j.value("complete", true);
    r.error = j.value("error", "");
    for (const auto& a : j.at("arms")) {
      ArmResult x;
      x.name = a.at("name");
      x.kind = a.value("kind", "");
      x.init = a.value("init", "");
      x.dev_first = a.at("dev_first");
      x.dev_second = a.at("dev_second");
      x.test_first = a.at("test_first");
      x.test_second = a.at("test_second");
      x.best_epoch = a.value("best_epoch", 0);
      x.stats = a.value("stats", std::map<std::string, double>{});
      r.arms.push_back(std::move(x));
    }
    for (const auto& s : j.value("sweep", nlohmann::json::array())) {
      SweepRow row;
      if (!s.at("threshold").is_string()) row.threshold = s.at("threshold").get<double>();
      row.kept = s.at("kept");
      row.pool = s.at("pool");
      if (s.contains("dev_wer")) row.dev_wer = s.at("dev_wer").get<double>();
      if (s.contains("test_wer")) row.test_wer = s.at("test_wer").get<double>();
      r.sweep.push_back(row);
    }
    for (const auto& c : j.value("comparisons", nlohmann::json::array())) {
      r.comparisons.push_back({c.at("label"), c.at("base"), c.at("arm")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("results file: ") + e.what());
  }
  return r;
}

void emit_report(const ExperimentResults& r, const std::string& dir) {
  if (r.arms.empty()) throw DataError("no results to report");
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  write_text_file((base / "report.tsv").string(), emit_tsv(r));
  write_text_file((base / "report.md").string(), emit_markdown(r));
  write_text_file((base / "results.json").string(), r.to_json().dump(2) + "\n");
}

}  // namespace lrasr
