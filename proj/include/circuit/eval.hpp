#pragma once

#include "circuit/model.hpp"
#include "circuit/tasks.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace circuit {

// 100 * fraction of samples judged correct at the answer position. Throws
// DatasetError on an empty set.
double evaluate_accuracy(const Model& model, std::span<const PromptSample> validation, TaskKind task);

using HeadSet = std::set<std::pair<int, int>>;  // (layer, head)

HeadSet retained_heads(const Architecture& architecture);

struct ReferenceCircuit {
  std::string task;
  HeadSet heads;
  std::string source;
  bool provisional = false;

  // JSON {"task", "source", "provisional", "heads": [[layer, head], ...]}.
  static ReferenceCircuit load(const std::filesystem::path& path);
  static ReferenceCircuit from_json(const nlohmann::json& j);
  // Throws ConfigError for heads outside the config.
  void validate(const ModelConfig& config) const;
};

struct Rates {
  double tpr = 0.0;  // %
  double fpr = 0.0;  // %
};

// TPR = |found & ref| / |ref|, FPR = |found \ ref| / (total_heads - |ref|).
// Throws ConfigError on an empty reference or total_heads <= |ref|.
Rates compare_circuit(const HeadSet& found, const ReferenceCircuit& reference, int total_heads);

struct RocPoint {
  double fpr = 0.0;  // %
  double tpr = 0.0;  // %

  bool operator==(const RocPoint&) const = default;
};

struct RocCurve {
  std::vector<RocPoint> points;  // sorted by (fpr, tpr), anchors excluded
  double auc = 0.0;              // in [0, 1]
};

// Trapezoid AUC over the sorted points with (0,0) and (100,100) anchors.
// Throws ConfigError for fewer than 2 points.
RocCurve roc_curve(std::span<const RocPoint> points);
RocCurve roc_points(std::span<const HeadSet> found_per_sweep_point, const ReferenceCircuit& reference,
                    int total_heads);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for one value
  int count = 0;
};

Aggregate aggregate(std::span<const double> values);

struct TimingStats {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
  double median_ms = 0.0;  // median over repetitions of the per-repetition mean
  int repetitions = 0;
};

// Wall-clock time of one batched forward, after one untimed warm-up pass.
// Each repetition averages `passes` forwards. Throws ConfigError for fewer
// than 3 repetitions.
TimingStats benchmark_time(const Model& model, const TokenMatrix& tokens, int repetitions, int passes = 1);

// One row of the size/accuracy/speed tables.
struct EvalReport {
  std::string task;
  std::string label;
  std::optional<double> alpha;
  std::optional<bool> include_mlps;
  int repetitions = 0;
  Aggregate accuracy;
  std::optional<Aggregate> delta_accuracy;  // pruned - baseline, percentage points
  std::int64_t params = 0;
  std::optional<double> delta_param;  // % reduction vs baseline
  std::optional<Aggregate> time_ms;
  std::optional<Aggregate> delta_time;  // % reduction vs baseline
  std::optional<Aggregate> tpr;
  std::optional<Aggregate> fpr;

  nlohmann::ordered_json to_json() const;
};

std::string csv_header();
std::string csv_row(const EvalReport& report);
void write_reports_csv(std::span<const EvalReport> reports, const std::filesystem::path& path);
void write_reports_json(std::span<const EvalReport> reports, const std::filesystem::path& path);
void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path);

}  // namespace circuit
