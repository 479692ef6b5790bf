#include "circuit/eval.hpp"

#include "circuit/ablation.hpp"
#include "circuit/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <tuple>

namespace circuit {

double evaluate_accuracy(const Model& model, std::span<const PromptSample> validation, TaskKind task) {
  if (validation.empty()) throw DatasetError("evaluate_accuracy: validation set is empty");
  const Matrix last = hooked_forward_last(model, {}, to_token_matrix(validation));
  std::size_t correct = 0;
  const auto cols = static_cast<std::size_t>(last.cols());
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const std::span<const float> row(last.row(static_cast<Eigen::Index>(i)).data(), cols);
    if (is_correct(task, row, validation[i])) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(validation.size());
}

HeadSet retained_heads(const Architecture& architecture) {
  HeadSet out;
  for (std::size_t l = 0; l < architecture.layers.size(); ++l) {
    for (int h : architecture.layers[l].retained_heads) out.emplace(static_cast<int>(l), h);
  }
  return out;
}

ReferenceCircuit ReferenceCircuit::from_json(const nlohmann::json& j) {
  ReferenceCircuit r;
  try {
    r.task = j.at("task").get<std::string>();
    r.source = j.value("source", "");
    r.provisional = j.value("provisional", false);
    for (const auto& pair : j.at("heads")) {
      const auto v = pair.get<std::vector<int>>();
      if (v.size() != 2) throw ConfigError("reference circuit: each head must be [layer, head]");
      if (!r.heads.emplace(v[0], v[1]).second) {
        throw ConfigError("reference circuit: duplicate head " + std::to_string(v[0]) + "." + std::to_string(v[1]));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("reference circuit: ") + e.what());
  }
  if (r.heads.empty()) throw ConfigError("reference circuit '" + r.task + "' has no heads");
  return r;
}

ReferenceCircuit ReferenceCircuit::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open reference circuit '" + path.string() + "'");
  try {
    nlohmann::json j;
    in >> j;
    return from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ReferenceCircuit::validate(const ModelConfig& config) const {
  for (const auto& [l, h] : heads) {
    if (l < 0 || l >= config.num_layers || h < 0 || h >= config.num_heads) {
      throw ConfigError("reference circuit '" + task + "': head " + std::to_string(l) + "." + std::to_string(h) +
                        " outside the model");
    }
  }
}

Rates compare_circuit(const HeadSet& found, const ReferenceCircuit& reference, int total_heads) {
  const auto ref_size = static_cast<std::int64_t>(reference.heads.size());
  if (ref_size == 0) throw ConfigError("compare_circuit: reference circuit is empty");
  if (total_heads <= ref_size) throw ConfigError("compare_circuit: total_heads must exceed the reference size");
  std::int64_t hits = 0, false_hits = 0;
  for (const auto& head : found) {
    if (head.first < 0 || head.second < 0) throw ConfigError("compare_circuit: negative head index");
    (reference.heads.count(head) ? hits : false_hits) += 1;
  }
  if (hits + false_hits > total_heads) throw ConfigError("compare_circuit: more found heads than total_heads");
  return {100.0 * static_cast<double>(hits) / static_cast<double>(ref_size),
          100.0 * static_cast<double>(false_hits) / static_cast<double>(total_heads - ref_size)};
}

RocCurve roc_curve(std::span<const RocPoint> points) {
  if (points.size() < 2) throw ConfigError("roc: need at least 2 sweep points");
  RocCurve c;
  c.points.assign(points.begin(), points.end());
  std::sort(c.points.begin(), c.points.end(),
            [](const RocPoint& a, const RocPoint& b) { return std::tie(a.fpr, a.tpr) < std::tie(b.fpr, b.tpr); });
  RocPoint prev{0.0, 0.0};
  double area = 0.0;
  auto step = [&](const RocPoint& p) {
    area += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
    prev = p;
  };
  for (const auto& p : c.points) step(p);
  step({100.0, 100.0});
  c.auc = area / 1e4;
  return c;
}

RocCurve roc_points(std::span<const HeadSet> found_per_sweep_point, const ReferenceCircuit& reference,
                    int total_heads) {
  std::vector<RocPoint> pts;
  for (const auto& found : found_per_sweep_point) {
    const auto r = compare_circuit(found, reference, total_heads);
    pts.push_back({r.fpr, r.tpr});
  }
  return roc_curve(pts);
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.count = static_cast<int>(values.size());
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return a;
}

TimingStats benchmark_time(const Model& model, const TokenMatrix& tokens, int repetitions, int passes) {
  if (repetitions < 3) throw ConfigError("benchmark_time: at least 3 repetitions required");
  if (passes < 1) throw ConfigError("benchmark_time: passes must be at least 1");
  volatile float sink = forward(model, tokens).values(0, 0);  // warm-up
  std::vector<double> per_rep;
  for (int r = 0; r < repetitions; ++r) {
    const auto start = std::chrono::steady_clock::now();
    for (int p = 0; p < passes; ++p) sink = forward(model, tokens).values(0, 0);
    const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start);
    per_rep.push_back(elapsed.count() / passes);
  }
  (void)sink;
  const auto agg = aggregate(per_rep);
  std::vector<double> sorted = per_rep;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  const double median = sorted.size() % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2.0;
  return {agg.mean, agg.stddev, median, repetitions};
}

namespace {

nlohmann::ordered_json aggregate_json(const Aggregate& a) {
  return {{"mean", a.mean}, {"stddev", a.stddev}, {"count", a.count}};
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

std::string maybe(const std::optional<Aggregate>& a, bool std_part) {
  if (!a) return "";
  return fmt(std_part ? a->stddev : a->mean);
}

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["label"] = label;
  j["alpha"] = alpha ? nlohmann::ordered_json(*alpha) : nlohmann::ordered_json(nullptr);
  j["include_mlps"] = include_mlps ? nlohmann::ordered_json(*include_mlps) : nlohmann::ordered_json(nullptr);
  j["repetitions"] = repetitions;
  j["accuracy"] = aggregate_json(accuracy);
  j["delta_accuracy"] = delta_accuracy ? aggregate_json(*delta_accuracy) : nlohmann::ordered_json(nullptr);
  j["params"] = params;
  j["delta_param"] = delta_param ? nlohmann::ordered_json(*delta_param) : nlohmann::ordered_json(nullptr);
  j["time_ms"] = time_ms ? aggregate_json(*time_ms) : nlohmann::ordered_json(nullptr);
  j["delta_time"] = delta_time ? aggregate_json(*delta_time) : nlohmann::ordered_json(nullptr);
  j["tpr"] = tpr ? aggregate_json(*tpr) : nlohmann::ordered_json(nullptr);
  j["fpr"] = fpr ? aggregate_json(*fpr) : nlohmann::ordered_json(nullptr);
  return j;
}

std::string csv_header() {
  return "task,label,alpha,mlp,reps,acc,acc_std,delta_acc,delta_acc_std,param_1e7,delta_param,t_ms,t_ms_std,"
         "delta_t,delta_t_std,tpr,tpr_std,fpr,fpr_std";
}

std::string csv_row(const EvalReport& r) {
  std::ostringstream ss;
  ss << r.task << ',' << r.label << ',' << (r.alpha ? fmt(*r.alpha) : "") << ','
     << (r.include_mlps ? (*r.include_mlps ? "yes" : "no") : "") << ',' << r.repetitions << ','
     << fmt(r.accuracy.mean) << ',' << fmt(r.accuracy.stddev) << ',' << maybe(r.delta_accuracy, false) << ','
     << maybe(r.delta_accuracy, true) << ',' << fmt(static_cast<double>(r.params) / 1e7) << ','
     << (r.delta_param ? fmt(*r.delta_param) : "") << ',' << maybe(r.time_ms, false) << ','
     << maybe(r.time_ms, true) << ',' << maybe(r.delta_time, false) << ',' << maybe(r.delta_time, true) << ','
     << maybe(r.tpr, false) << ',' << maybe(r.tpr, true) << ',' << maybe(r.fpr, false) << ','
     << maybe(r.fpr, true);
  return ss.str();
}

void write_reports_csv(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << csv_header() << "\n";
  for (const auto& r : reports) out << csv_row(r) << "\n";
}

void write_reports_json(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  out << arr.dump(2) << "\n";
}

void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "fpr,tpr\n";
  for (const auto& p : curve.points) out << fmt(p.fpr) << ',' << fmt(p.tpr) << "\n";
}

}  // namespace circuit
