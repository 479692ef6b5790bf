#pragma once

#include "circuit/ablation.hpp"
#include "circuit/model.hpp"
#include "circuit/surgery.hpp"
#include "circuit/tasks.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace circuit {

struct ExtractionParams {
  double alpha = 0.0;  // +-inf allowed, NaN rejected
  AblationScheme scheme = AblationScheme::mean;
  bool include_mlps = false;

  void validate() const;
};

struct TraceRow {
  ComponentId component;
  double kl_before = 0.0;  // task_kl(f, g) before visiting the component
  double kl_after = 0.0;   // task_kl(f, g') with the component ablated
  double delta = 0.0;      // kl_after - kl_before
  bool pruned = false;     // delta < alpha

  bool operator==(const TraceRow&) const = default;
};

struct ExtractionTrace {
  ExtractionParams params;
  std::vector<TraceRow> rows;  // traversal order
  Architecture architecture;   // of the returned model
  double seconds = 0.0;

  std::vector<ComponentId> pruned() const;
  // One JSON object per line: a "params" line, one line per row, then a
  // "result" line with the final architecture.
  void write_jsonl(const std::filesystem::path& path) const;
  static ExtractionTrace read_jsonl(const std::filesystem::path& path);
};

struct ExtractionResult {
  Model model;
  ExtractionTrace trace;
};

// KL(softmax(p) || softmax(q)) via double-precision log-softmax. Throws
// AblationError on non-finite input or a size mismatch.
double kl_next_token(std::span<const float> p_logits, std::span<const float> q_logits);
// Mean over samples of kl_next_token between final-position rows, in order.
double mean_kl(const Matrix& f_last, const Matrix& g_last);
// Mean answer-position KL(f || g) over `validation`.
double task_kl(const Model& f, const Model& g, std::span<const PromptSample> validation);

// Greedy last-layer-first extraction. Visits layers L-1..0, in each the
// retained heads in descending index and then, if requested, the MLP.
// The mean cache, when needed and not supplied, is computed from `f` over
// `patching`.
ExtractionResult extract(const Model& f, std::span<const PromptSample> patching,
                         std::span<const PromptSample> validation, const ExtractionParams& params,
                         const MeanCache* cache = nullptr);

// Re-applies the trace's prune decisions to `f` through surgery.
Model replay(const Model& f, const ExtractionTrace& trace, const MeanCache* cache = nullptr);

struct SweepPoint {
  double alpha = 0.0;
  std::int64_t params = 0;
  std::size_t heads = 0;
  std::size_t mlps = 0;
  double accuracy = 0.0;
  ExtractionTrace trace;
};

// One extraction per alpha (ascending), sharing data and the mean cache.
std::vector<SweepPoint> sweep(const Model& f, const TaskDataset& data, std::vector<double> alphas,
                              AblationScheme scheme, bool include_mlps);

}  // namespace circuit
