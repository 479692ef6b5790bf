// Reproduction checks against an exported GPT-2 Small model directory named by
// CIRCUIT_GPT2_DIR. Without it every criterion is reported BLOCKED and the
// process exits 77 so ctest records a skip.

#include "circuit/ablation.hpp"
#include "circuit/error.hpp"
#include "circuit/eval.hpp"
#include "circuit/extraction.hpp"
#include "circuit/surgery.hpp"
#include "circuit/tasks.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace circuit;
namespace fs = std::filesystem;

namespace {

const char* const kCriteria[] = {"acronyms_mean_no_mlp", "ioi_mean_no_mlp", "greater_than_mean_mlp", "timing",
                                 "sweep_trend", "zero_vs_mean_size", "engine_next_token"};

int failures = 0;

void line(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

struct Env {
  Model f;
  BpeTokenizer tok;
  WordPools pools;
  fs::path data;
};

double reduction(const Model& f, const Model& g) {
  const auto full = static_cast<double>(param_count(f));
  return 100.0 * (full - static_cast<double>(param_count(g))) / full;
}

ExtractionResult run_task(const Env& env, TaskKind task, int n, double alpha, bool mlps, TaskDataset& ds) {
  ds = generate(task, env.tok, n, 0, env.pools);
  return extract(env.f, ds.patching, ds.validation, {alpha, AblationScheme::mean, mlps});
}

void table_row(const Env& env, const std::string& name, TaskKind task, int n, double alpha, bool mlps,
               double min_acc, double dparam, double dparam_tol, std::optional<double> max_fpr, Model* keep = nullptr) {
  TaskDataset ds;
  auto r = run_task(env, task, n, alpha, mlps, ds);
  const double acc = evaluate_accuracy(r.model, ds.validation, task);
  const double dp = reduction(env.f, r.model);
  bool ok = acc >= min_acc && std::abs(dp - dparam) <= dparam_tol;
  std::string detail = "acc " + fmt(acc) + "% (>= " + fmt(min_acc) + "), dparam " + fmt(dp) + " (" + fmt(dparam) +
                       " +- " + fmt(dparam_tol) + ")";
  if (max_fpr) {
    const auto ref = ReferenceCircuit::load(env.data / "reference" / (task == TaskKind::acronyms ? "acronyms.json"
                                                                                                  : "greater_than.json"));
    const auto rates = compare_circuit(retained_heads(r.model.architecture()), ref,
                                       env.f.config().num_layers * env.f.config().num_heads);
    ok = ok && rates.fpr <= *max_fpr;
    detail += ", fpr " + fmt(rates.fpr) + " (<= " + fmt(*max_fpr) + "), tpr " + fmt(rates.tpr);
  }
  line(ok, name, detail);
  if (keep) *keep = std::move(r.model);
}

}  // namespace

int main() {
  const char* dir = std::getenv("CIRCUIT_GPT2_DIR");
  if (dir == nullptr || !fs::exists(fs::path(dir) / "model.archive")) {
    for (const char* c : kCriteria) std::printf("BLOCKED %s: set CIRCUIT_GPT2_DIR to an exported GPT-2 Small model\n", c);
    return 77;
  }
  try {
    const fs::path data = CIRCUIT_DATA_DIR;
    Env env{load_model_dir(dir), BpeTokenizer::load(data / "gpt2" / "encoder.json", data / "gpt2" / "vocab.bpe"),
            WordPools::load(data / "pools"), data};
    env.tok.check_compatible(env.f.config());

    {
      const auto ids = env.tok.encode("The Chief Executive Officer (CE");
      TokenMatrix t(1, static_cast<Eigen::Index>(ids.size()));
      for (std::size_t i = 0; i < ids.size(); ++i) t(0, static_cast<Eigen::Index>(i)) = ids[i];
      const Matrix last = hooked_forward_last(env.f, {}, t);
      Eigen::Index arg = 0;
      last.row(0).maxCoeff(&arg);
      const int top[] = {static_cast<int>(arg)};
      const auto text = env.tok.decode(top);
      line(text == "O", kCriteria[6], "next token after \"(CE\" is \"" + text + "\"");
    }

    Model acronyms = env.f;
    table_row(env, kCriteria[0], TaskKind::acronyms, 250, 8.86e-2, false, 95.0, 32.88, 1.5, 2.0, &acronyms);
    table_row(env, kCriteria[1], TaskKind::ioi, 150, 8.53e-3, false, 97.0, 28.66, 2.5, std::nullopt);
    table_row(env, kCriteria[2], TaskKind::greater_than, 250, 8.53e-2, true, 97.0, 82.77, 1.5, 0.0);

    const auto bench = generate(TaskKind::acronyms, env.tok, 250, 1, env.pools);
    const TokenMatrix tokens = to_token_matrix(bench.validation);
    const double full_ms = benchmark_time(env.f, tokens, 5).median_ms;
    const double pruned_ms = benchmark_time(acronyms, tokens, 5).median_ms;
    const double dt = 100.0 * (full_ms - pruned_ms) / full_ms;
    line(dt >= 50.0, kCriteria[3], "full " + fmt(full_ms) + " ms, pruned " + fmt(pruned_ms) + " ms, dt " + fmt(dt) +
                                       "% (>= 50)");

    std::vector<double> alphas;
    for (int i = 0; i < 8; ++i) alphas.push_back(std::pow(10.0, -4.0 + 3.0 * i / 7.0));
    const auto ds = generate(TaskKind::acronyms, env.tok, 250, 0, env.pools);
    const auto mean_pts = sweep(env.f, ds, alphas, AblationScheme::mean, false);
    const auto zero_pts = sweep(env.f, ds, alphas, AblationScheme::zero, false);
    int monotone = 0, zero_ge = 0;
    for (std::size_t i = 1; i < mean_pts.size(); ++i) monotone += mean_pts[i].params <= mean_pts[i - 1].params;
    for (std::size_t i = 0; i < mean_pts.size(); ++i) zero_ge += zero_pts[i].params >= mean_pts[i].params;
    line(monotone >= 0.9 * 7, kCriteria[4], std::to_string(monotone) + "/7 adjacent pairs non-increasing");
    line(zero_ge >= 0.8 * 8, kCriteria[5], std::to_string(zero_ge) + "/8 points with zero size >= mean size");
  } catch (const std::exception& e) {
    std::printf("FAIL unexpected error: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
