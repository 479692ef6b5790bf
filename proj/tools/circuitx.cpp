#include "circuit/ablation.hpp"
#include "circuit/digest.hpp"
#include "circuit/error.hpp"
#include "circuit/eval.hpp"
#include "circuit/extraction.hpp"
#include "circuit/forward.hpp"
#include "circuit/model.hpp"
#include "circuit/surgery.hpp"
#include "circuit/tasks.hpp"
#include "circuit/tokenizer.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace circuit;
using json = nlohmann::ordered_json;

namespace {

struct Common {
  std::string out;
  std::string tokenizer_dir = CIRCUIT_DATA_DIR "/gpt2";
  std::string pools_dir = CIRCUIT_DATA_DIR "/pools";
};

struct Run {
  std::vector<std::string> argv;
  CLI::App* command = nullptr;
  json inputs = json::object();
  json outputs = json::array();
  json extra = json::object();
  std::optional<std::uint64_t> seed;
};

void input(Run& run, const fs::path& path) {
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file()) run.inputs[entry.path().string()] = file_sha256(entry.path());
    }
  } else {
    run.inputs[path.string()] = file_sha256(path);
  }
}

fs::path output(Run& run, const fs::path& path) {
  run.outputs.push_back(path.string());
  return path;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

void write_manifest(const Run& run, const fs::path& dir) {
  json params = json::object();
  for (const auto* opt : run.command->get_options()) {
    if (opt->count() == 0 || opt->get_name(false, true).find("help") != std::string::npos) continue;
    const auto& results = opt->results();
    params[opt->get_name(false, true)] =
        results.size() == 1 ? json(results.front()) : json(std::vector<std::string>(results.begin(), results.end()));
  }
  json m;
  m["command"] = run.command->get_name();
  m["argv"] = run.argv;
  m["params"] = params;
  m["seed"] = run.seed ? json(*run.seed) : json(nullptr);
  m["inputs"] = run.inputs;
  m["outputs"] = run.outputs;
  if (!run.extra.empty()) m["results"] = run.extra;
  write_json(dir / "manifest.json", m);
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

BpeTokenizer load_tokenizer(Run& run, const Common& c) {
  const fs::path dir(c.tokenizer_dir);
  input(run, dir / "encoder.json");
  input(run, dir / "vocab.bpe");
  return BpeTokenizer::load(dir / "encoder.json", dir / "vocab.bpe");
}

Model load_model_input(Run& run, const std::string& dir) {
  input(run, dir);
  return load_model_dir(dir);
}

TaskDataset load_dataset_input(Run& run, const std::string& path) {
  input(run, path);
  return read_dataset(path);
}

std::vector<double> parse_alphas(const std::string& list, const std::string& range) {
  std::vector<double> out;
  if (!list.empty()) {
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::logic_error&) {
        throw ConfigError("--alphas: '" + item + "' is not a number");
      }
    }
  }
  if (!range.empty()) {
    double lo = 0, hi = 0;
    int count = 0;
    char c1 = 0, c2 = 0, tail = 0;
    std::istringstream ss(range);
    if (!(ss >> lo >> c1 >> hi >> c2 >> count) || c1 != ':' || c2 != ':' || (ss >> tail) || lo <= 0 || hi <= lo ||
        count < 2) {
      throw ConfigError("--alpha-range must be LO:HI:COUNT with 0 < LO < HI and COUNT >= 2");
    }
    for (int i = 0; i < count; ++i) {
      out.push_back(std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (count - 1)));
    }
  }
  if (out.empty()) throw ConfigError("sweep needs --alphas or --alpha-range");
  return out;
}

std::string heads_field(const HeadSet& heads) {
  std::string s;
  for (const auto& [l, h] : heads) s += (s.empty() ? "" : ";") + std::to_string(l) + "." + std::to_string(h);
  return s;
}

HeadSet parse_heads_field(const std::string& s) {
  HeadSet out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto dot = item.find('.');
    if (dot == std::string::npos) throw ConfigError("bad head '" + item + "' in sweep CSV");
    out.emplace(std::stoi(item.substr(0, dot)), std::stoi(item.substr(dot + 1)));
  }
  return out;
}

double percent_reduction(double base, double value) { return base == 0.0 ? 0.0 : 100.0 * (base - value) / base; }

// ---------------------------------------------------------------------------

int cmd_gen_data(Run& run, const Common& c, const std::string& task, int n, std::uint64_t seed) {
  run.seed = seed;
  const auto tok = load_tokenizer(run, c);
  for (const char* f : {"acronym_words.json", "ioi_names.json", "ioi_places.json", "ioi_objects.json",
                        "greater_than_nouns.json"}) {
    input(run, fs::path(c.pools_dir) / f);
  }
  const auto pools = WordPools::load(c.pools_dir);
  const auto ds = generate(parse_task(task), tok, n, seed, pools);
  const auto dir = prepare_out(c.out);
  write_dataset(ds, output(run, dir / "dataset.jsonl"));
  run.extra["patching"] = ds.patching.size();
  run.extra["validation"] = ds.validation.size();
  run.extra["template_length"] = ds.template_length();
  run.extra["resampled"] = ds.resampled;
  write_manifest(run, dir);
  std::cout << "wrote " << ds.patching.size() + ds.validation.size() << " samples to " << (dir / "dataset.jsonl").string()
            << "\n";
  return 0;
}

struct ExtractOptions {
  std::string model, dataset, scheme = "mean", mean_cache;
  double alpha = 0.0;
  bool include_mlps = false;
};

int cmd_extract(Run& run, const Common& c, const ExtractOptions& o) {
  const Model f = load_model_input(run, o.model);
  const TaskDataset ds = load_dataset_input(run, o.dataset);
  run.seed = ds.seed;
  const ExtractionParams params{o.alpha, parse_scheme(o.scheme), o.include_mlps};
  params.validate();

  std::optional<MeanCache> cache;
  if (params.scheme == AblationScheme::mean) {
    if (!o.mean_cache.empty()) {
      input(run, o.mean_cache);
      cache = MeanCache::from_archive(TensorArchive::read(o.mean_cache));
    } else {
      cache = compute_mean_cache(f, ds.patching);
    }
  }
  const auto dir = prepare_out(c.out);
  const auto result = extract(f, ds.patching, ds.validation, params, cache ? &*cache : nullptr);

  save_model_dir(result.model, dir / "model");
  for (const char* file : {"model.archive", "config.json", "architecture.json"}) {
    if (fs::exists(dir / "model" / file)) output(run, dir / "model" / file);
  }
  result.trace.write_jsonl(output(run, dir / "trace.jsonl"));
  if (cache && o.mean_cache.empty()) cache->to_archive().write(output(run, dir / "mean_cache.archive"));

  const auto full_params = param_count(f), pruned_params = param_count(result.model);
  json summary;
  summary["task"] = to_string(ds.task);
  summary["alpha"] = std::isinf(o.alpha) ? json(o.alpha > 0 ? "inf" : "-inf") : json(o.alpha);
  summary["scheme"] = o.scheme;
  summary["include_mlps"] = o.include_mlps;
  summary["heads_retained"] = result.trace.architecture.retained_head_count();
  summary["mlps_retained"] = result.trace.architecture.retained_mlp_count();
  summary["params"] = pruned_params;
  summary["params_full"] = full_params;
  summary["delta_param"] = percent_reduction(static_cast<double>(full_params), static_cast<double>(pruned_params));
  summary["accuracy"] = evaluate_accuracy(result.model, ds.validation, ds.task);
  summary["accuracy_full"] = evaluate_accuracy(f, ds.validation, ds.task);
  summary["flops"] = flop_estimate(result.model, ds.template_length());
  summary["seconds"] = result.trace.seconds;
  write_json(output(run, dir / "summary.json"), summary);
  run.extra = summary;
  write_manifest(run, dir);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct SweepOptions {
  std::string model, dataset, scheme = "mean", alphas, alpha_range;
  bool include_mlps = false;
};

int cmd_sweep(Run& run, const Common& c, const SweepOptions& o) {
  const Model f = load_model_input(run, o.model);
  const TaskDataset ds = load_dataset_input(run, o.dataset);
  run.seed = ds.seed;
  const auto alphas = parse_alphas(o.alphas, o.alpha_range);
  const auto points = sweep(f, ds, alphas, parse_scheme(o.scheme), o.include_mlps);
  const auto dir = prepare_out(c.out);
  fs::create_directories(dir / "traces");
  const int total_heads = f.config().num_layers * f.config().num_heads;

  std::ofstream csv(output(run, dir / "sweep.csv"), std::ios::binary | std::ios::trunc);
  csv << "alpha,scheme,mlp,params,delta_param,heads,mlps,accuracy,total_heads,retained_heads\n";
  csv << std::setprecision(17);
  const double full = static_cast<double>(param_count(f));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    csv << p.alpha << ',' << o.scheme << ',' << (o.include_mlps ? "yes" : "no") << ',' << p.params << ','
        << percent_reduction(full, static_cast<double>(p.params)) << ',' << p.heads << ',' << p.mlps << ','
        << p.accuracy << ',' << total_heads << ',' << heads_field(retained_heads(p.trace.architecture)) << "\n";
    p.trace.write_jsonl(output(run, dir / "traces" / ("alpha_" + std::to_string(i) + ".jsonl")));
  }
  csv.close();
  if (!csv) throw Error("failed writing sweep.csv");
  write_manifest(run, dir);
  std::cout << "wrote " << points.size() << " sweep points to " << (dir / "sweep.csv").string() << "\n";
  return 0;
}

struct EvalOptions {
  std::string model, dataset, task, baseline, reference;
  int n = 0, reps = 5, bench_reps = 0;
  std::uint64_t seed = 0;
};

int cmd_eval(Run& run, const Common& c, const EvalOptions& o) {
  const Model model = load_model_input(run, o.model);
  std::optional<Model> baseline;
  if (!o.baseline.empty()) baseline = load_model_input(run, o.baseline);
  std::optional<ReferenceCircuit> reference;
  if (!o.reference.empty()) {
    input(run, o.reference);
    reference = ReferenceCircuit::load(o.reference);
    reference->validate(model.config());
  }

  // Validation batches: the given dataset, or one freshly generated batch
  // per repetition (seeds seed, seed+1, ...).
  std::vector<TaskDataset> batches;
  if (!o.dataset.empty()) {
    batches.push_back(load_dataset_input(run, o.dataset));
    run.seed = batches.front().seed;
  } else {
    if (o.task.empty() || o.n < 2) throw ConfigError("eval needs --dataset or --task with --n >= 2");
    if (o.reps < 1) throw ConfigError("--reps must be at least 1");
    run.seed = o.seed;
    const auto tok = load_tokenizer(run, c);
    const auto pools = WordPools::load(c.pools_dir);
    for (int r = 0; r < o.reps; ++r) batches.push_back(generate(parse_task(o.task), tok, o.n, o.seed + r, pools));
  }

  std::vector<double> acc, dacc, time, dtime;
  for (const auto& ds : batches) {
    acc.push_back(evaluate_accuracy(model, ds.validation, ds.task));
    if (baseline) dacc.push_back(acc.back() - evaluate_accuracy(*baseline, ds.validation, ds.task));
    if (o.bench_reps > 0) {
      const TokenMatrix tokens = to_token_matrix(ds.validation);
      time.push_back(benchmark_time(model, tokens, o.bench_reps).median_ms);
      if (baseline) dtime.push_back(percent_reduction(benchmark_time(*baseline, tokens, o.bench_reps).median_ms, time.back()));
    }
  }

  EvalReport report;
  report.task = to_string(batches.front().task);
  report.label = fs::path(o.model).filename().string();
  report.repetitions = static_cast<int>(batches.size());
  report.accuracy = aggregate(acc);
  if (baseline) report.delta_accuracy = aggregate(dacc);
  report.params = param_count(model);
  if (baseline) {
    report.delta_param =
        percent_reduction(static_cast<double>(param_count(*baseline)), static_cast<double>(report.params));
  }
  if (!time.empty()) report.time_ms = aggregate(time);
  if (!dtime.empty()) report.delta_time = aggregate(dtime);
  if (reference) {
    const auto r = compare_circuit(retained_heads(model.architecture()), *reference,
                                   model.config().num_layers * model.config().num_heads);
    const double tpr[] = {r.tpr}, fpr[] = {r.fpr};
    report.tpr = aggregate(tpr);
    report.fpr = aggregate(fpr);
  }

  const auto dir = prepare_out(c.out);
  const EvalReport reports[] = {report};
  write_reports_csv(reports, output(run, dir / "report.csv"));
  write_reports_json(reports, output(run, dir / "report.json"));
  run.extra = report.to_json();
  write_manifest(run, dir);
  std::cout << csv_header() << "\n" << csv_row(report) << "\n";
  return 0;
}

struct CompareOptions {
  std::string trace, model, reference;
  int total_heads = 0;
};

int cmd_compare(Run& run, const Common& c, const CompareOptions& o) {
  input(run, o.reference);
  const auto reference = ReferenceCircuit::load(o.reference);
  HeadSet found;
  int total = o.total_heads;
  if (!o.model.empty()) {
    const Model m = load_model_input(run, o.model);
    reference.validate(m.config());
    found = retained_heads(m.architecture());
    if (total == 0) total = m.config().num_layers * m.config().num_heads;
  } else if (!o.trace.empty()) {
    input(run, o.trace);
    found = retained_heads(ExtractionTrace::read_jsonl(o.trace).architecture);
  } else {
    throw ConfigError("compare needs --trace or --model");
  }
  if (total == 0) throw ConfigError("compare with --trace needs --total-heads");
  const auto rates = compare_circuit(found, reference, total);
  json j;
  j["task"] = reference.task;
  j["found"] = found.size();
  j["reference"] = reference.heads.size();
  j["total_heads"] = total;
  j["tpr"] = rates.tpr;
  j["fpr"] = rates.fpr;
  const auto dir = prepare_out(c.out);
  write_json(output(run, dir / "compare.json"), j);
  run.extra = j;
  write_manifest(run, dir);
  std::cout << "TPR " << rates.tpr << " %  FPR " << rates.fpr << " %\n";
  return 0;
}

int cmd_roc(Run& run, const Common& c, const std::string& sweep_csv, const std::string& reference_path) {
  input(run, sweep_csv);
  input(run, reference_path);
  const auto reference = ReferenceCircuit::load(reference_path);
  std::ifstream in(sweep_csv);
  if (!in) throw ConfigError("cannot open sweep CSV '" + sweep_csv + "'");
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) header.push_back(col);
  }
  auto column = [&](const char* name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ConfigError(std::string("sweep CSV lacks column '") + name + "'");
  };
  const auto heads_col = column("retained_heads"), total_col = column("total_heads");
  std::vector<HeadSet> found;
  int total = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == header.size() - 1) cells.emplace_back();  // empty trailing head list
    if (cells.size() != header.size()) throw ConfigError("malformed sweep CSV row: " + line);
    found.push_back(parse_heads_field(cells[heads_col]));
    total = std::stoi(cells[total_col]);
  }
  const auto curve = roc_points(found, reference, total);
  const auto dir = prepare_out(c.out);
  write_roc_csv(curve, output(run, dir / "roc.csv"));
  run.extra["auc"] = curve.auc;
  write_manifest(run, dir);
  std::cout << "AUC " << curve.auc << "\n";
  return 0;
}

struct BenchOptions {
  std::string model, dataset, baseline;
  int reps = 5, passes = 1;
};

int cmd_bench(Run& run, const Common& c, const BenchOptions& o) {
  const Model model = load_model_input(run, o.model);
  const TaskDataset ds = load_dataset_input(run, o.dataset);
  run.seed = ds.seed;
  const TokenMatrix tokens = to_token_matrix(ds.validation);
  const auto t = benchmark_time(model, tokens, o.reps, o.passes);
  json j;
  j["batch"] = tokens.rows();
  j["length"] = tokens.cols();
  j["repetitions"] = t.repetitions;
  j["passes"] = o.passes;
  j["mean_ms"] = t.mean_ms;
  j["stddev_ms"] = t.stddev_ms;
  j["median_ms"] = t.median_ms;
  if (!o.baseline.empty()) {
    const Model base = load_model_input(run, o.baseline);
    const auto b = benchmark_time(base, tokens, o.reps, o.passes);
    j["baseline_median_ms"] = b.median_ms;
    j["delta_t"] = percent_reduction(b.median_ms, t.median_ms);
  }
  const auto dir = prepare_out(c.out);
  write_json(output(run, dir / "bench.json"), j);
  run.extra = j;
  write_manifest(run, dir);
  std::cout << j.dump(2) << "\n";
  return 0;
}

// Splices "--key value" pairs from a JSON config file in front of the
// command-line flags of the subcommand; explicit flags come later and win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] != "--config") continue;
    const std::string path = args[i + 1];
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config '" + path + "' must be a JSON object");
    std::vector<std::string> flags;
    for (const auto& [key, value] : j.items()) {
      if (value.is_boolean()) {
        if (value.get<bool>()) flags.push_back("--" + key);
      } else if (value.is_array()) {
        for (const auto& v : value) {
          flags.push_back("--" + key);
          flags.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        }
      } else {
        flags.push_back("--" + key);
        flags.push_back(value.is_string() ? value.get<std::string>() : value.dump());
      }
    }
    const auto at = args.begin() + (args.size() > 1 ? 2 : 1);  // after program name and subcommand
    args.insert(at, flags.begin(), flags.end());
    break;
  }
  return args;
}

void configure_threads() {
  if (const char* env = std::getenv("CIRCUIT_THREADS")) {
    const int n = std::atoi(env);
    if (n < 1) throw ConfigError("CIRCUIT_THREADS must be a positive integer");
    Eigen::setNbThreads(n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  Run run;
  std::vector<std::string> args;
  try {
    run.argv.assign(argv, argv + argc);
    args = expand_config(run.argv);
    configure_threads();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"Task-specific circuit extraction for GPT-2 style models"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.add_option("--config", "JSON file of flag values (spliced before command-line flags)");

  Common common;
  auto add_common = [&](CLI::App* sub, bool needs_tokenizer) {
    sub->add_option("--out", common.out, "Output directory")->required();
    if (needs_tokenizer) {
      sub->add_option("--tokenizer-dir", common.tokenizer_dir, "Directory with encoder.json and vocab.bpe");
      sub->add_option("--pools-dir", common.pools_dir, "Directory with the word pool files");
    }
  };

  std::string task;
  int n = 0;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a task dataset");
  gen->add_option("--task", task, "acronyms, ioi or greater-than")->required();
  gen->add_option("--n", n, "Number of samples (split in half into patching/validation)")->required();
  gen->add_option("--seed", seed, "Random seed")->required();
  add_common(gen, true);

  ExtractOptions ex;
  auto* extract_cmd = app.add_subcommand("extract", "Extract a circuit with greedy KL-thresholded pruning");
  extract_cmd->add_option("--model", ex.model, "Model directory")->required();
  extract_cmd->add_option("--dataset", ex.dataset, "Dataset file")->required();
  extract_cmd->add_option("--alpha", ex.alpha, "KL threshold")->required();
  extract_cmd->add_option("--scheme", ex.scheme, "zero or mean");
  extract_cmd->add_flag("--include-mlps", ex.include_mlps, "Also consider MLPs for pruning");
  extract_cmd->add_option("--mean-cache", ex.mean_cache, "Reuse a mean cache archive");
  add_common(extract_cmd, false);

  SweepOptions sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run extraction over several thresholds");
  sweep_cmd->add_option("--model", sw.model, "Model directory")->required();
  sweep_cmd->add_option("--dataset", sw.dataset, "Dataset file")->required();
  sweep_cmd->add_option("--alphas", sw.alphas, "Comma-separated thresholds");
  sweep_cmd->add_option("--alpha-range", sw.alpha_range, "LO:HI:COUNT log-spaced thresholds");
  sweep_cmd->add_option("--scheme", sw.scheme, "zero or mean");
  sweep_cmd->add_flag("--include-mlps", sw.include_mlps, "Also consider MLPs for pruning");
  add_common(sweep_cmd, false);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy, size, timing and circuit overlap report");
  eval_cmd->add_option("--model", ev.model, "Model directory")->required();
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset file (one repetition)");
  eval_cmd->add_option("--task", ev.task, "Generate fresh batches for this task instead of --dataset");
  eval_cmd->add_option("--n", ev.n, "Samples per generated batch");
  eval_cmd->add_option("--seed", ev.seed, "Seed of the first generated batch");
  eval_cmd->add_option("--reps", ev.reps, "Generated batches (repetitions)");
  eval_cmd->add_option("--baseline", ev.baseline, "Unpruned model directory for delta columns");
  eval_cmd->add_option("--reference", ev.reference, "Reference circuit JSON for TPR/FPR");
  eval_cmd->add_option("--bench-reps", ev.bench_reps, "Timing repetitions per batch (0 skips timing)");
  add_common(eval_cmd, true);

  CompareOptions cmp;
  auto* compare_cmd = app.add_subcommand("compare", "TPR/FPR of retained heads against a reference circuit");
  compare_cmd->add_option("--trace", cmp.trace, "Extraction trace");
  compare_cmd->add_option("--model", cmp.model, "Pruned model directory");
  compare_cmd->add_option("--reference", cmp.reference, "Reference circuit JSON")->required();
  compare_cmd->add_option("--total-heads", cmp.total_heads, "Head count of the full model");
  add_common(compare_cmd, false);

  std::string sweep_csv, roc_reference;
  auto* roc_cmd = app.add_subcommand("roc", "ROC points and AUC from a sweep");
  roc_cmd->add_option("--sweep", sweep_csv, "sweep.csv from the sweep command")->required();
  roc_cmd->add_option("--reference", roc_reference, "Reference circuit JSON")->required();
  add_common(roc_cmd, false);

  BenchOptions bo;
  auto* bench_cmd = app.add_subcommand("bench", "Time batched forward passes");
  bench_cmd->add_option("--model", bo.model, "Model directory")->required();
  bench_cmd->add_option("--dataset", bo.dataset, "Dataset file (validation split is timed)")->required();
  bench_cmd->add_option("--reps", bo.reps, "Timed repetitions (at least 3)");
  bench_cmd->add_option("--passes", bo.passes, "Forward passes per repetition");
  bench_cmd->add_option("--baseline", bo.baseline, "Model directory to compare against");
  add_common(bench_cmd, false);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    run.command = app.get_subcommands().front();
    if (*gen) return cmd_gen_data(run, common, task, n, seed);
    if (*extract_cmd) return cmd_extract(run, common, ex);
    if (*sweep_cmd) return cmd_sweep(run, common, sw);
    if (*eval_cmd) return cmd_eval(run, common, ev);
    if (*compare_cmd) return cmd_compare(run, common, cmp);
    if (*roc_cmd) return cmd_roc(run, common, sweep_csv, roc_reference);
    if (*bench_cmd) return cmd_bench(run, common, bo);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
