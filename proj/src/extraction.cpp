#include "circuit/extraction.hpp"

#include "circuit/error.hpp"
#include "circuit/eval.hpp"
#include "circuit/forward.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace circuit {

void ExtractionParams::validate() const {
  if (std::isnan(alpha)) throw ConfigError("alpha must not be NaN");
}

std::vector<ComponentId> ExtractionTrace::pruned() const {
  std::vector<ComponentId> out;
  for (const auto& r : rows) {
    if (r.pruned) out.push_back(r.component);
  }
  return out;
}

namespace {

// JSON has no infinities; thresholds of +-inf are written as strings.
nlohmann::json alpha_to_json(double a) {
  if (std::isinf(a)) return a > 0 ? "inf" : "-inf";
  return a;
}

double alpha_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ConfigError("alpha: unrecognised value '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace

void ExtractionTrace::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write trace '" + path.string() + "'");
  nlohmann::ordered_json head;
  head["type"] = "params";
  head["alpha"] = alpha_to_json(params.alpha);
  head["scheme"] = to_string(params.scheme);
  head["include_mlps"] = params.include_mlps;
  out << head.dump() << "\n";
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["type"] = "row";
    j["component"] = r.component.str();
    j["kl_before"] = r.kl_before;
    j["kl_after"] = r.kl_after;
    j["delta"] = r.delta;
    j["pruned"] = r.pruned;
    out << j.dump() << "\n";
  }
  nlohmann::ordered_json tail;
  tail["type"] = "result";
  tail["architecture"] = architecture.to_json();
  tail["seconds"] = seconds;
  out << tail.dump() << "\n";
  if (!out) throw Error("failed writing trace '" + path.string() + "'");
}

ExtractionTrace ExtractionTrace::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace '" + path.string() + "'");
  ExtractionTrace t;
  bool have_params = false, have_result = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "params") {
        t.params.alpha = alpha_from_json(j.at("alpha"));
        t.params.scheme = parse_scheme(j.at("scheme").get<std::string>());
        t.params.include_mlps = j.at("include_mlps").get<bool>();
        have_params = true;
      } else if (type == "row") {
        TraceRow r;
        r.component = ComponentId::parse(j.at("component").get<std::string>());
        r.kl_before = j.at("kl_before").get<double>();
        r.kl_after = j.at("kl_after").get<double>();
        r.delta = j.at("delta").get<double>();
        r.pruned = j.at("pruned").get<bool>();
        t.rows.push_back(r);
      } else if (type == "result") {
        t.architecture = Architecture::from_json(j.at("architecture"));
        t.seconds = j.at("seconds").get<double>();
        have_result = true;
      } else {
        throw Error("unknown line type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_params || !have_result) throw Error("trace '" + path.string() + "' is incomplete");
  return t;
}

double kl_next_token(std::span<const float> p_logits, std::span<const float> q_logits) {
  if (p_logits.size() != q_logits.size() || p_logits.empty()) {
    throw AblationError("kl_next_token: logit vectors must be non-empty and of equal size");
  }
  auto log_normalizer = [](std::span<const float> x) {
    double max_v = -std::numeric_limits<double>::infinity();
    for (float v : x) {
      if (!std::isfinite(v)) throw AblationError("kl_next_token: non-finite logit");
      max_v = std::max(max_v, static_cast<double>(v));
    }
    double sum = 0.0;
    for (float v : x) sum += std::exp(static_cast<double>(v) - max_v);
    return max_v + std::log(sum);
  };
  const double lp = log_normalizer(p_logits), lq = log_normalizer(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < p_logits.size(); ++i) {
    const double log_p = static_cast<double>(p_logits[i]) - lp;
    const double log_q = static_cast<double>(q_logits[i]) - lq;
    kl += std::exp(log_p) * (log_p - log_q);
  }
  return std::max(kl, 0.0);
}

double mean_kl(const Matrix& f_last, const Matrix& g_last) {
  if (f_last.rows() == 0) throw DatasetError("task_kl: validation set is empty");
  if (f_last.rows() != g_last.rows() || f_last.cols() != g_last.cols()) {
    throw ShapeError("task_kl: logit batches differ in shape");
  }
  const auto cols = static_cast<std::size_t>(f_last.cols());
  double sum = 0.0;
  for (Eigen::Index r = 0; r < f_last.rows(); ++r) {
    sum += kl_next_token({f_last.row(r).data(), cols}, {g_last.row(r).data(), cols});
  }
  return sum / static_cast<double>(f_last.rows());
}

double task_kl(const Model& f, const Model& g, std::span<const PromptSample> validation) {
  if (validation.empty()) throw DatasetError("task_kl: validation set is empty");
  const TokenMatrix tokens = to_token_matrix(validation);
  return mean_kl(hooked_forward_last(f, {}, tokens), hooked_forward_last(g, {}, tokens));
}

ExtractionResult extract(const Model& f, std::span<const PromptSample> patching,
                         std::span<const PromptSample> validation, const ExtractionParams& params,
                         const MeanCache* cache) {
  params.validate();
  if (validation.empty()) throw DatasetError("extract: validation set is empty");
  const auto start = std::chrono::steady_clock::now();

  const TokenMatrix tokens = to_token_matrix(validation);
  const int batch = static_cast<int>(tokens.rows()), length = static_cast<int>(tokens.cols());
  const int num_layers = f.config().num_layers;

  std::optional<MeanCache> owned;
  if (params.scheme == AblationScheme::mean) {
    if (cache == nullptr) {
      if (patching.empty()) throw DatasetError("extract: patching set is empty");
      owned = compute_mean_cache(f, patching);
      cache = &*owned;
    }
    if (cache->template_length != length) {
      throw DatasetError("extract: patching length " + std::to_string(cache->template_length) +
                         " differs from validation length " + std::to_string(length));
    }
  }

  // Layers below the one being visited are never modified, so g's stream at
  // the input of layer l equals f's.
  std::vector<Matrix> f_inputs;
  f_inputs.reserve(static_cast<std::size_t>(num_layers));
  Matrix x = engine::embed(f, tokens);
  for (int l = 0; l < num_layers; ++l) {
    f_inputs.push_back(x);
    engine::run_layer(f, l, x, batch, length, nullptr, nullptr);
  }
  const Matrix f_last = engine::unembed_last(f, x, batch, length);

  auto last_logits_from = [&](const Model& m, int from, const engine::PatchMap* patches) {
    Matrix r = f_inputs[static_cast<std::size_t>(from)];
    for (int l = from; l < num_layers; ++l) engine::run_layer(m, l, r, batch, length, patches, nullptr);
    return engine::unembed_last(m, r, batch, length);
  };

  Model g = f;
  double baseline = mean_kl(f_last, last_logits_from(g, num_layers - 1, nullptr));
  ExtractionTrace trace;
  trace.params = params;

  auto visit = [&](const ComponentId& id) {
    const Override replacement = params.scheme == AblationScheme::zero ? Override::zero()
                                                                       : Override::constant(cache->at(id));
    const Patch patch{id, replacement};
    const auto patches = engine::index_patches(g, std::span(&patch, 1), length);
    TraceRow row;
    row.component = id;
    row.kl_before = baseline;
    row.kl_after = mean_kl(f_last, last_logits_from(g, id.layer, &patches));
    row.delta = row.kl_after - row.kl_before;
    row.pruned = row.delta < params.alpha;
    if (row.pruned) {
      g = prune(g, id, params.scheme, cache);
      baseline = mean_kl(f_last, last_logits_from(g, id.layer, nullptr));
    }
    trace.rows.push_back(row);
  };

  for (int l = num_layers - 1; l >= 0; --l) {
    std::vector<int> heads;
    for (const auto& h : g.layer(l).heads) heads.push_back(h->index);
    for (auto it = heads.rbegin(); it != heads.rend(); ++it) visit(ComponentId::attention_head(l, *it));
    if (params.include_mlps && g.layer(l).mlp) visit(ComponentId::mlp(l));
  }

  trace.architecture = g.architecture();
  trace.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(g), std::move(trace)};
}

Model replay(const Model& f, const ExtractionTrace& trace, const MeanCache* cache) {
  Model g = f;
  for (const auto& r : trace.rows) {
    if (r.pruned) g = prune(g, r.component, trace.params.scheme, cache);
  }
  return g;
}

std::vector<SweepPoint> sweep(const Model& f, const TaskDataset& data, std::vector<double> alphas,
                              AblationScheme scheme, bool include_mlps) {
  if (alphas.empty()) throw ConfigError("sweep: no alpha values");
  std::stable_sort(alphas.begin(), alphas.end());
  std::optional<MeanCache> cache;
  if (scheme == AblationScheme::mean) cache = compute_mean_cache(f, data.patching);
  std::vector<SweepPoint> points;
  for (double alpha : alphas) {
    auto result = extract(f, data.patching, data.validation, {alpha, scheme, include_mlps}, cache ? &*cache : nullptr);
    SweepPoint p;
    p.alpha = alpha;
    p.params = param_count(result.model);
    p.heads = result.trace.architecture.retained_head_count();
    p.mlps = result.trace.architecture.retained_mlp_count();
    p.accuracy = evaluate_accuracy(result.model, data.validation, data.task);
    p.trace = std::move(result.trace);
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace circuit
