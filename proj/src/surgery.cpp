#include "circuit/surgery.hpp"

#include "circuit/digest.hpp"
#include "circuit/error.hpp"

#include <algorithm>

namespace circuit {

std::string to_string(AblationScheme scheme) { return scheme == AblationScheme::zero ? "zero" : "mean"; }

AblationScheme parse_scheme(const std::string& name) {
  if (name == "zero") return AblationScheme::zero;
  if (name == "mean") return AblationScheme::mean;
  throw ConfigError("unknown ablation scheme '" + name + "' (expected zero or mean)");
}

namespace {

const Matrix& cached_mean(const Model& model, const ComponentId& id, const MeanCache* cache) {
  if (cache == nullptr) throw SurgeryError("mean pruning of " + id.str() + " needs a mean cache");
  if (model.template_length() && *model.template_length() != cache->template_length) {
    throw SurgeryError("mean cache length " + std::to_string(cache->template_length) +
                       " differs from the model's template length " + std::to_string(*model.template_length()));
  }
  auto it = cache->means.find(id);
  if (it == cache->means.end()) throw SurgeryError("mean cache has no entry for " + id.str());
  if (it->second.rows() != cache->template_length || it->second.cols() != model.config().d_model) {
    throw SurgeryError("mean cache entry for " + id.str() + " has the wrong shape");
  }
  return it->second;
}

std::shared_ptr<const Matrix> add_bias(const std::shared_ptr<const Matrix>& existing, const Matrix& mean) {
  if (!existing) return std::make_shared<const Matrix>(mean);
  return std::make_shared<const Matrix>(*existing + mean);
}

Model derive(const Model& model, Model::Parts parts, const ComponentId& id, AblationScheme scheme) {
  parts.lineage = "sha256:" + sha256_hex(model.lineage() + "|" + id.str() + "|" + to_string(scheme)).substr(0, 16);
  return Model(std::move(parts));
}

}  // namespace

Model prune_head(const Model& model, int layer, int head, AblationScheme scheme, const MeanCache* cache) {
  const auto id = ComponentId::attention_head(layer, head);
  if (!model.has_component(id)) throw SurgeryError("cannot prune " + id.str() + ": not retained");
  Model::Parts parts = model.parts();
  auto& lw = parts.layers[static_cast<std::size_t>(layer)];
  if (scheme == AblationScheme::mean) {
    const Matrix& mean = cached_mean(model, id, cache);
    lw.attn_residual_bias = add_bias(lw.attn_residual_bias, mean);
    parts.template_length = cache->template_length;
  }
  std::erase_if(lw.heads, [&](const auto& h) { return h->index == head; });
  return derive(model, std::move(parts), id, scheme);
}

Model prune_mlp(const Model& model, int layer, AblationScheme scheme, const MeanCache* cache) {
  const auto id = ComponentId::mlp(layer);
  if (!model.has_component(id)) throw SurgeryError("cannot prune " + id.str() + ": not retained");
  Model::Parts parts = model.parts();
  auto& lw = parts.layers[static_cast<std::size_t>(layer)];
  if (scheme == AblationScheme::mean) {
    const Matrix& mean = cached_mean(model, id, cache);
    lw.mlp_residual_bias = add_bias(lw.mlp_residual_bias, mean);
    parts.template_length = cache->template_length;
  }
  lw.mlp.reset();
  return derive(model, std::move(parts), id, scheme);
}

Model prune(const Model& model, const ComponentId& id, AblationScheme scheme, const MeanCache* cache) {
  return id.is_head() ? prune_head(model, id.layer, id.head, scheme, cache) : prune_mlp(model, id.layer, scheme, cache);
}

std::int64_t removed_params(const ModelConfig& c, ComponentId id) {
  const std::int64_t d = c.d_model, dh = c.d_head, dm = c.d_mlp;
  return id.is_head() ? 4 * d * dh + 3 * dh : 2 * d * dm + dm + d;
}

std::int64_t param_count(const Model& model, bool include_embeddings) {
  const auto& c = model.config();
  const std::int64_t d = c.d_model;
  std::int64_t n = 2 * d;  // final layernorm
  for (const auto& lw : model.layers()) {
    n += 4 * d + d;  // ln1, ln2, b_O
    n += static_cast<std::int64_t>(lw.heads.size()) * removed_params(c, ComponentId::attention_head(0, 0));
    if (lw.mlp) n += removed_params(c, ComponentId::mlp(0));
    if (lw.attn_residual_bias) n += lw.attn_residual_bias->size();
    if (lw.mlp_residual_bias) n += lw.mlp_residual_bias->size();
  }
  if (include_embeddings) n += 2 * static_cast<std::int64_t>(c.vocab_size) * d + static_cast<std::int64_t>(c.max_positions) * d;
  return n;
}

std::int64_t flop_estimate(const Model& model, int n) {
  if (n < 1) throw ShapeError("flop_estimate: sequence length must be at least 1");
  const auto& c = model.config();
  const std::int64_t N = n, d = c.d_model;
  const std::int64_t per_head = N * c.d_head * d + N * N * d;
  const std::int64_t per_mlp = N * d * c.d_mlp;
  std::int64_t total = 0;
  for (const auto& lw : model.layers()) {
    total += static_cast<std::int64_t>(lw.heads.size()) * per_head;
    if (lw.mlp) total += per_mlp;
  }
  return total;
}

}  // namespace circuit
