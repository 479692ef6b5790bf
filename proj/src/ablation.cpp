#include "circuit/ablation.hpp"

#include "circuit/digest.hpp"
#include "circuit/error.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdio>

namespace circuit {

namespace {

// Bounds activation memory when averaging over large patching sets.
constexpr Eigen::Index kMeanChunk = 64;

std::string token_digest(const TokenMatrix& tokens) {
  Sha256 h;
  const std::int64_t dims[2] = {tokens.rows(), tokens.cols()};
  h.update(std::as_bytes(std::span(dims)));
  h.update(std::as_bytes(std::span(tokens.data(), static_cast<std::size_t>(tokens.size()))));
  return "sha256:" + h.hex().substr(0, 16);
}

std::string entry_name(const ComponentId& id) {
  return id.is_head() ? "head." + std::to_string(id.layer) + "." + std::to_string(id.head)
                      : "mlp." + std::to_string(id.layer);
}

ComponentId parse_entry(const std::string& name) {
  int layer = 0, head = 0;
  char tail = 0;
  if (std::sscanf(name.c_str(), "head.%d.%d%c", &layer, &head, &tail) == 2) return ComponentId::attention_head(layer, head);
  if (std::sscanf(name.c_str(), "mlp.%d%c", &layer, &tail) == 1) return ComponentId::mlp(layer);
  throw ArchiveError("mean cache: unexpected tensor '" + name + "'");
}

}  // namespace

const Matrix& MeanCache::at(const ComponentId& id) const {
  auto it = means.find(id);
  if (it == means.end()) throw AblationError("mean cache has no entry for " + id.str());
  return it->second;
}

TensorArchive MeanCache::to_archive() const {
  TensorArchive a;
  for (const auto& [id, m] : means) {
    Tensor t;
    t.shape = {m.rows(), m.cols()};
    t.data.assign(m.data(), m.data() + m.size());
    a.put(entry_name(id), std::move(t));
  }
  a.metadata()["template_length"] = std::to_string(template_length);
  a.metadata()["dataset_id"] = dataset_id;
  a.metadata()["model_id"] = model_id;
  return a;
}

MeanCache MeanCache::from_archive(const TensorArchive& archive) {
  MeanCache c;
  const auto& md = archive.metadata();
  auto get = [&](const char* key) {
    auto it = md.find(key);
    if (it == md.end()) throw ArchiveError(std::string("mean cache: missing metadata '") + key + "'");
    return it->second;
  };
  try {
    c.template_length = std::stoi(get("template_length"));
  } catch (const std::logic_error&) {
    throw ArchiveError("mean cache: template_length is not an integer");
  }
  c.dataset_id = get("dataset_id");
  c.model_id = get("model_id");
  for (const auto& [name, t] : archive.entries()) {
    const auto id = parse_entry(name);
    if (t.shape.size() != 2 || t.shape[0] != c.template_length) {
      throw ArchiveError("mean cache: tensor '" + name + "' must have template_length rows");
    }
    for (float v : t.data) {
      if (!std::isfinite(v)) throw ArchiveError("mean cache: tensor '" + name + "' has a non-finite value");
    }
    c.means.emplace(id, Eigen::Map<const Matrix>(t.data.data(), t.shape[0], t.shape[1]));
  }
  return c;
}

MeanCache compute_mean_cache(const Model& model, const TokenMatrix& tokens) {
  if (tokens.rows() == 0) throw DatasetError("mean cache: patching set is empty");
  engine::check_tokens(model, tokens);
  const int length = static_cast<int>(tokens.cols());
  const int d = model.config().d_model;

  using Accumulator = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::map<ComponentId, Accumulator> sums;
  for (const auto& id : model.retained_components()) sums.emplace(id, Accumulator::Zero(length, d));

  const engine::Observer accumulate = [&](const ComponentId& id, const Matrix& c) {
    auto& acc = sums.at(id);
    const auto batch = c.rows() / length;
    for (Eigen::Index b = 0; b < batch; ++b) acc += c.middleRows(b * length, length).cast<double>();
  };
  for (Eigen::Index start = 0; start < tokens.rows(); start += kMeanChunk) {
    const auto rows = std::min(kMeanChunk, tokens.rows() - start);
    const TokenMatrix chunk = tokens.middleRows(start, rows);
    Matrix x = engine::embed(model, chunk);
    for (int l = 0; l < model.config().num_layers; ++l) {
      engine::run_layer(model, l, x, static_cast<int>(rows), length, nullptr, &accumulate);
    }
  }

  MeanCache cache;
  cache.template_length = length;
  cache.dataset_id = token_digest(tokens);
  cache.model_id = model.lineage();
  const double inv = 1.0 / static_cast<double>(tokens.rows());
  for (auto& [id, acc] : sums) cache.means.emplace(id, (acc * inv).cast<float>());
  return cache;
}

MeanCache compute_mean_cache(const Model& model, std::span<const PromptSample> patching) {
  if (patching.empty()) throw DatasetError("mean cache: patching set is empty");
  return compute_mean_cache(model, to_token_matrix(patching));
}

namespace engine {

PatchMap index_patches(const Model& model, std::span<const Patch> patches, int length) {
  PatchMap map;
  const int d = model.config().d_model;
  for (const auto& p : patches) {
    if (!model.has_component(p.component)) {
      throw AblationError("cannot patch " + p.component.str() + ": not a retained component of this model");
    }
    const auto& v = p.replacement.value;
    if (v && (v->rows() != length || v->cols() != d)) {
      throw ShapeError("override for " + p.component.str() + " is " + std::to_string(v->rows()) + " x " +
                       std::to_string(v->cols()) + ", expected " + std::to_string(length) + " x " +
                       std::to_string(d));
    }
    map[p.component] = &p.replacement;
  }
  return map;
}

}  // namespace engine

namespace {

Matrix hooked_residual(const Model& model, std::span<const Patch> patches, const TokenMatrix& tokens) {
  Matrix x = engine::embed(model, tokens);
  const int batch = static_cast<int>(tokens.rows()), length = static_cast<int>(tokens.cols());
  const auto map = engine::index_patches(model, patches, length);
  for (int l = 0; l < model.config().num_layers; ++l) engine::run_layer(model, l, x, batch, length, &map, nullptr);
  return x;
}

}  // namespace

Logits hooked_forward(const Model& model, std::span<const Patch> patches, const TokenMatrix& tokens) {
  const Matrix x = hooked_residual(model, patches, tokens);
  return {static_cast<int>(tokens.rows()), static_cast<int>(tokens.cols()), engine::unembed(model, x)};
}

Matrix hooked_forward_last(const Model& model, std::span<const Patch> patches, const TokenMatrix& tokens) {
  const Matrix x = hooked_residual(model, patches, tokens);
  return engine::unembed_last(model, x, static_cast<int>(tokens.rows()), static_cast<int>(tokens.cols()));
}

}  // namespace circuit
