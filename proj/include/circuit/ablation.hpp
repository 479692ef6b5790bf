#pragma once

#include "circuit/archive.hpp"
#include "circuit/component.hpp"
#include "circuit/forward.hpp"
#include "circuit/model.hpp"
#include "circuit/tasks.hpp"

#include <map>
#include <span>
#include <string>

namespace circuit {

// Per-position mean contribution of every retained component of one model
// over one patching set.
struct MeanCache {
  int template_length = 0;
  std::map<ComponentId, Matrix> means;  // template_length x d_model each
  std::string dataset_id;               // digest of the patching tokens
  std::string model_id;                 // lineage of the model the means came from

  // Throws AblationError when `id` has no entry.
  const Matrix& at(const ComponentId& id) const;

  // Entries are named "head.{layer}.{head}" and "mlp.{layer}".
  TensorArchive to_archive() const;
  static MeanCache from_archive(const TensorArchive& archive);
};

// Accumulates in double. Throws DatasetError on an empty or misaligned set.
MeanCache compute_mean_cache(const Model& model, const TokenMatrix& tokens);
MeanCache compute_mean_cache(const Model& model, std::span<const PromptSample> patching);

// Forward pass with component contributions replaced. A later patch for the
// same component wins. Throws AblationError for a component the model does
// not have and ShapeError for an override that is not length x d_model.
Logits hooked_forward(const Model& model, std::span<const Patch> patches, const TokenMatrix& tokens);
// Final-position logits only, batch x vocab.
Matrix hooked_forward_last(const Model& model, std::span<const Patch> patches, const TokenMatrix& tokens);

namespace engine {
// Validates `patches` against `model` and `length` and indexes them.
PatchMap index_patches(const Model& model, std::span<const Patch> patches, int length);
}  // namespace engine

}  // namespace circuit
