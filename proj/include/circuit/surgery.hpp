#pragma once

#include "circuit/ablation.hpp"
#include "circuit/component.hpp"
#include "circuit/model.hpp"

#include <cstdint>
#include <string>

namespace circuit {

enum class AblationScheme { zero, mean };

std::string to_string(AblationScheme scheme);
AblationScheme parse_scheme(const std::string& name);

// Each returns a new model sharing every untouched block with `model`.
// Mean pruning adds the cached per-position mean to the layer's residual bias
// after the attention block (heads) or after the MLP block (MLPs) and fixes
// the model's template length. Throws SurgeryError when the component is
// already gone, the cache lacks it, or the cache length disagrees with the
// model's template length.
Model prune_head(const Model& model, int layer, int head, AblationScheme scheme, const MeanCache* cache = nullptr);
Model prune_mlp(const Model& model, int layer, AblationScheme scheme, const MeanCache* cache = nullptr);
Model prune(const Model& model, const ComponentId& id, AblationScheme scheme, const MeanCache* cache = nullptr);

// Live parameters: layernorms, b_O, retained head and MLP slices (weights and
// biases) and residual bias matrices. Embeddings, positions and unembedding
// only when requested.
std::int64_t param_count(const Model& model, bool include_embeddings = false);

// Weights plus biases removed by pruning one component:
// head 4*d*d_head + 3*d_head, MLP 2*d*d_mlp + d_mlp + d.
std::int64_t removed_params(const ModelConfig& config, ComponentId id);

// Leading-order cost with unit constants: N*d_head*d + N^2*d per retained
// head, N*d*d_mlp per retained MLP. Throws ShapeError for N < 1.
std::int64_t flop_estimate(const Model& model, int n);

}  // namespace circuit
