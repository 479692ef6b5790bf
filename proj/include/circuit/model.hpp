#pragma once

#include "circuit/archive.hpp"
#include "circuit/component.hpp"
#include "circuit/config.hpp"
#include "circuit/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace circuit {

struct LayerNormWeights {
  RowVector weight;
  RowVector bias;
};

// One head's slices of the attention projections. `index` is the head's
// position in the original layer and never changes under surgery.
struct HeadWeights {
  int index = 0;
  Matrix w_q, w_k, w_v;     // d_model x d_head
  RowVector b_q, b_k, b_v;  // d_head
  Matrix w_o;               // d_head x d_model
};

struct MlpWeights {
  Matrix w_in;  // d_model x d_mlp
  RowVector b_in;
  Matrix w_out;  // d_mlp x d_model
  RowVector b_out;
};

struct LayerWeights {
  LayerNormWeights ln1;
  std::vector<std::shared_ptr<const HeadWeights>> heads;  // ascending index
  RowVector b_o;                                          // shared output bias, never pruned
  LayerNormWeights ln2;
  std::shared_ptr<const MlpWeights> mlp;  // null once pruned

  // Summed means of mean-pruned components, added after the attention block
  // and after the MLP block respectively (template_length x d_model).
  std::shared_ptr<const Matrix> attn_residual_bias;
  std::shared_ptr<const Matrix> mlp_residual_bias;

  const HeadWeights* find_head(int index) const;
};

struct LayerArchitecture {
  std::vector<int> retained_heads;
  bool mlp_retained = true;
  std::optional<Matrix> attn_residual_bias;
  std::optional<Matrix> mlp_residual_bias;

  bool operator==(const LayerArchitecture& other) const;
};

// Structural description of a (possibly pruned) model. The JSON sidecar holds
// the retained sets and flags; bias matrices travel in the tensor archive.
struct Architecture {
  std::vector<LayerArchitecture> layers;
  std::optional<int> template_length;

  static Architecture full(const ModelConfig& config);
  std::size_t retained_head_count() const;
  std::size_t retained_mlp_count() const;
  bool operator==(const Architecture&) const = default;

  nlohmann::json to_json() const;
  // Bias matrices are left empty; load_model fills them from the archive.
  static Architecture from_json(const nlohmann::json& j);
};

// Immutable decoder-only transformer. Surgery produces new models that share
// unchanged weight blocks with their parent.
class Model {
 public:
  struct Parts {
    ModelConfig config;
    std::shared_ptr<const Matrix> embedding;    // vocab x d_model
    std::shared_ptr<const Matrix> positional;   // max_positions x d_model
    std::shared_ptr<const Matrix> unembedding;  // d_model x vocab
    LayerNormWeights ln_final;
    std::vector<LayerWeights> layers;
    std::optional<int> template_length;  // set once any component is mean-pruned
    std::string lineage;                 // identifies weights + pruning history
  };

  explicit Model(Parts parts);

  const ModelConfig& config() const { return parts_.config; }
  const Parts& parts() const { return parts_; }
  std::span<const LayerWeights> layers() const { return parts_.layers; }
  const LayerWeights& layer(int l) const { return parts_.layers.at(static_cast<std::size_t>(l)); }
  std::optional<int> template_length() const { return parts_.template_length; }
  const std::string& lineage() const { return parts_.lineage; }

  bool has_component(const ComponentId& id) const;
  std::vector<ComponentId> retained_components() const;
  Architecture architecture() const;

 private:
  Parts parts_;
};

// Builds the full model (all components retained). Throws ArchiveError naming
// the tensor on a missing entry, shape mismatch or non-finite value.
Model load_model(const TensorArchive& archive, const ModelConfig& config);
// Loads a pruned model described by `architecture`.
Model load_model(const TensorArchive& archive, const ModelConfig& config,
                 const Architecture& architecture);

TensorArchive to_archive(const Model& model);

// Directory layout used by the CLI: model.archive, config.json and, for
// pruned models, architecture.json.
void save_model_dir(const Model& model, const std::filesystem::path& dir);
Model load_model_dir(const std::filesystem::path& dir);

}  // namespace circuit
