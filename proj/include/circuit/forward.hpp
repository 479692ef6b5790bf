#pragma once

#include "circuit/component.hpp"
#include "circuit/model.hpp"
#include "circuit/tensor.hpp"

#include <functional>
#include <map>
#include <span>
#include <utility>

namespace circuit {

// Next-token logits for a batch; row b * length + pos holds the prediction
// after token `pos` of sample `b`.
struct Logits {
  int batch = 0;
  int length = 0;
  Matrix values;

  std::span<const float> row(int b, int pos) const {
    return {values.data() + (static_cast<Eigen::Index>(b) * length + pos) * values.cols(),
            static_cast<std::size_t>(values.cols())};
  }
};

// Everything written into the residual stream during one forward pass. All
// stacked matrices are (batch * length) x d_model.
struct ForwardTrace {
  int batch = 0;
  int length = 0;
  Matrix embeddings;  // token + positional
  // Head contributions are h_i W_O^i (without b_O); MLP contributions are
  // the full block output including its output bias.
  std::map<ComponentId, Matrix> contributions;
  std::vector<RowVector> output_biases;  // b_O per layer
  std::vector<std::shared_ptr<const Matrix>> attn_residual_biases;
  std::vector<std::shared_ptr<const Matrix>> mlp_residual_biases;
};

// Throws ShapeError on out-of-range token ids, sequences longer than
// max_positions, or a length other than the template length of a
// mean-pruned model.
Logits forward(const Model& model, const TokenMatrix& tokens);
std::pair<Logits, ForwardTrace> forward_traced(const Model& model, const TokenMatrix& tokens);

// Sums the trace's stream terms and applies the final layernorm and
// unembedding.
Logits reconstruct_logits(const Model& model, const ForwardTrace& trace);

Matrix layer_norm(const Matrix& x, const LayerNormWeights& ln, float epsilon);
inline float gelu(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}
// Row-wise softmax of q k^T * scale with an additive -inf above the diagonal.
Matrix causal_attention_weights(const Matrix& q, const Matrix& k, float scale);

namespace engine {

using PatchMap = std::map<ComponentId, const Override*>;
using Observer = std::function<void(const ComponentId&, const Matrix&)>;

void check_tokens(const Model& model, const TokenMatrix& tokens);
// Stacked token + positional embeddings, (batch * length) x d_model.
Matrix embed(const Model& model, const TokenMatrix& tokens);
// Adds layer `l`'s attention and MLP blocks to `residual` in place. Patched
// components are replaced by their override; `observer` sees every
// component's (possibly patched) contribution.
void run_layer(const Model& model, int l, Matrix& residual, int batch, int length, const PatchMap* patches,
               const Observer* observer);
Matrix unembed(const Model& model, const Matrix& residual);
// Logits at the final position only, batch x vocab.
Matrix unembed_last(const Model& model, const Matrix& residual, int batch, int length);

}  // namespace engine

}  // namespace circuit
