#include "circuit/forward.hpp"

#include "circuit/error.hpp"

#include <cmath>
#include <limits>

namespace circuit {

Matrix layer_norm(const Matrix& x, const LayerNormWeights& ln, float epsilon) {
  Matrix out(x.rows(), x.cols());
  const float inv_d = 1.0f / static_cast<float>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    const float mean = row.sum() * inv_d;
    const float var = (row.array() - mean).square().sum() * inv_d;
    const float inv_std = 1.0f / std::sqrt(var + epsilon);
    out.row(r) = ((row.array() - mean) * inv_std * ln.weight.array() + ln.bias.array()).matrix();
  }
  return out;
}

Matrix causal_attention_weights(const Matrix& q, const Matrix& k, float scale) {
  Matrix scores;
  scores.noalias() = q * k.transpose();
  const Eigen::Index n = scores.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    float max_v = -std::numeric_limits<float>::infinity();
    for (Eigen::Index j = 0; j <= i; ++j) {
      scores(i, j) *= scale;
      max_v = std::max(max_v, scores(i, j));
    }
    float sum = 0.0f;
    for (Eigen::Index j = 0; j <= i; ++j) {
      scores(i, j) = std::exp(scores(i, j) - max_v);
      sum += scores(i, j);
    }
    const float inv = 1.0f / sum;
    for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) *= inv;
    for (Eigen::Index j = i + 1; j < scores.cols(); ++j) scores(i, j) = 0.0f;
  }
  return scores;
}

namespace engine {

namespace {

void add_per_position(Matrix& residual, const Matrix& bias, int batch, int length) {
  for (int b = 0; b < batch; ++b) residual.middleRows(static_cast<Eigen::Index>(b) * length, length) += bias;
}

Matrix materialize(const Override& o, int batch, int length, int d_model, const ComponentId& id) {
  if (!o.value) return Matrix::Zero(static_cast<Eigen::Index>(batch) * length, d_model);
  if (o.value->rows() != length || o.value->cols() != d_model) {
    throw ShapeError("override for " + id.str() + " must be " + std::to_string(length) + " x " +
                     std::to_string(d_model));
  }
  Matrix out(static_cast<Eigen::Index>(batch) * length, d_model);
  for (int b = 0; b < batch; ++b) out.middleRows(static_cast<Eigen::Index>(b) * length, length) = *o.value;
  return out;
}

const Override* find_patch(const PatchMap* patches, const ComponentId& id) {
  if (patches == nullptr) return nullptr;
  auto it = patches->find(id);
  return it == patches->end() ? nullptr : it->second;
}

Matrix head_contribution(const HeadWeights& h, const Matrix& ln_x, int batch, int length, float scale) {
  Matrix q = ln_x * h.w_q;
  q.rowwise() += h.b_q;
  Matrix k = ln_x * h.w_k;
  k.rowwise() += h.b_k;
  Matrix v = ln_x * h.w_v;
  v.rowwise() += h.b_v;
  Matrix z(q.rows(), q.cols());
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index at = static_cast<Eigen::Index>(b) * length;
    const Matrix weights = causal_attention_weights(q.middleRows(at, length), k.middleRows(at, length), scale);
    z.middleRows(at, length).noalias() = weights * v.middleRows(at, length);
  }
  Matrix out;
  out.noalias() = z * h.w_o;
  return out;
}

Matrix mlp_contribution(const MlpWeights& m, const Matrix& ln_x) {
  Matrix hidden = ln_x * m.w_in;
  hidden.rowwise() += m.b_in;
  hidden = hidden.unaryExpr([](float x) { return gelu(x); });
  Matrix out;
  out.noalias() = hidden * m.w_out;
  out.rowwise() += m.b_out;
  return out;
}

}  // namespace

void check_tokens(const Model& model, const TokenMatrix& tokens) {
  const auto& c = model.config();
  if (tokens.rows() < 1 || tokens.cols() < 1) throw ShapeError("token batch must be non-empty");
  if (tokens.cols() > c.max_positions) {
    throw ShapeError("sequence length " + std::to_string(tokens.cols()) + " exceeds max_positions " +
                     std::to_string(c.max_positions));
  }
  if (model.template_length() && tokens.cols() != *model.template_length()) {
    throw ShapeError("sequence length " + std::to_string(tokens.cols()) +
                     " does not match the pruned model's template length " +
                     std::to_string(*model.template_length()));
  }
  for (Eigen::Index i = 0; i < tokens.size(); ++i) {
    const auto t = tokens.data()[i];
    if (t < 0 || t >= c.vocab_size) {
      throw ShapeError("token id " + std::to_string(t) + " out of range [0, " + std::to_string(c.vocab_size) + ")");
    }
  }
}

Matrix embed(const Model& model, const TokenMatrix& tokens) {
  check_tokens(model, tokens);
  const auto& p = model.parts();
  const Eigen::Index batch = tokens.rows(), length = tokens.cols();
  Matrix x(batch * length, p.config.d_model);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index pos = 0; pos < length; ++pos) {
      x.row(b * length + pos) = p.embedding->row(tokens(b, pos)) + p.positional->row(pos);
    }
  }
  return x;
}

void run_layer(const Model& model, int l, Matrix& residual, int batch, int length, const PatchMap* patches,
               const Observer* observer) {
  const auto& c = model.config();
  const auto& lw = model.layer(l);
  const float scale = 1.0f / std::sqrt(static_cast<float>(c.d_head));

  const Matrix ln1 = layer_norm(residual, lw.ln1, c.layernorm_epsilon);
  Matrix attn = Matrix::Zero(residual.rows(), residual.cols());
  for (const auto& head : lw.heads) {
    const auto id = ComponentId::attention_head(l, head->index);
    const Override* patch = find_patch(patches, id);
    Matrix contribution = patch ? materialize(*patch, batch, length, c.d_model, id)
                                : head_contribution(*head, ln1, batch, length, scale);
    if (observer) (*observer)(id, contribution);
    attn += contribution;
  }
  attn.rowwise() += lw.b_o;
  residual += attn;
  if (lw.attn_residual_bias) add_per_position(residual, *lw.attn_residual_bias, batch, length);

  if (lw.mlp) {
    const auto id = ComponentId::mlp(l);
    const Override* patch = find_patch(patches, id);
    Matrix contribution;
    if (patch) {
      contribution = materialize(*patch, batch, length, c.d_model, id);
    } else {
      contribution = mlp_contribution(*lw.mlp, layer_norm(residual, lw.ln2, c.layernorm_epsilon));
    }
    if (observer) (*observer)(id, contribution);
    residual += contribution;
  }
  if (lw.mlp_residual_bias) add_per_position(residual, *lw.mlp_residual_bias, batch, length);
}

Matrix unembed(const Model& model, const Matrix& residual) {
  const auto& p = model.parts();
  Matrix out;
  out.noalias() = layer_norm(residual, p.ln_final, p.config.layernorm_epsilon) * *p.unembedding;
  return out;
}

Matrix unembed_last(const Model& model, const Matrix& residual, int batch, int length) {
  Matrix last(batch, residual.cols());
  for (int b = 0; b < batch; ++b) last.row(b) = residual.row(static_cast<Eigen::Index>(b) * length + length - 1);
  return unembed(model, last);
}

}  // namespace engine

Logits forward(const Model& model, const TokenMatrix& tokens) {
  Matrix x = engine::embed(model, tokens);
  const int batch = static_cast<int>(tokens.rows()), length = static_cast<int>(tokens.cols());
  for (int l = 0; l < model.config().num_layers; ++l) engine::run_layer(model, l, x, batch, length, nullptr, nullptr);
  return {batch, length, engine::unembed(model, x)};
}

std::pair<Logits, ForwardTrace> forward_traced(const Model& model, const TokenMatrix& tokens) {
  Matrix x = engine::embed(model, tokens);
  ForwardTrace trace;
  trace.batch = static_cast<int>(tokens.rows());
  trace.length = static_cast<int>(tokens.cols());
  trace.embeddings = x;
  const engine::Observer record = [&](const ComponentId& id, const Matrix& c) { trace.contributions[id] = c; };
  for (int l = 0; l < model.config().num_layers; ++l) {
    const auto& lw = model.layer(l);
    trace.output_biases.push_back(lw.b_o);
    trace.attn_residual_biases.push_back(lw.attn_residual_bias);
    trace.mlp_residual_biases.push_back(lw.mlp_residual_bias);
    engine::run_layer(model, l, x, trace.batch, trace.length, nullptr, &record);
  }
  Logits logits{trace.batch, trace.length, engine::unembed(model, x)};
  return {std::move(logits), std::move(trace)};
}

Logits reconstruct_logits(const Model& model, const ForwardTrace& trace) {
  Matrix x = trace.embeddings;
  for (const auto& [id, c] : trace.contributions) x += c;
  for (std::size_t l = 0; l < trace.output_biases.size(); ++l) {
    x.rowwise() += trace.output_biases[l];
    if (trace.attn_residual_biases[l]) {
      engine::add_per_position(x, *trace.attn_residual_biases[l], trace.batch, trace.length);
    }
    if (trace.mlp_residual_biases[l]) {
      engine::add_per_position(x, *trace.mlp_residual_biases[l], trace.batch, trace.length);
    }
  }
  return {trace.batch, trace.length, engine::unembed(model, x)};
}

}  // namespace circuit
