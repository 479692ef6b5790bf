#pragma once

#include "circuit/tensor.hpp"

#include <compare>
#include <optional>
#include <string>

namespace circuit {

enum class ComponentKind { head, mlp };

// One prunable unit: an attention head (layer, head) or a layer's MLP.
// Ordered by (layer, kind, head) with heads before the MLP of their layer.
struct ComponentId {
  ComponentKind kind = ComponentKind::head;
  int layer = 0;
  int head = 0;  // ignored (0) for MLPs

  static ComponentId attention_head(int layer, int head) { return {ComponentKind::head, layer, head}; }
  static ComponentId mlp(int layer) { return {ComponentKind::mlp, layer, 0}; }

  bool is_head() const { return kind == ComponentKind::head; }
  // "L3H7" or "L3MLP".
  std::string str() const;
  static ComponentId parse(const std::string& text);

  friend auto operator<=>(const ComponentId& a, const ComponentId& b) {
    if (auto c = a.layer <=> b.layer; c != 0) return c;
    if (auto c = static_cast<int>(a.kind) <=> static_cast<int>(b.kind); c != 0) return c;
    return a.head <=> b.head;
  }
  friend bool operator==(const ComponentId&, const ComponentId&) = default;
};

// Replacement for a component's residual-stream contribution. Zero when
// `value` is empty, otherwise a per-position matrix (sequence length x d_model)
// broadcast over the batch.
struct Override {
  std::optional<Matrix> value;

  static Override zero() { return {}; }
  static Override constant(Matrix m) { return {std::move(m)}; }
};

struct Patch {
  ComponentId component;
  Override replacement;
};

}  // namespace circuit
