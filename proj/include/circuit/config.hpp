#pragma once

#include <json.hpp>

#include <filesystem>

namespace circuit {

struct ModelConfig {
  int num_layers = 0;
  int num_heads = 0;
  int d_model = 0;
  int d_head = 0;
  int d_mlp = 0;
  int vocab_size = 0;
  int max_positions = 0;
  float layernorm_epsilon = 1e-5f;

  // Throws ConfigError unless d_model == num_heads * d_head, every count is
  // at least 1, vocab_size >= 2 and epsilon is positive.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  static ModelConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace circuit
