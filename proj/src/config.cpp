#include "circuit/config.hpp"

#include "circuit/error.hpp"

#include <cmath>
#include <fstream>

namespace circuit {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string("config: ") + name + " must be >= 1");
  };
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(d_model, "d_model");
  positive(d_head, "d_head");
  positive(d_mlp, "d_mlp");
  positive(max_positions, "max_positions");
  if (vocab_size < 2) throw ConfigError("config: vocab_size must be >= 2");
  if (d_model != num_heads * d_head) {
    throw ConfigError("config: d_model (" + std::to_string(d_model) + ") != num_heads * d_head (" +
                      std::to_string(num_heads) + " * " + std::to_string(d_head) + ")");
  }
  if (!(layernorm_epsilon > 0.0f) || !std::isfinite(layernorm_epsilon)) {
    throw ConfigError("config: layernorm_epsilon must be a small positive real");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"num_layers", num_layers}, {"num_heads", num_heads},       {"d_model", d_model},
          {"d_head", d_head},         {"d_mlp", d_mlp},               {"vocab_size", vocab_size},
          {"max_positions", max_positions}, {"layernorm_epsilon", layernorm_epsilon}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.d_mlp = j.at("d_mlp").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.layernorm_epsilon = j.at("layernorm_epsilon").get<float>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

void ModelConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config '" + path.string() + "'");
  out << to_json().dump(1) << "\n";
}

}  // namespace circuit
