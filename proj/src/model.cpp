#include "circuit/model.hpp"

#include "circuit/digest.hpp"
#include "circuit/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>

namespace circuit {

// ---------------------------------------------------------------------------
// ComponentId

std::string ComponentId::str() const {
  return "L" + std::to_string(layer) + (is_head() ? "H" + std::to_string(head) : std::string("MLP"));
}

ComponentId ComponentId::parse(const std::string& text) {
  static const std::regex pattern(R"(L(\d+)(?:H(\d+)|(MLP)))");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) throw Error("malformed component id '" + text + "'");
  const int layer = std::stoi(m[1].str());
  if (m[3].matched) return mlp(layer);
  return attention_head(layer, std::stoi(m[2].str()));
}

// ---------------------------------------------------------------------------
// Architecture

const HeadWeights* LayerWeights::find_head(int index) const {
  for (const auto& h : heads) {
    if (h->index == index) return h.get();
  }
  return nullptr;
}

namespace {

bool same_optional_matrix(const std::optional<Matrix>& a, const std::optional<Matrix>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->rows() == b->rows() && a->cols() == b->cols() && *a == *b;
}

}  // namespace

bool LayerArchitecture::operator==(const LayerArchitecture& other) const {
  return retained_heads == other.retained_heads && mlp_retained == other.mlp_retained &&
         same_optional_matrix(attn_residual_bias, other.attn_residual_bias) &&
         same_optional_matrix(mlp_residual_bias, other.mlp_residual_bias);
}

Architecture Architecture::full(const ModelConfig& config) {
  Architecture a;
  a.layers.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& l : a.layers) {
    l.retained_heads.resize(static_cast<std::size_t>(config.num_heads));
    for (int h = 0; h < config.num_heads; ++h) l.retained_heads[static_cast<std::size_t>(h)] = h;
  }
  return a;
}

std::size_t Architecture::retained_head_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.retained_heads.size();
  return n;
}

std::size_t Architecture::retained_mlp_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const auto& l) { return l.mlp_retained; }));
}

nlohmann::json Architecture::to_json() const {
  nlohmann::json j;
  j["template_length"] = template_length ? nlohmann::json(*template_length) : nlohmann::json(nullptr);
  j["layers"] = nlohmann::json::array();
  for (const auto& l : layers) {
    j["layers"].push_back({{"heads", l.retained_heads},
                           {"mlp", l.mlp_retained},
                           {"attn_residual_bias", l.attn_residual_bias.has_value()},
                           {"mlp_residual_bias", l.mlp_residual_bias.has_value()}});
  }
  return j;
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  try {
    if (!j.at("template_length").is_null()) a.template_length = j.at("template_length").get<int>();
    for (const auto& lj : j.at("layers")) {
      LayerArchitecture l;
      l.retained_heads = lj.at("heads").get<std::vector<int>>();
      l.mlp_retained = lj.at("mlp").get<bool>();
      if (lj.value("attn_residual_bias", false)) l.attn_residual_bias = Matrix();
      if (lj.value("mlp_residual_bias", false)) l.mlp_residual_bias = Matrix();
      a.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  return a;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(Parts parts) : parts_(std::move(parts)) {
  const auto& c = parts_.config;
  c.validate();
  if (static_cast<int>(parts_.layers.size()) != c.num_layers) {
    throw ShapeError("model: layer count does not match config");
  }
  for (const auto& layer : parts_.layers) {
    int prev = -1;
    for (const auto& h : layer.heads) {
      if (h->index <= prev || h->index >= c.num_heads) {
        throw ShapeError("model: retained head indices must be ascending and < num_heads");
      }
      prev = h->index;
    }
    for (const auto* bias : {layer.attn_residual_bias.get(), layer.mlp_residual_bias.get()}) {
      if (bias == nullptr) continue;
      if (!parts_.template_length || bias->rows() != *parts_.template_length || bias->cols() != c.d_model) {
        throw ShapeError("model: residual bias must be template_length x d_model");
      }
    }
  }
}

bool Model::has_component(const ComponentId& id) const {
  if (id.layer < 0 || id.layer >= config().num_layers) return false;
  const auto& l = layer(id.layer);
  if (id.is_head()) return l.find_head(id.head) != nullptr;
  return l.mlp != nullptr;
}

std::vector<ComponentId> Model::retained_components() const {
  std::vector<ComponentId> out;
  for (int l = 0; l < config().num_layers; ++l) {
    for (const auto& h : layer(l).heads) out.push_back(ComponentId::attention_head(l, h->index));
    if (layer(l).mlp) out.push_back(ComponentId::mlp(l));
  }
  return out;
}

Architecture Model::architecture() const {
  Architecture a;
  a.template_length = parts_.template_length;
  for (const auto& l : parts_.layers) {
    LayerArchitecture la;
    for (const auto& h : l.heads) la.retained_heads.push_back(h->index);
    la.mlp_retained = l.mlp != nullptr;
    if (l.attn_residual_bias) la.attn_residual_bias = *l.attn_residual_bias;
    if (l.mlp_residual_bias) la.mlp_residual_bias = *l.mlp_residual_bias;
    a.layers.push_back(std::move(la));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Loading

namespace {

class ArchiveReader {
 public:
  explicit ArchiveReader(const TensorArchive& archive) : archive_(archive) {}

  const Tensor& take(const std::string& name, std::vector<std::int64_t> shape) {
    const Tensor& t = archive_.at(name);
    if (t.shape != shape) {
      throw ArchiveError("tensor '" + name + "': shape " + describe(t.shape) + ", expected " + describe(shape));
    }
    for (float v : t.data) {
      if (!std::isfinite(v)) throw ArchiveError("tensor '" + name + "': non-finite value");
    }
    used_.insert(name);
    return t;
  }

  Matrix matrix(const std::string& name, std::int64_t rows, std::int64_t cols) {
    const Tensor& t = take(name, {rows, cols});
    return Eigen::Map<const Matrix>(t.data.data(), rows, cols);
  }

  RowVector vector(const std::string& name, std::int64_t n) {
    const Tensor& t = take(name, {n});
    return Eigen::Map<const RowVector>(t.data.data(), n);
  }

  // Slice `index` of a [count, rows, cols] stack.
  Matrix stacked(const std::string& name, std::int64_t count, std::int64_t index, std::int64_t rows,
                 std::int64_t cols) {
    const Tensor& t = take(name, {count, rows, cols});
    return Eigen::Map<const Matrix>(t.data.data() + index * rows * cols, rows, cols);
  }

  RowVector stacked_row(const std::string& name, std::int64_t count, std::int64_t index, std::int64_t n) {
    const Tensor& t = take(name, {count, n});
    return Eigen::Map<const RowVector>(t.data.data() + index * n, n);
  }

  void reject_unused() const {
    for (const auto& [name, t] : archive_.entries()) {
      if (!used_.count(name)) throw ArchiveError("unexpected tensor '" + name + "' for this architecture");
    }
  }

 private:
  static std::string describe(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }

  const TensorArchive& archive_;
  std::set<std::string> used_;
};

std::string layer_name(int l, const char* suffix) { return "layer" + std::to_string(l) + "." + suffix; }

}  // namespace

Model load_model(const TensorArchive& archive, const ModelConfig& config) {
  return load_model(archive, config, Architecture::full(config));
}

Model load_model(const TensorArchive& archive, const ModelConfig& config, const Architecture& arch) {
  config.validate();
  if (static_cast<int>(arch.layers.size()) != config.num_layers) {
    throw ConfigError("architecture: layer count does not match config");
  }
  const std::int64_t d = config.d_model, dh = config.d_head, dm = config.d_mlp;
  const std::int64_t V = config.vocab_size, P = config.max_positions;
  ArchiveReader r(archive);

  Model::Parts parts;
  parts.config = config;
  parts.template_length = arch.template_length;
  parts.embedding = std::make_shared<const Matrix>(r.matrix("W_E", V, d));
  parts.positional = std::make_shared<const Matrix>(r.matrix("W_pos", P, d));
  parts.unembedding = std::make_shared<const Matrix>(r.matrix("W_U", d, V));
  parts.ln_final = {r.vector("ln_final.w", d), r.vector("ln_final.b", d)};

  for (int l = 0; l < config.num_layers; ++l) {
    const auto& la = arch.layers[static_cast<std::size_t>(l)];
    LayerWeights lw;
    lw.ln1 = {r.vector(layer_name(l, "ln1.w"), d), r.vector(layer_name(l, "ln1.b"), d)};
    lw.ln2 = {r.vector(layer_name(l, "ln2.w"), d), r.vector(layer_name(l, "ln2.b"), d)};
    lw.b_o = r.vector(layer_name(l, "b_O"), d);

    const auto kept = static_cast<std::int64_t>(la.retained_heads.size());
    for (std::int64_t i = 0; i < kept; ++i) {
      auto h = std::make_shared<HeadWeights>();
      h->index = la.retained_heads[static_cast<std::size_t>(i)];
      if (h->index < 0 || h->index >= config.num_heads) {
        throw ConfigError("architecture: head index " + std::to_string(h->index) + " out of range in layer " +
                          std::to_string(l));
      }
      h->w_q = r.stacked(layer_name(l, "W_Q"), kept, i, d, dh);
      h->w_k = r.stacked(layer_name(l, "W_K"), kept, i, d, dh);
      h->w_v = r.stacked(layer_name(l, "W_V"), kept, i, d, dh);
      h->b_q = r.stacked_row(layer_name(l, "b_Q"), kept, i, dh);
      h->b_k = r.stacked_row(layer_name(l, "b_K"), kept, i, dh);
      h->b_v = r.stacked_row(layer_name(l, "b_V"), kept, i, dh);
      h->w_o = r.stacked(layer_name(l, "W_O"), kept, i, dh, d);
      lw.heads.push_back(std::move(h));
    }
    if (la.mlp_retained) {
      auto m = std::make_shared<MlpWeights>();
      m->w_in = r.matrix(layer_name(l, "W_1"), d, dm);
      m->b_in = r.vector(layer_name(l, "b_1"), dm);
      m->w_out = r.matrix(layer_name(l, "W_2"), dm, d);
      m->b_out = r.vector(layer_name(l, "b_2"), d);
      lw.mlp = std::move(m);
    }
    if (la.attn_residual_bias || la.mlp_residual_bias) {
      if (!arch.template_length) throw ConfigError("architecture: residual bias without template_length");
    }
    if (la.attn_residual_bias) {
      lw.attn_residual_bias =
          std::make_shared<const Matrix>(r.matrix(layer_name(l, "attn_residual_bias"), *arch.template_length, d));
    }
    if (la.mlp_residual_bias) {
      lw.mlp_residual_bias =
          std::make_shared<const Matrix>(r.matrix(layer_name(l, "mlp_residual_bias"), *arch.template_length, d));
    }
    parts.layers.push_back(std::move(lw));
  }
  r.reject_unused();
  parts.lineage = "sha256:" + archive_digest(archive).substr(0, 16);
  return Model(std::move(parts));
}

namespace {

Tensor to_tensor(const Matrix& m) {
  Tensor t;
  t.shape = {m.rows(), m.cols()};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

Tensor to_tensor(const RowVector& v) {
  Tensor t;
  t.shape = {v.size()};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

template <typename Get>
Tensor stack(const std::vector<std::shared_ptr<const HeadWeights>>& heads, std::int64_t rows, std::int64_t cols,
             Get get) {
  Tensor t;
  t.shape = {static_cast<std::int64_t>(heads.size()), rows, cols};
  for (const auto& h : heads) {
    const Matrix& m = get(*h);
    t.data.insert(t.data.end(), m.data(), m.data() + m.size());
  }
  return t;
}

template <typename Get>
Tensor stack_rows(const std::vector<std::shared_ptr<const HeadWeights>>& heads, std::int64_t n, Get get) {
  Tensor t;
  t.shape = {static_cast<std::int64_t>(heads.size()), n};
  for (const auto& h : heads) {
    const RowVector& v = get(*h);
    t.data.insert(t.data.end(), v.data(), v.data() + v.size());
  }
  return t;
}

}  // namespace

TensorArchive to_archive(const Model& model) {
  const auto& p = model.parts();
  const std::int64_t d = p.config.d_model, dh = p.config.d_head;
  TensorArchive a;
  a.put("W_E", to_tensor(*p.embedding));
  a.put("W_pos", to_tensor(*p.positional));
  a.put("W_U", to_tensor(*p.unembedding));
  a.put("ln_final.w", to_tensor(p.ln_final.weight));
  a.put("ln_final.b", to_tensor(p.ln_final.bias));
  for (int l = 0; l < p.config.num_layers; ++l) {
    const auto& lw = p.layers[static_cast<std::size_t>(l)];
    a.put(layer_name(l, "ln1.w"), to_tensor(lw.ln1.weight));
    a.put(layer_name(l, "ln1.b"), to_tensor(lw.ln1.bias));
    a.put(layer_name(l, "ln2.w"), to_tensor(lw.ln2.weight));
    a.put(layer_name(l, "ln2.b"), to_tensor(lw.ln2.bias));
    a.put(layer_name(l, "b_O"), to_tensor(lw.b_o));
    a.put(layer_name(l, "W_Q"), stack(lw.heads, d, dh, [](const HeadWeights& h) -> const Matrix& { return h.w_q; }));
    a.put(layer_name(l, "W_K"), stack(lw.heads, d, dh, [](const HeadWeights& h) -> const Matrix& { return h.w_k; }));
    a.put(layer_name(l, "W_V"), stack(lw.heads, d, dh, [](const HeadWeights& h) -> const Matrix& { return h.w_v; }));
    a.put(layer_name(l, "W_O"), stack(lw.heads, dh, d, [](const HeadWeights& h) -> const Matrix& { return h.w_o; }));
    a.put(layer_name(l, "b_Q"), stack_rows(lw.heads, dh, [](const HeadWeights& h) -> const RowVector& { return h.b_q; }));
    a.put(layer_name(l, "b_K"), stack_rows(lw.heads, dh, [](const HeadWeights& h) -> const RowVector& { return h.b_k; }));
    a.put(layer_name(l, "b_V"), stack_rows(lw.heads, dh, [](const HeadWeights& h) -> const RowVector& { return h.b_v; }));
    if (lw.mlp) {
      a.put(layer_name(l, "W_1"), to_tensor(lw.mlp->w_in));
      a.put(layer_name(l, "b_1"), to_tensor(lw.mlp->b_in));
      a.put(layer_name(l, "W_2"), to_tensor(lw.mlp->w_out));
      a.put(layer_name(l, "b_2"), to_tensor(lw.mlp->b_out));
    }
    if (lw.attn_residual_bias) a.put(layer_name(l, "attn_residual_bias"), to_tensor(*lw.attn_residual_bias));
    if (lw.mlp_residual_bias) a.put(layer_name(l, "mlp_residual_bias"), to_tensor(*lw.mlp_residual_bias));
  }
  a.metadata()["lineage"] = model.lineage();
  return a;
}

void save_model_dir(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  to_archive(model).write(dir / "model.archive");
  model.config().save(dir / "config.json");
  std::ofstream out(dir / "architecture.json");
  if (!out) throw ArchiveError("cannot write '" + (dir / "architecture.json").string() + "'");
  out << model.architecture().to_json().dump(1) << "\n";
}

Model load_model_dir(const std::filesystem::path& dir) {
  const auto config = ModelConfig::load(dir / "config.json");
  const auto archive = TensorArchive::read(dir / "model.archive");
  const auto arch_path = dir / "architecture.json";
  if (!std::filesystem::exists(arch_path)) return load_model(archive, config);
  std::ifstream in(arch_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("architecture '" + arch_path.string() + "': " + e.what());
  }
  return load_model(archive, config, Architecture::from_json(j));
}

}  // namespace circuit
