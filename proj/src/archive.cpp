#include "circuit/archive.hpp"

#include "circuit/error.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace circuit {

namespace {

constexpr std::size_t kLengthPrefix = 8;
constexpr std::uint64_t kMaxHeaderBytes = 100ull << 20;

std::uint64_t read_u64_le(const std::byte* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(p[i]);
  return v;
}

void append_u64_le(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void copy_floats_le(const std::byte* src, std::size_t count, float* dst) {
  std::memcpy(dst, src, count * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) {
      auto bits = std::bit_cast<std::uint32_t>(dst[i]);
      bits = __builtin_bswap32(bits);
      dst[i] = std::bit_cast<float>(bits);
    }
  }
}

void append_floats_le(std::vector<std::byte>& out, const std::vector<float>& values) {
  const std::size_t at = out.size();
  out.resize(at + values.size() * sizeof(float));
  std::memcpy(out.data() + at, values.data(), values.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<std::uint32_t*>(out.data() + at);
    for (std::size_t i = 0; i < values.size(); ++i) p[i] = __builtin_bswap32(p[i]);
  }
}

}  // namespace

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

void TensorArchive::put(const std::string& name, Tensor tensor) {
  if (name == "__metadata__") throw ArchiveError("reserved tensor name '__metadata__'");
  if (tensor.numel() != tensor.data.size()) {
    throw ArchiveError("tensor '" + name + "': shape does not match payload size");
  }
  if (!entries_.emplace(name, std::move(tensor)).second) {
    throw ArchiveError("duplicate tensor '" + name + "'");
  }
}

const Tensor& TensorArchive::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArchiveError("missing tensor '" + name + "'");
  return it->second;
}

bool TensorArchive::contains(const std::string& name) const { return entries_.count(name) != 0; }

std::vector<std::byte> TensorArchive::serialize() const {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  if (!metadata_.empty()) header["__metadata__"] = metadata_;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : entries_) {
    const std::uint64_t bytes = t.data.size() * sizeof(float);
    header[name] = {{"dtype", "f32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  const std::string text = header.dump();

  std::vector<std::byte> out;
  out.reserve(kLengthPrefix + text.size() + offset);
  append_u64_le(out, text.size());
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  for (const auto& [name, t] : entries_) append_floats_le(out, t.data);
  return out;
}

TensorArchive TensorArchive::parse(std::span<const std::byte> bytes) {
  if (bytes.size() < kLengthPrefix) throw ArchiveError("archive truncated: no header length");
  const std::uint64_t header_len = read_u64_le(bytes.data());
  if (header_len > kMaxHeaderBytes || header_len > bytes.size() - kLengthPrefix) {
    throw ArchiveError("archive header length " + std::to_string(header_len) + " exceeds file size");
  }
  const char* header_begin = reinterpret_cast<const char*>(bytes.data() + kLengthPrefix);
  const std::span<const std::byte> payload = bytes.subspan(kLengthPrefix + header_len);

  // Duplicate keys are legal JSON but ambiguous here; catch them at depth 1.
  std::set<std::string> seen;
  std::string duplicate;
  auto on_event = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
    if (depth == 1 && event == nlohmann::json::parse_event_t::key) {
      const auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_begin, header_begin + header_len, on_event);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("archive header is not valid JSON: ") + e.what());
  }
  if (!duplicate.empty()) throw ArchiveError("duplicate tensor '" + duplicate + "' in archive header");
  if (!header.is_object()) throw ArchiveError("archive header must be a JSON object");

  TensorArchive archive;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      if (!entry.is_object()) throw ArchiveError("__metadata__ must be an object");
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) throw ArchiveError("__metadata__ value for '" + k + "' must be a string");
        archive.metadata_[k] = v.get<std::string>();
      }
      continue;
    }
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets")) {
      throw ArchiveError("tensor '" + name + "': header entry needs dtype, shape, data_offsets");
    }
    if (entry["dtype"] != "f32") {
      throw ArchiveError("tensor '" + name + "': unsupported dtype " + entry["dtype"].dump());
    }
    Tensor t;
    try {
      t.shape = entry["shape"].get<std::vector<std::int64_t>>();
    } catch (const nlohmann::json::exception&) {
      throw ArchiveError("tensor '" + name + "': shape must be an integer array");
    }
    for (auto d : t.shape) {
      if (d < 0) throw ArchiveError("tensor '" + name + "': negative dimension");
    }
    const auto& offsets = entry["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
        !offsets[1].is_number_unsigned()) {
      throw ArchiveError("tensor '" + name + "': data_offsets must be [begin, end]");
    }
    const auto begin = offsets[0].get<std::uint64_t>();
    const auto end = offsets[1].get<std::uint64_t>();
    if (begin > end || end > payload.size()) {
      throw ArchiveError("tensor '" + name + "': data_offsets out of payload range");
    }
    if (end - begin != t.numel() * sizeof(float)) {
      throw ArchiveError("tensor '" + name + "': byte range does not match shape");
    }
    t.data.resize(t.numel());
    copy_floats_le(payload.data() + begin, t.data.size(), t.data.data());
    archive.entries_.emplace(name, std::move(t));
  }
  return archive;
}

void TensorArchive::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArchiveError("failed writing '" + path.string() + "'");
}

TensorArchive TensorArchive::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ArchiveError("cannot open archive '" + path.string() + "'");
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw ArchiveError("failed reading archive '" + path.string() + "'");
  return parse(bytes);
}

}  // namespace circuit
