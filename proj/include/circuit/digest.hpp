#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace circuit {

class TensorArchive;

// Incremental SHA-256 (OpenSSL) producing lowercase hex.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  std::string hex();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

std::string sha256_hex(std::string_view text);
std::string file_sha256(const std::filesystem::path& path);
// Digest over tensor names, shapes and payloads (metadata excluded).
std::string archive_digest(const TensorArchive& archive);

}  // namespace circuit
