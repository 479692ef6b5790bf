#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace circuit {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

// Named f32 tensors in a single file:
//
//   u64 (little-endian)  header length in bytes
//   header               JSON object: name -> {"dtype":"f32","shape":[...],
//                        "data_offsets":[begin,end]}, plus an optional
//                        "__metadata__" object of string -> string
//   payload              raw little-endian floats; offsets are relative to
//                        the first payload byte
class TensorArchive {
 public:
  // Throws ArchiveError if `name` is already present.
  void put(const std::string& name, Tensor tensor);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, Tensor>& entries() const { return entries_; }

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  std::vector<std::byte> serialize() const;
  static TensorArchive parse(std::span<const std::byte> bytes);

  void write(const std::filesystem::path& path) const;
  static TensorArchive read(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> entries_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace circuit
