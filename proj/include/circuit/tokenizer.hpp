#pragma once

#include "circuit/config.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace circuit {

// Byte-level BPE compatible with the published GPT-2 vocabulary (JSON map
// token -> id) and merges file ("a b" per line after a "#version" header).
// No special tokens are recognised; "<|endoftext|>" in text is ordinary text.
// Read-only after construction, so concurrent encodes are safe.
class BpeTokenizer {
 public:
  static BpeTokenizer load(const std::filesystem::path& vocab_file, const std::filesystem::path& merges_file);
  static BpeTokenizer from_strings(std::string_view vocab_json, std::string_view merges_text);

  std::vector<int> encode(std::string_view text) const;
  // Throws TokenizerError on an id outside [0, vocab_size).
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  std::size_t merge_count() const { return merge_ranks_.size(); }
  // Id of `text` when it encodes to exactly one token.
  std::optional<int> single_token(std::string_view text) const;
  // Throws TokenizerError when vocab size differs from config.vocab_size.
  void check_compatible(const ModelConfig& config) const;

 private:
  BpeTokenizer() = default;
  std::vector<std::string> pretokenize(std::string_view text) const;
  void bpe(const std::string& word, std::vector<int>& out) const;

  std::unordered_map<std::string, int> vocab_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> merge_ranks_;  // key: left + '\x01' + right
  std::array<std::string, 256> byte_to_unicode_;
  std::unordered_map<std::string, unsigned char> unicode_to_byte_;
};

}  // namespace circuit
