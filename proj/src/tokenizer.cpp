#include "circuit/tokenizer.hpp"

#include "circuit/error.hpp"

#include <json.hpp>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <fstream>
#include <limits>
#include <sstream>

namespace circuit {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TokenizerError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  std::int32_t len = 0;
  [[maybe_unused]] UBool error = false;
  U8_APPEND(buf, len, U8_MAX_LENGTH, c, error);
  out.append(buf, static_cast<std::size_t>(len));
}

// The reversible byte -> printable code point table of the GPT-2 assets.
std::array<std::string, 256> make_byte_table() {
  std::array<bool, 256> printable{};
  for (int b = '!'; b <= '~'; ++b) printable[b] = true;
  for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
  for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
  std::array<std::string, 256> table;
  int next = 0;
  for (int b = 0; b < 256; ++b) {
    const UChar32 c = printable[b] ? b : 256 + next++;
    append_utf8(table[b], c);
  }
  return table;
}

enum class CharClass { letter, number, space, other };

struct CodePoint {
  UChar32 value;
  std::size_t begin, end;
  CharClass cls;
};

CharClass classify(UChar32 c) {
  if (c < 0) return CharClass::other;
  if (u_isUWhiteSpace(c)) return CharClass::space;
  const auto mask = U_GET_GC_MASK(c);
  if (mask & U_GC_L_MASK) return CharClass::letter;
  if (mask & U_GC_N_MASK) return CharClass::number;
  return CharClass::other;
}

std::vector<CodePoint> code_points(std::string_view text) {
  std::vector<CodePoint> out;
  const auto* s = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto length = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < length) {
    const std::int32_t begin = i;
    UChar32 c = 0;
    U8_NEXT(s, i, length, c);  // c < 0 on an ill-formed sequence; i advances past it
    out.push_back({c, static_cast<std::size_t>(begin), static_cast<std::size_t>(i), classify(c)});
  }
  return out;
}

std::string merge_key(std::string_view a, std::string_view b) {
  std::string k;
  k.reserve(a.size() + b.size() + 1);
  k.append(a);
  k.push_back('\x01');
  k.append(b);
  return k;
}

}  // namespace

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& vocab_file, const std::filesystem::path& merges_file) {
  return from_strings(read_text(vocab_file), read_text(merges_file));
}

BpeTokenizer BpeTokenizer::from_strings(std::string_view vocab_json, std::string_view merges_text) {
  BpeTokenizer t;
  nlohmann::json vocab;
  try {
    vocab = nlohmann::json::parse(vocab_json);
  } catch (const nlohmann::json::exception& e) {
    throw TokenizerError(std::string("vocab: invalid JSON: ") + e.what());
  }
  if (!vocab.is_object() || vocab.empty()) throw TokenizerError("vocab: expected a non-empty JSON object");

  const std::size_t size = vocab.size();
  t.id_to_token_.assign(size, {});
  std::vector<bool> seen(size, false);
  for (const auto& [token, id_json] : vocab.items()) {
    if (!id_json.is_number_integer()) throw TokenizerError("vocab: id for '" + token + "' is not an integer");
    const auto id = id_json.get<long long>();
    if (id < 0 || id >= static_cast<long long>(size)) {
      throw TokenizerError("vocab: id " + std::to_string(id) + " for '" + token + "' outside [0, " +
                           std::to_string(size) + ")");
    }
    if (seen[static_cast<std::size_t>(id)]) throw TokenizerError("vocab: duplicate id " + std::to_string(id));
    seen[static_cast<std::size_t>(id)] = true;
    t.id_to_token_[static_cast<std::size_t>(id)] = token;
    t.vocab_.emplace(token, static_cast<int>(id));
  }

  std::istringstream lines{std::string(merges_text)};
  std::string line;
  int line_no = 0;
  int rank = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("#version", 0) == 0) continue;
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 == line.size() ||
        line.find(' ', space + 1) != std::string::npos) {
      throw TokenizerError("merges: malformed line " + std::to_string(line_no) + ": '" + line + "'");
    }
    const std::string left = line.substr(0, space), right = line.substr(space + 1);
    for (const auto& sym : {left, right, left + right}) {
      if (!t.vocab_.count(sym)) {
        throw TokenizerError("merges: line " + std::to_string(line_no) + " references unknown symbol '" + sym + "'");
      }
    }
    t.merge_ranks_.emplace(merge_key(left, right), rank++);
  }

  t.byte_to_unicode_ = make_byte_table();
  for (int b = 0; b < 256; ++b) t.unicode_to_byte_.emplace(t.byte_to_unicode_[b], static_cast<unsigned char>(b));
  return t;
}

// Splits text the way the GPT-2 pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
// does, working on code points. Ill-formed UTF-8 bytes count as "other".
std::vector<std::string> BpeTokenizer::pretokenize(std::string_view text) const {
  const auto cps = code_points(text);
  const std::size_t n = cps.size();
  std::vector<std::string> pieces;
  auto emit = [&](std::size_t from, std::size_t to) {
    pieces.emplace_back(text.substr(cps[from].begin, cps[to - 1].end - cps[from].begin));
  };
  auto is = [&](std::size_t at, UChar32 c) { return at < n && cps[at].value == c; };

  std::size_t i = 0;
  while (i < n) {
    if (cps[i].value == '\'') {
      if (is(i + 1, 's') || is(i + 1, 't') || is(i + 1, 'm') || is(i + 1, 'd')) {
        emit(i, i + 2);
        i += 2;
        continue;
      }
      if ((is(i + 1, 'r') && is(i + 2, 'e')) || (is(i + 1, 'v') && is(i + 2, 'e')) ||
          (is(i + 1, 'l') && is(i + 2, 'l'))) {
        emit(i, i + 3);
        i += 3;
        continue;
      }
    }
    bool matched = false;
    for (CharClass run : {CharClass::letter, CharClass::number, CharClass::other}) {
      std::size_t j = i;
      if (cps[j].value == ' ' && j + 1 < n && cps[j + 1].cls == run) ++j;
      if (cps[j].cls != run) continue;
      while (j < n && cps[j].cls == run) ++j;
      emit(i, j);
      i = j;
      matched = true;
      break;
    }
    if (matched) continue;

    // Whitespace: leave the last space of a run for the following word.
    std::size_t j = i;
    while (j < n && cps[j].cls == CharClass::space) ++j;
    const std::size_t end = (j == n) ? n : (j - i >= 2 ? j - 1 : i + 1);
    emit(i, end);
    i = end;
  }
  return pieces;
}

void BpeTokenizer::bpe(const std::string& word, std::vector<int>& out) const {
  std::vector<std::string> symbols;
  symbols.reserve(word.size());
  for (unsigned char b : word) symbols.push_back(byte_to_unicode_[b]);

  while (symbols.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best = 0;
    for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
      auto it = merge_ranks_.find(merge_key(symbols[k], symbols[k + 1]));
      if (it != merge_ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = k;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const std::string first = symbols[best], second = symbols[best + 1];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t k = 0; k < symbols.size();) {
      if (k + 1 < symbols.size() && symbols[k] == first && symbols[k + 1] == second) {
        merged.push_back(first + second);
        k += 2;
      } else {
        merged.push_back(std::move(symbols[k]));
        ++k;
      }
    }
    symbols = std::move(merged);
  }
  for (const auto& s : symbols) {
    auto it = vocab_.find(s);
    if (it == vocab_.end()) throw TokenizerError("vocab has no entry for symbol '" + s + "'");
    out.push_back(it->second);
  }
}

std::vector<int> BpeTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : pretokenize(text)) bpe(piece, ids);
  return ids;
}

std::string BpeTokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw TokenizerError("token id " + std::to_string(id) + " out of range");
    const std::string& token = id_to_token_[static_cast<std::size_t>(id)];
    const auto* s = reinterpret_cast<const std::uint8_t*>(token.data());
    const auto length = static_cast<std::int32_t>(token.size());
    std::int32_t i = 0;
    while (i < length) {
      const std::int32_t begin = i;
      UChar32 c = 0;
      U8_NEXT(s, i, length, c);
      auto it = unicode_to_byte_.find(token.substr(static_cast<std::size_t>(begin), static_cast<std::size_t>(i - begin)));
      if (c < 0 || it == unicode_to_byte_.end()) {
        throw TokenizerError("token " + std::to_string(id) + " is not byte-level encoded");
      }
      out.push_back(static_cast<char>(it->second));
    }
  }
  return out;
}

std::optional<int> BpeTokenizer::single_token(std::string_view text) const {
  const auto ids = encode(text);
  if (ids.size() != 1) return std::nullopt;
  return ids.front();
}

void BpeTokenizer::check_compatible(const ModelConfig& config) const {
  if (vocab_size() != config.vocab_size) {
    throw TokenizerError("tokenizer vocab size " + std::to_string(vocab_size()) + " != model vocab_size " +
                         std::to_string(config.vocab_size));
  }
}

}  // namespace circuit
