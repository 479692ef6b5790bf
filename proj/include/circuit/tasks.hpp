#pragma once

#include "circuit/tensor.hpp"
#include "circuit/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace circuit {

enum class TaskKind { acronyms, ioi, greater_than };

std::string to_string(TaskKind kind);
TaskKind parse_task(const std::string& name);

// One fixed-template prompt. The scored prediction is always the one made
// after the last token.
struct PromptSample {
  std::vector<int> tokens;
  int answer_token = 0;
  std::optional<int> distractor_token;  // IOI subject
  std::vector<int> valid_answers;       // greater-than: years > YY
  std::vector<int> answer_space;        // greater-than: the restricted year tokens
  std::string text;

  int answer_position() const { return static_cast<int>(tokens.size()) - 1; }
  bool operator==(const PromptSample&) const = default;
};

struct TaskDataset {
  TaskKind task = TaskKind::acronyms;
  std::uint64_t seed = 0;
  std::vector<PromptSample> patching;    // D_a: source of mean activations
  std::vector<PromptSample> validation;  // D_v: where KL deltas are measured
  int resampled = 0;                     // greater-than years that tokenized as one token

  int template_length() const;
  bool operator==(const TaskDataset&) const = default;
};

TokenMatrix to_token_matrix(std::span<const PromptSample> samples);

struct WordPools {
  std::vector<std::string> acronym_words;
  std::vector<std::string> names;
  std::vector<std::string> places;
  std::vector<std::string> objects;
  std::vector<std::string> nouns;

  // Reads acronym_words.json, ioi_names.json, ioi_places.json,
  // ioi_objects.json and greater_than_nouns.json from `dir`.
  static WordPools load(const std::filesystem::path& dir);
};

// "The C1T1 C2T2 C3T3 (A1A2" built from single-token pieces; each word's
// leading-space form must tokenize as | X|rest| where X is its capital.
PromptSample make_acronym_sample(const BpeTokenizer& tok, const std::string& w1, const std::string& w2,
                                 const std::string& w3);
std::string render_acronym_text(const std::string& w1, const std::string& w2, const std::string& w3);
// "Then, B and A went to the PLACE. B gave a OBJECT to" -> " A".
PromptSample make_ioi_sample(const BpeTokenizer& tok, const std::string& subject, const std::string& indirect_object,
                             const std::string& place, const std::string& object);
// "The NOUN lasted from the year XXYY to the year XX"; throws DatasetError
// if " XXYY" does not split as | XX|YY|.
PromptSample make_greater_than_sample(const BpeTokenizer& tok, const std::string& noun, int century, int yy);
// Token ids of "02".."99", the restricted answer space for greater-than.
std::vector<int> year_tokens(const BpeTokenizer& tok);

// Datasets of n distinct samples, first n/2 -> D_a, rest -> D_v.
TaskDataset gen_acronyms(const BpeTokenizer& tok, int n, std::uint64_t seed, const std::vector<std::string>& words);
TaskDataset gen_ioi(const BpeTokenizer& tok, int n, std::uint64_t seed, const std::vector<std::string>& names,
                    const std::vector<std::string>& places, const std::vector<std::string>& objects);
TaskDataset gen_greater_than(const BpeTokenizer& tok, int n, std::uint64_t seed,
                             const std::vector<std::string>& nouns);
TaskDataset generate(TaskKind kind, const BpeTokenizer& tok, int n, std::uint64_t seed, const WordPools& pools);

// acronyms: full-vocab argmax == answer; IOI: logit(answer) > logit(subject);
// greater-than: argmax over answer_space lies in valid_answers.
bool is_correct(TaskKind task, std::span<const float> logits_row, const PromptSample& sample);

// JSON lines, one sample per line with its split ("a"/"v").
void write_dataset(const TaskDataset& ds, const std::filesystem::path& path);
TaskDataset read_dataset(const std::filesystem::path& path);

}  // namespace circuit
