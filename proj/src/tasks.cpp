#include "circuit/tasks.hpp"

#include "circuit/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <tuple>

namespace circuit {

namespace {

// Portable bounded draw; std::uniform_int_distribution differs between
// standard libraries, which would break cross-platform reproducibility.
std::size_t draw(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return static_cast<std::size_t>(v % n);
}

int draw_range(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(draw(rng, static_cast<std::size_t>(hi - lo + 1)));
}

int require_single(const BpeTokenizer& tok, const std::string& text, const std::string& what) {
  auto id = tok.single_token(text);
  if (!id) throw DatasetError(what + " '" + text + "' is not a single token");
  return *id;
}

std::string two_digits(int v) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d", v);
  return buf;
}

TaskDataset split(TaskKind kind, std::uint64_t seed, std::vector<PromptSample> samples) {
  TaskDataset ds;
  ds.task = kind;
  ds.seed = seed;
  const auto half = static_cast<std::ptrdiff_t>(samples.size() / 2);
  ds.patching.assign(samples.begin(), samples.begin() + half);
  ds.validation.assign(samples.begin() + half, samples.end());
  return ds;
}

void check_count(int n) {
  if (n < 2) throw DatasetError("dataset size must be at least 2 (one patching and one validation sample)");
}

constexpr int kFirstCentury = 11, kLastCentury = 17;
constexpr int kFirstYear = 2, kLastYear = 98;

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::acronyms: return "acronyms";
    case TaskKind::ioi: return "ioi";
    case TaskKind::greater_than: return "greater-than";
  }
  return "?";
}

TaskKind parse_task(const std::string& name) {
  if (name == "acronyms") return TaskKind::acronyms;
  if (name == "ioi") return TaskKind::ioi;
  if (name == "greater-than" || name == "greater_than") return TaskKind::greater_than;
  throw DatasetError("unknown task '" + name + "' (expected acronyms, ioi or greater-than)");
}

int TaskDataset::template_length() const {
  const auto& any = !patching.empty() ? patching : validation;
  if (any.empty()) throw DatasetError("dataset is empty");
  return static_cast<int>(any.front().tokens.size());
}

TokenMatrix to_token_matrix(std::span<const PromptSample> samples) {
  if (samples.empty()) throw DatasetError("no samples");
  const auto length = static_cast<Eigen::Index>(samples.front().tokens.size());
  TokenMatrix m(static_cast<Eigen::Index>(samples.size()), length);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<Eigen::Index>(samples[i].tokens.size()) != length) {
      throw DatasetError("samples are misaligned: lengths " + std::to_string(length) + " and " +
                         std::to_string(samples[i].tokens.size()));
    }
    for (Eigen::Index j = 0; j < length; ++j) m(static_cast<Eigen::Index>(i), j) = samples[i].tokens[j];
  }
  return m;
}

WordPools WordPools::load(const std::filesystem::path& dir) {
  auto read = [&](const char* file) {
    const auto path = dir / file;
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open pool file '" + path.string() + "'");
    try {
      nlohmann::json j;
      in >> j;
      auto words = j.get<std::vector<std::string>>();
      if (words.empty()) throw DatasetError("pool file '" + path.string() + "' is empty");
      return words;
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("pool file '" + path.string() + "': " + e.what());
    }
  };
  WordPools p;
  p.acronym_words = read("acronym_words.json");
  p.names = read("ioi_names.json");
  p.places = read("ioi_places.json");
  p.objects = read("ioi_objects.json");
  p.nouns = read("greater_than_nouns.json");
  return p;
}

// ---------------------------------------------------------------------------
// Acronyms

std::string render_acronym_text(const std::string& w1, const std::string& w2, const std::string& w3) {
  return "The " + w1 + " " + w2 + " " + w3 + " (" + w1.substr(0, 1) + w2.substr(0, 1);
}

namespace {

struct AcronymWord {
  int capital;  // " X"
  int rest;
  int letter;  // "X"
};

AcronymWord split_acronym_word(const BpeTokenizer& tok, const std::string& word) {
  if (word.size() < 2 || !std::isupper(static_cast<unsigned char>(word[0]))) {
    throw DatasetError("acronym word '" + word + "' must start with a capital letter");
  }
  const auto ids = tok.encode(" " + word);
  const auto capital = tok.single_token(" " + word.substr(0, 1));
  const auto rest = tok.single_token(word.substr(1));
  if (ids.size() != 2 || !capital || !rest || ids[0] != *capital || ids[1] != *rest) {
    throw DatasetError("acronym word '" + word + "' does not tokenize as | " + word.substr(0, 1) + "|" +
                       word.substr(1) + "|");
  }
  return {*capital, *rest, require_single(tok, word.substr(0, 1), "acronym letter")};
}

}  // namespace

PromptSample make_acronym_sample(const BpeTokenizer& tok, const std::string& w1, const std::string& w2,
                                 const std::string& w3) {
  const AcronymWord a = split_acronym_word(tok, w1), b = split_acronym_word(tok, w2), c = split_acronym_word(tok, w3);
  PromptSample s;
  s.tokens = {require_single(tok, "The", "template token"),
              a.capital, a.rest, b.capital, b.rest, c.capital, c.rest,
              require_single(tok, " (", "template token"),
              a.letter, b.letter};
  s.answer_token = c.letter;
  s.text = render_acronym_text(w1, w2, w3);
  return s;
}

TaskDataset gen_acronyms(const BpeTokenizer& tok, int n, std::uint64_t seed, const std::vector<std::string>& words) {
  check_count(n);
  if (words.size() < 3) throw DatasetError("acronym pool needs at least 3 words");
  for (const auto& w : words) split_acronym_word(tok, w);

  std::mt19937_64 rng(seed);
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> used;
  std::vector<PromptSample> samples;
  for (long attempts = 0; static_cast<int>(samples.size()) < n; ++attempts) {
    if (attempts > 1000L * n) throw DatasetError("acronym pool exhausted before " + std::to_string(n) + " samples");
    const auto i = draw(rng, words.size()), j = draw(rng, words.size()), k = draw(rng, words.size());
    if (i == j || j == k || i == k || !used.emplace(i, j, k).second) continue;
    samples.push_back(make_acronym_sample(tok, words[i], words[j], words[k]));
  }
  return split(TaskKind::acronyms, seed, std::move(samples));
}

// ---------------------------------------------------------------------------
// IOI

PromptSample make_ioi_sample(const BpeTokenizer& tok, const std::string& subject, const std::string& indirect_object,
                             const std::string& place, const std::string& object) {
  if (subject == indirect_object) throw DatasetError("IOI names must differ (got '" + subject + "' twice)");
  const int s_id = require_single(tok, " " + subject, "IOI name");
  const int io_id = require_single(tok, " " + indirect_object, "IOI name");
  require_single(tok, " " + place, "IOI place");
  require_single(tok, " " + object, "IOI object");

  PromptSample s;
  s.text = "Then, " + subject + " and " + indirect_object + " went to the " + place + ". " + subject + " gave a " +
           object + " to";
  s.tokens = tok.encode(s.text);
  if (s.tokens.size() != 15 || s.tokens[2] != s_id || s.tokens[4] != io_id || s.tokens[10] != s_id) {
    throw DatasetError("IOI prompt '" + s.text + "' breaks template alignment");
  }
  s.answer_token = io_id;
  s.distractor_token = s_id;
  return s;
}

TaskDataset gen_ioi(const BpeTokenizer& tok, int n, std::uint64_t seed, const std::vector<std::string>& names,
                    const std::vector<std::string>& places, const std::vector<std::string>& objects) {
  check_count(n);
  for (const auto& w : names) require_single(tok, " " + w, "IOI name");
  for (const auto& w : places) require_single(tok, " " + w, "IOI place");
  for (const auto& w : objects) require_single(tok, " " + w, "IOI object");
  const std::set<std::string> distinct(names.begin(), names.end());
  const double combos = static_cast<double>(distinct.size()) * static_cast<double>(distinct.size() - 1) *
                        static_cast<double>(places.size()) * static_cast<double>(objects.size());
  if (distinct.size() < 2 || places.empty() || objects.empty() || combos < n) {
    throw DatasetError("IOI pools exhausted: cannot draw " + std::to_string(n) + " distinct prompts");
  }

  std::mt19937_64 rng(seed);
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> used;
  std::vector<PromptSample> samples;
  for (long attempts = 0; static_cast<int>(samples.size()) < n; ++attempts) {
    if (attempts > 1000L * n) throw DatasetError("IOI pools exhausted before " + std::to_string(n) + " samples");
    const auto b = draw(rng, names.size()), a = draw(rng, names.size());
    const auto p = draw(rng, places.size()), o = draw(rng, objects.size());
    if (names[a] == names[b] || !used.emplace(b, a, p, o).second) continue;
    samples.push_back(make_ioi_sample(tok, names[b], names[a], places[p], objects[o]));
  }
  return split(TaskKind::ioi, seed, std::move(samples));
}

// ---------------------------------------------------------------------------
// Greater-than

std::vector<int> year_tokens(const BpeTokenizer& tok) {
  std::vector<int> ids;
  for (int v = 2; v <= 99; ++v) ids.push_back(require_single(tok, two_digits(v), "year token"));
  return ids;
}

namespace {

bool year_splits(const BpeTokenizer& tok, int century, int yy) {
  const auto ids = tok.encode(" " + std::to_string(century) + two_digits(yy));
  const auto xx = tok.single_token(" " + std::to_string(century));
  const auto rest = tok.single_token(two_digits(yy));
  return ids.size() == 2 && xx && rest && ids[0] == *xx && ids[1] == *rest;
}

}  // namespace

PromptSample make_greater_than_sample(const BpeTokenizer& tok, const std::string& noun, int century, int yy) {
  if (century < kFirstCentury || century > kLastCentury || yy < kFirstYear || yy > kLastYear) {
    throw DatasetError("greater-than year " + std::to_string(century) + two_digits(yy) + " outside the sampled range");
  }
  require_single(tok, " " + noun, "greater-than noun");
  if (!year_splits(tok, century, yy)) {
    throw DatasetError("year ' " + std::to_string(century) + two_digits(yy) + "' does not split as |XX|YY|");
  }
  PromptSample s;
  const std::string xx = std::to_string(century);
  s.text = "The " + noun + " lasted from the year " + xx + two_digits(yy) + " to the year " + xx;
  s.tokens = tok.encode(s.text);
  if (s.tokens.size() != 12) throw DatasetError("greater-than prompt '" + s.text + "' breaks template alignment");
  s.answer_space = year_tokens(tok);
  for (int v = yy + 1; v <= 99; ++v) s.valid_answers.push_back(require_single(tok, two_digits(v), "year token"));
  s.answer_token = s.valid_answers.front();
  return s;
}

TaskDataset gen_greater_than(const BpeTokenizer& tok, int n, std::uint64_t seed, const std::vector<std::string>& nouns) {
  check_count(n);
  if (nouns.empty()) throw DatasetError("greater-than noun pool is empty");
  for (const auto& w : nouns) require_single(tok, " " + w, "greater-than noun");

  std::mt19937_64 rng(seed);
  std::set<std::tuple<std::size_t, int, int>> used;
  std::vector<PromptSample> samples;
  int resampled = 0;
  for (long attempts = 0; static_cast<int>(samples.size()) < n; ++attempts) {
    if (attempts > 1000L * n) throw DatasetError("greater-than pool exhausted before " + std::to_string(n) + " samples");
    const auto noun = draw(rng, nouns.size());
    const int century = draw_range(rng, kFirstCentury, kLastCentury);
    const int yy = draw_range(rng, kFirstYear, kLastYear);
    if (!year_splits(tok, century, yy)) {
      ++resampled;
      continue;
    }
    if (!used.emplace(noun, century, yy).second) continue;
    samples.push_back(make_greater_than_sample(tok, nouns[noun], century, yy));
  }
  auto ds = split(TaskKind::greater_than, seed, std::move(samples));
  ds.resampled = resampled;
  return ds;
}

TaskDataset generate(TaskKind kind, const BpeTokenizer& tok, int n, std::uint64_t seed, const WordPools& pools) {
  switch (kind) {
    case TaskKind::acronyms: return gen_acronyms(tok, n, seed, pools.acronym_words);
    case TaskKind::ioi: return gen_ioi(tok, n, seed, pools.names, pools.places, pools.objects);
    case TaskKind::greater_than: return gen_greater_than(tok, n, seed, pools.nouns);
  }
  throw DatasetError("unknown task");
}

// ---------------------------------------------------------------------------
// Scoring

bool is_correct(TaskKind task, std::span<const float> logits, const PromptSample& sample) {
  switch (task) {
    case TaskKind::acronyms: {
      const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
      return best == sample.answer_token;
    }
    case TaskKind::ioi:
      return sample.distractor_token &&
             logits[static_cast<std::size_t>(sample.answer_token)] >
                 logits[static_cast<std::size_t>(*sample.distractor_token)];
    case TaskKind::greater_than: {
      if (sample.answer_space.empty()) return false;
      int best = sample.answer_space.front();
      for (int id : sample.answer_space) {
        if (logits[static_cast<std::size_t>(id)] > logits[static_cast<std::size_t>(best)]) best = id;
      }
      return std::find(sample.valid_answers.begin(), sample.valid_answers.end(), best) != sample.valid_answers.end();
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Serialization

void write_dataset(const TaskDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write dataset '" + path.string() + "'");
  auto emit = [&](const PromptSample& s, const char* split_name) {
    nlohmann::ordered_json j;
    j["task"] = to_string(ds.task);
    j["seed"] = ds.seed;
    j["split"] = split_name;
    j["text"] = s.text;
    j["tokens"] = s.tokens;
    j["answer"] = s.answer_token;
    if (s.distractor_token) j["distractor"] = *s.distractor_token;
    if (!s.valid_answers.empty()) j["valid_answers"] = s.valid_answers;
    if (!s.answer_space.empty()) j["answer_space"] = s.answer_space;
    if (ds.resampled) j["resampled"] = ds.resampled;
    out << j.dump() << "\n";
  };
  for (const auto& s : ds.patching) emit(s, "a");
  for (const auto& s : ds.validation) emit(s, "v");
}

TaskDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset '" + path.string() + "'");
  TaskDataset ds;
  std::string line;
  int line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto task = parse_task(j.at("task").get<std::string>());
      const auto seed = j.at("seed").get<std::uint64_t>();
      if (first) {
        ds.task = task;
        ds.seed = seed;
        first = false;
      } else if (task != ds.task || seed != ds.seed) {
        throw DatasetError("mixed task/seed");
      }
      PromptSample s;
      s.text = j.value("text", "");
      s.tokens = j.at("tokens").get<std::vector<int>>();
      s.answer_token = j.at("answer").get<int>();
      if (j.contains("distractor")) s.distractor_token = j["distractor"].get<int>();
      if (j.contains("valid_answers")) s.valid_answers = j["valid_answers"].get<std::vector<int>>();
      if (j.contains("answer_space")) s.answer_space = j["answer_space"].get<std::vector<int>>();
      ds.resampled = j.value("resampled", 0);
      const auto split_name = j.at("split").get<std::string>();
      if (split_name == "a") {
        ds.patching.push_back(std::move(s));
      } else if (split_name == "v") {
        ds.validation.push_back(std::move(s));
      } else {
        throw DatasetError("split must be 'a' or 'v'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DatasetError& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (ds.patching.empty() || ds.validation.empty()) {
    throw DatasetError("dataset '" + path.string() + "' needs both patching and validation samples");
  }
  const int length = ds.template_length();
  for (const auto* part : {&ds.patching, &ds.validation}) {
    for (const auto& s : *part) {
      if (static_cast<int>(s.tokens.size()) != length) {
        throw DatasetError("dataset '" + path.string() + "' is misaligned: sample lengths differ");
      }
    }
  }
  return ds;
}

}  // namespace circuit
