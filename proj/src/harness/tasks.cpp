#include "crayon/harness/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "crayon/errors.hpp"
#include "crayon/model/sequence.hpp"
#include "crayon/model/tensor_file.hpp"

namespace crayon::harness {

namespace {

constexpr std::pair<Generator, const char*> kGeneratorNames[] = {
    {Generator::copy, "copy"},           {Generator::reverse, "reverse"},
    {Generator::sort_asc, "sort-asc"},   {Generator::sort_desc, "sort-desc"},
    {Generator::shift, "shift-k"},       {Generator::cipher, "cipher"},
};

}  // namespace

std::string generator_name(Generator g) {
  for (const auto& [gen, name] : kGeneratorNames) {
    if (gen == g) return name;
  }
  throw RangeError("unknown generator");
}

Generator parse_generator(const std::string& s) {
  for (const auto& [gen, name] : kGeneratorNames) {
    if (s == name) return gen;
  }
  throw RangeError("unknown generator '" + s + "'");
}

void TaskSpec::validate() const {
  if (task_id.empty()) throw CountError("task needs an id");
  if (alphabet_size < 2 || alphabet_size > static_cast<std::size_t>(model::kAlphabetSize)) {
    throw RangeError("task " + task_id + ": alphabet_size out of range");
  }
  if (min_len < 1 || min_len > max_len) throw RangeError("task " + task_id + ": bad length range");
  if (window_size < 1 || window_start + window_size > alphabet_size) {
    throw RangeError("task " + task_id + ": window outside the alphabet");
  }
  if (!(window_prob >= 0.0 && window_prob <= 1.0)) {
    throw RangeError("task " + task_id + ": window_prob outside [0, 1]");
  }
}

nlohmann::json to_json(const TaskSpec& t) {
  return {{"task_id", t.task_id},
          {"generator", generator_name(t.generator)},
          {"alphabet_size", t.alphabet_size},
          {"min_len", t.min_len},
          {"max_len", t.max_len},
          {"window_start", t.window_start},
          {"window_size", t.window_size},
          {"window_prob", t.window_prob},
          {"shift", t.shift},
          {"seed", t.seed}};
}

TaskSpec task_from_json(const nlohmann::json& j) {
  TaskSpec t;
  try {
    t.task_id = j.at("task_id").get<std::string>();
    t.generator = parse_generator(j.at("generator").get<std::string>());
    t.alphabet_size = j.value("alphabet_size", t.alphabet_size);
    t.min_len = j.value("min_len", t.min_len);
    t.max_len = j.value("max_len", t.max_len);
    t.window_start = j.value("window_start", t.window_start);
    t.window_size = j.value("window_size", t.window_size);
    t.window_prob = j.value("window_prob", t.window_prob);
    t.shift = j.value("shift", t.shift);
    t.seed = j.value("seed", t.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("task spec: ") + e.what());
  }
  t.validate();
  return t;
}

std::vector<TokenId> cipher_table(const TaskSpec& t) {
  std::vector<TokenId> table(t.alphabet_size);
  for (std::size_t i = 0; i < table.size(); ++i) table[i] = static_cast<TokenId>(i);
  numerics::SplitMix64 rng(numerics::derive_seed(t.seed, 0xC1F4));
  rng.shuffle(std::span<TokenId>(table));
  return table;
}

std::vector<TokenId> apply_task(const TaskSpec& t, std::span<const TokenId> prompt) {
  for (TokenId s : prompt) {
    if (s < 0 || static_cast<std::size_t>(s) >= t.alphabet_size) {
      throw RangeError("task " + t.task_id + ": symbol " + std::to_string(s) +
                       " outside the alphabet");
    }
  }
  std::vector<TokenId> out(prompt.begin(), prompt.end());
  const auto a = static_cast<TokenId>(t.alphabet_size);
  switch (t.generator) {
    case Generator::copy:
      break;
    case Generator::reverse:
      std::reverse(out.begin(), out.end());
      break;
    case Generator::sort_asc:
      std::sort(out.begin(), out.end());
      break;
    case Generator::sort_desc:
      std::sort(out.begin(), out.end(), std::greater<>());
      break;
    case Generator::shift:
      for (TokenId& s : out) s = static_cast<TokenId>((s + static_cast<TokenId>(t.shift)) % a);
      break;
    case Generator::cipher: {
      const auto table = cipher_table(t);
      for (TokenId& s : out) s = table[static_cast<std::size_t>(s)];
      break;
    }
  }
  return out;
}

std::vector<TokenId> sample_prompt(const TaskSpec& t, numerics::SplitMix64& rng) {
  const std::size_t len = t.min_len + static_cast<std::size_t>(rng.below(t.max_len - t.min_len + 1));
  std::vector<TokenId> p(len);
  for (TokenId& s : p) {
    if (rng.uniform() < t.window_prob) {
      s = static_cast<TokenId>(t.window_start + rng.below(t.window_size));
    } else {
      s = static_cast<TokenId>(rng.below(t.alphabet_size));
    }
  }
  return p;
}

std::vector<TaskSpec> default_tasks(double window_prob, std::uint64_t seed) {
  const Generator gens[] = {Generator::copy,      Generator::reverse, Generator::sort_asc,
                            Generator::sort_desc, Generator::shift,   Generator::cipher};
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < 6; ++i) {
    TaskSpec t;
    t.generator = gens[i];
    t.task_id = generator_name(gens[i]);
    t.window_start = 4 * i;
    t.window_size = 4;
    t.window_prob = window_prob;
    t.seed = numerics::derive_seed(seed, i);
    tasks.push_back(t);
  }
  return tasks;
}

nlohmann::json to_json(const SplitCounts& c) {
  return {{"train", c.train},
          {"customization", c.customization},
          {"eval", c.eval},
          {"calibration", c.calibration}};
}

SplitCounts split_counts_from_json(const nlohmann::json& j) {
  SplitCounts c;
  c.train = j.value("train", c.train);
  c.customization = j.value("customization", c.customization);
  c.eval = j.value("eval", c.eval);
  c.calibration = j.value("calibration", c.calibration);
  return c;
}

Corpus gen_corpus(std::span<const TaskSpec> tasks, const SplitCounts& counts, std::uint64_t seed) {
  if (tasks.size() < 2) throw CountError("gen_corpus: need at least two tasks");
  std::set<std::string> ids;
  for (const TaskSpec& t : tasks) {
    t.validate();
    if (!ids.insert(t.task_id).second) throw RangeError("duplicate task id " + t.task_id);
  }
  Corpus c;
  std::vector<Record>* splits[] = {&c.customization, &c.eval, &c.calibration, &c.train};
  const std::size_t sizes[] = {counts.customization, counts.eval, counts.calibration, counts.train};
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const TaskSpec& t = tasks[k];
    numerics::SplitMix64 rng(numerics::derive_seed(seed, 1000 + k));
    std::set<std::vector<TokenId>> seen;
    for (std::size_t s = 0; s < 4; ++s) {
      std::size_t made = 0, attempts = 0;
      while (made < sizes[s]) {
        if (++attempts > 1000 * (sizes[s] + 10)) {
          throw CountError("gen_corpus: task " + t.task_id + " cannot supply enough distinct prompts");
        }
        std::vector<TokenId> p = sample_prompt(t, rng);
        if (!seen.insert(p).second) continue;
        Record r{t.task_id, p, apply_task(t, p)};
        splits[s]->push_back(std::move(r));
        ++made;
      }
    }
  }
  numerics::SplitMix64 shuffle_rng(numerics::derive_seed(seed, 77));
  shuffle_rng.shuffle(std::span<Record>(c.train));
  return c;
}

std::string to_jsonl(std::span<const Record> records) {
  std::string out;
  for (const Record& r : records) {
    out += nlohmann::json{{"task", r.task}, {"prompt", r.prompt}, {"answer", r.answer}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<Record> records_from_jsonl(const std::string& text) {
  std::vector<Record> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back(Record{j.value("task", std::string{}),
                           j.at("prompt").get<std::vector<TokenId>>(),
                           j.at("answer").get<std::vector<TokenId>>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_records(const std::filesystem::path& path, std::span<const Record> records) {
  model::write_file_bytes(path, to_jsonl(records));
}

std::vector<Record> load_records(const std::filesystem::path& path) {
  return records_from_jsonl(model::read_file_bytes(path));
}

void save_corpus(const std::filesystem::path& dir, const Corpus& c,
                 std::span<const TaskSpec> tasks) {
  std::filesystem::create_directories(dir);
  save_records(dir / "train.jsonl", c.train);
  save_records(dir / "customization.jsonl", c.customization);
  save_records(dir / "eval.jsonl", c.eval);
  save_records(dir / "calibration.jsonl", c.calibration);
  nlohmann::json j = nlohmann::json::array();
  for (const TaskSpec& t : tasks) j.push_back(to_json(t));
  model::write_file_bytes(dir / "tasks.json", j.dump(2) + "\n");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.train = load_records(dir / "train.jsonl");
  c.customization = load_records(dir / "customization.jsonl");
  c.eval = load_records(dir / "eval.jsonl");
  c.calibration = load_records(dir / "calibration.jsonl");
  return c;
}

std::vector<TaskSpec> load_tasks(const std::filesystem::path& dir) {
  std::vector<TaskSpec> out;
  try {
    for (const auto& j : nlohmann::json::parse(model::read_file_bytes(dir / "tasks.json"))) {
      out.push_back(task_from_json(j));
    }
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("tasks.json: ") + e.what());
  }
  return out;
}

std::vector<training::Example> strip_labels(std::span<const Record> records) {
  std::vector<training::Example> out;
  out.reserve(records.size());
  for (const Record& r : records) out.push_back(training::Example{r.prompt, r.answer});
  return out;
}

std::vector<std::string> task_labels(std::span<const Record> records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const Record& r : records) out.push_back(r.task);
  return out;
}

std::vector<Record> filter_task(std::span<const Record> records, const std::string& task) {
  std::vector<Record> out;
  for (const Record& r : records) {
    if (r.task == task) out.push_back(r);
  }
  return out;
}

}  // namespace crayon::harness
