#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crayon/model/config.hpp"
#include "crayon/numerics/rng.hpp"
#include "crayon/training/pool_training.hpp"

namespace crayon::harness {

using model::TokenId;

enum class Generator : std::uint8_t { copy, reverse, sort_asc, sort_desc, shift, cipher };

std::string generator_name(Generator g);
Generator parse_generator(const std::string& s);

// Prompt symbols are drawn from [window_start, window_start + window_size)
// with probability window_prob, otherwise uniformly from the alphabet. The
// answer is a pure function of the prompt.
struct TaskSpec {
  std::string task_id;
  Generator generator = Generator::copy;
  std::size_t alphabet_size = 26;
  std::size_t min_len = 4;
  std::size_t max_len = 8;
  std::size_t window_start = 0;
  std::size_t window_size = 26;
  double window_prob = 0.0;
  std::size_t shift = 3;  // shift generator only
  std::uint64_t seed = 0;  // cipher table seed

  void validate() const;
};

nlohmann::json to_json(const TaskSpec& t);
TaskSpec task_from_json(const nlohmann::json& j);

// The generator applied to a prompt.
std::vector<TokenId> apply_task(const TaskSpec& t, std::span<const TokenId> prompt);

// Substitution table of the cipher generator (a seeded permutation).
std::vector<TokenId> cipher_table(const TaskSpec& t);

std::vector<TokenId> sample_prompt(const TaskSpec& t, numerics::SplitMix64& rng);

// Six tasks, one per generator, each preferring its own 4-symbol window.
std::vector<TaskSpec> default_tasks(double window_prob, std::uint64_t seed);

struct Record {
  std::string task;  // evaluation metadata
  std::vector<TokenId> prompt;
  std::vector<TokenId> answer;
};

struct SplitCounts {
  std::size_t train = 3000;
  std::size_t customization = 10;
  std::size_t eval = 200;
  std::size_t calibration = 200;
};

nlohmann::json to_json(const SplitCounts& c);
SplitCounts split_counts_from_json(const nlohmann::json& j);

// Every split is a list of records; per-task counts are exact. No
// (task, prompt) pair appears twice across all splits.
struct Corpus {
  std::vector<Record> train;  // tasks interleaved by a seeded shuffle
  std::vector<Record> customization;
  std::vector<Record> eval;
  std::vector<Record> calibration;
};

Corpus gen_corpus(std::span<const TaskSpec> tasks, const SplitCounts& counts, std::uint64_t seed);

// JSON-lines with fields {task, prompt, answer}.
std::string to_jsonl(std::span<const Record> records);
std::vector<Record> records_from_jsonl(const std::string& text);
void save_records(const std::filesystem::path& path, std::span<const Record> records);
std::vector<Record> load_records(const std::filesystem::path& path);

// Writes train/customization/eval/calibration .jsonl plus tasks.json.
void save_corpus(const std::filesystem::path& dir, const Corpus& c,
                 std::span<const TaskSpec> tasks);
Corpus load_corpus(const std::filesystem::path& dir);
std::vector<TaskSpec> load_tasks(const std::filesystem::path& dir);

// Drops the task label.
std::vector<training::Example> strip_labels(std::span<const Record> records);
std::vector<std::string> task_labels(std::span<const Record> records);
std::vector<Record> filter_task(std::span<const Record> records, const std::string& task);

}  // namespace crayon::harness
