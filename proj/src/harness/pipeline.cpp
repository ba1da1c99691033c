#include "crayon/harness/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "crayon/errors.hpp"
#include "crayon/numerics/rng.hpp"
#include "crayon/training/pretrain.hpp"

namespace crayon::harness {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

model::ModelConfig make_model(std::size_t d, std::size_t layers, std::size_t heads) {
  model::ModelConfig c;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_ff = 4 * d;
  c.max_seq = 24;
  return c;
}

}  // namespace

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.device = make_model(64, 2, 4);
  c.server = make_model(128, 4, 8);
  c.device_pretrain.max_iters = 500;
  c.device_pretrain.optimizer.lr = 3e-3;
  c.server_pretrain.max_iters = 1200;
  c.server_pretrain.optimizer.lr = 2e-3;
  c.pool.max_iters = 1500;
  c.pool.optimizer.lr = 2e-2;
  return c;
}

PipelineConfig PipelineConfig::smoke() {
  PipelineConfig c = defaults();
  c.device = make_model(16, 1, 2);
  c.server = make_model(16, 2, 2);
  c.counts = SplitCounts{60, 4, 12, 12};
  c.device_pretrain.max_iters = 15;
  c.device_pretrain.batch_size = 8;
  c.server_pretrain.max_iters = 20;
  c.server_pretrain.batch_size = 8;
  c.pool.n_bases = 3;
  c.pool.rank = 2;
  c.pool.pca_dim = 4;
  c.pool.max_iters = 20;
  c.pool.batch_size = 8;
  c.hybrid.set_size = 12;
  c.dc_sizes = {1, 4};
  c.ranks = {1, 2};
  return c;
}

void PipelineConfig::validate() const {
  device.validate();
  server.validate();
  pool.validate();
  if (!(window_prob >= 0.0 && window_prob <= 1.0)) throw RangeError("window_prob must lie in [0, 1]");
  if (!(hybrid.ratio > 0.0 && hybrid.ratio < 1.0)) throw RangeError("routing ratio must lie in (0, 1)");
  for (double r : hybrid.sweep_ratios) {
    if (!(r > 0.0 && r < 1.0)) throw RangeError("sweep ratios must lie in (0, 1)");
  }
  if (!(hybrid.matched_fraction >= 0.0 && hybrid.matched_fraction <= 1.0)) {
    throw RangeError("matched_fraction must lie in [0, 1]");
  }
  if (hybrid.set_size < 1) throw CountError("hybrid set_size must be >= 1");
  if (hybrid.set_size > std::min(counts.eval, counts.calibration)) {
    throw CountError("hybrid set_size exceeds the per-task eval or calibration split");
  }
  if (counts.customization < 1) throw CountError("customization split must be nonempty");
  for (std::size_t s : dc_sizes) {
    if (s < 1 || s > counts.customization) {
      throw CountError("dc size " + std::to_string(s) + " outside [1, customization count]");
    }
  }
  for (std::size_t r : ranks) {
    if (r < 1) throw CountError("sweep rank must be >= 1");
  }
  if (device.vocab_size != server.vocab_size) {
    throw DimensionError("device and server must share a vocabulary");
  }
}

PipelineConfig PipelineConfig::resolved() const {
  PipelineConfig c = *this;
  c.device.precision = precision;
  c.server.precision = precision;
  c.device_pretrain.seed = numerics::derive_seed(seed, 12);
  c.pool.seed = numerics::derive_seed(seed, 13);
  c.server_pretrain.seed = numerics::derive_seed(seed, 14);
  return c;
}

nlohmann::json to_json(const PipelineConfig& c) {
  return {{"seed", c.seed},
          {"precision", model::precision_name(c.precision)},
          {"deterministic", c.deterministic},
          {"window_prob", c.window_prob},
          {"counts", to_json(c.counts)},
          {"device", model::to_json(c.device)},
          {"server", model::to_json(c.server)},
          {"device_pretrain", training::to_json(c.device_pretrain)},
          {"server_pretrain", training::to_json(c.server_pretrain)},
          {"pool", training::to_json(c.pool)},
          {"hybrid",
           {{"ratio", c.hybrid.ratio},
            {"scorer", hybrid::scorer_name(c.hybrid.scorer)},
            {"set_size", c.hybrid.set_size},
            {"matched_fraction", c.hybrid.matched_fraction},
            {"sweep_ratios", c.hybrid.sweep_ratios}}},
          {"dc_sizes", c.dc_sizes},
          {"ranks", c.ranks}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c = PipelineConfig::defaults();
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("precision")) c.precision = model::parse_precision(j.at("precision"));
    c.deterministic = j.value("deterministic", c.deterministic);
    c.window_prob = j.value("window_prob", c.window_prob);
    if (j.contains("counts")) c.counts = split_counts_from_json(j.at("counts"));
    if (j.contains("device")) c.device = model::config_from_json(j.at("device"));
    if (j.contains("server")) c.server = model::config_from_json(j.at("server"));
    if (j.contains("device_pretrain")) {
      c.device_pretrain = training::pretrain_config_from_json(j.at("device_pretrain"));
    }
    if (j.contains("server_pretrain")) {
      c.server_pretrain = training::pretrain_config_from_json(j.at("server_pretrain"));
    }
    if (j.contains("pool")) c.pool = training::train_config_from_json(j.at("pool"));
    if (j.contains("hybrid")) {
      const auto& h = j.at("hybrid");
      c.hybrid.ratio = h.value("ratio", c.hybrid.ratio);
      if (h.contains("scorer")) c.hybrid.scorer = hybrid::parse_scorer(h.at("scorer"));
      c.hybrid.set_size = h.value("set_size", c.hybrid.set_size);
      c.hybrid.matched_fraction = h.value("matched_fraction", c.hybrid.matched_fraction);
      if (h.contains("sweep_ratios")) {
        c.hybrid.sweep_ratios = h.at("sweep_ratios").get<std::vector<double>>();
      }
    }
    if (j.contains("dc_sizes")) c.dc_sizes = j.at("dc_sizes").get<std::vector<std::size_t>>();
    if (j.contains("ranks")) c.ranks = j.at("ranks").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<Record> mixed_set(std::span<const Record> records, const std::string& task,
                              std::span<const std::string> tasks, std::size_t total,
                              double matched_fraction) {
  const auto matched = static_cast<std::size_t>(
      std::llround(matched_fraction * static_cast<double>(total)));
  std::vector<std::string> others;
  for (const auto& t : tasks) {
    if (t != task) others.push_back(t);
  }
  const std::size_t rest = total - matched;
  if (rest > 0 && others.empty()) throw CountError("mixed_set: no other tasks to mix in");
  std::vector<Record> out = filter_task(records, task);
  if (out.size() < matched) throw CountError("mixed_set: too few records of task '" + task + "'");
  out.resize(matched);
  for (std::size_t i = 0; i < others.size(); ++i) {
    const std::size_t want = rest / others.size() + (i < rest % others.size() ? 1 : 0);
    const auto pick = filter_task(records, others[i]);
    if (pick.size() < want) throw CountError("mixed_set: too few records of task '" + others[i] + "'");
    out.insert(out.end(), pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(want));
  }
  return out;
}

template <typename T>
Pipeline<T>::Pipeline(PipelineConfig cfg) : cfg_(cfg.resolved()) {
  cfg_.validate();
}

template <typename T>
const std::vector<TaskSpec>& Pipeline<T>::tasks() {
  if (!tasks_) tasks_ = default_tasks(cfg_.window_prob, numerics::derive_seed(cfg_.seed, 10));
  return *tasks_;
}

template <typename T>
std::vector<std::string> Pipeline<T>::task_names() {
  std::vector<std::string> names;
  for (const auto& t : tasks()) names.push_back(t.task_id);
  return names;
}

template <typename T>
const Corpus& Pipeline<T>::corpus() {
  if (!corpus_) {
    const auto t0 = std::chrono::steady_clock::now();
    corpus_ = gen_corpus(tasks(), cfg_.counts, numerics::derive_seed(cfg_.seed, 11));
    timings_["gen_corpus"] = seconds_since(t0);
  }
  return *corpus_;
}

template <typename T>
std::shared_ptr<const model::TransformerWeights<T>> Pipeline<T>::device() {
  if (!device_) {
    const auto examples = strip_labels(corpus().train);
    const auto t0 = std::chrono::steady_clock::now();
    auto r = training::pretrain<T>(cfg_.device, examples, cfg_.device_pretrain);
    timings_["device_pretrain"] = seconds_since(t0);
    device_ = std::make_shared<const model::TransformerWeights<T>>(std::move(r.weights));
  }
  return device_;
}

template <typename T>
const adapters::PoolBundle<T>& Pipeline<T>::pool() {
  if (!pool_) {
    const auto w = device();
    const auto examples = strip_labels(corpus().train);
    const auto t0 = std::chrono::steady_clock::now();
    const auto emb = training::extract_embeddings(*w, std::span<const training::Example>(examples),
                                                  cfg_.pool.embedding_sample_cap, cfg_.pool.seed);
    adapters::PoolBundle<T> b;
    b.indicators = training::build_indicators(emb, cfg_.pool);
    auto r = training::train_pool(*w, std::span<const training::Example>(examples), b.indicators,
                                  cfg_.pool);
    timings_["train_pool"] = seconds_since(t0);
    b.pool = std::move(r.pool);
    b.checksum = adapters::pool_checksum(b.pool, b.indicators);
    const auto labels = task_labels(corpus().train);
    training::attach_tasks(r.log, labels);
    pool_log_ = std::move(r.log);
    pool_ = std::move(b);
  }
  return *pool_;
}

template <typename T>
const training::TrainLog& Pipeline<T>::pool_log() {
  pool();
  if (!pool_log_) throw CountError("pool was loaded, not trained here: no training log");
  return *pool_log_;
}

template <typename T>
const model::TransformerWeights<T>& Pipeline<T>::server() {
  if (!server_) {
    const auto examples = strip_labels(corpus().train);
    const auto t0 = std::chrono::steady_clock::now();
    server_ = training::pretrain<T>(cfg_.server, examples, cfg_.server_pretrain).weights;
    timings_["server_pretrain"] = seconds_since(t0);
  }
  return *server_;
}

template <typename T>
const adapters::BaseAdapterPool<T>& Pipeline<T>::single_lora() {
  if (!single_) {
    const auto w = device();
    const auto examples = strip_labels(corpus().train);
    training::TrainConfig c = cfg_.pool;
    c.n_bases = 1;
    c.constant_alpha = true;
    const auto t0 = std::chrono::steady_clock::now();
    single_ = training::train_pool(*w, std::span<const training::Example>(examples),
                                   adapters::IndicatorSet{}, c)
                  .pool;
    timings_["train_single_lora"] = seconds_since(t0);
  }
  return *single_;
}

template <typename T>
void Pipeline<T>::set_data(std::vector<TaskSpec> tasks, Corpus corpus) {
  tasks_ = std::move(tasks);
  corpus_ = std::move(corpus);
}

template <typename T>
void Pipeline<T>::set_device(model::TransformerWeights<T> w) {
  device_ = std::make_shared<const model::TransformerWeights<T>>(std::move(w));
}

template <typename T>
void Pipeline<T>::set_pool(adapters::PoolBundle<T> bundle) {
  pool_ = std::move(bundle);
  pool_log_.reset();
}

template <typename T>
void Pipeline<T>::set_server(model::TransformerWeights<T> w) {
  server_ = std::move(w);
}

template class Pipeline<float>;
template class Pipeline<double>;

}  // namespace crayon::harness
