// Command-line front end for the benchmark pipeline.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "crayon/adapters/pool_io.hpp"
#include "crayon/customization/endpoints.hpp"
#include "crayon/errors.hpp"
#include "crayon/harness/evaluate.hpp"
#include "crayon/harness/experiments.hpp"
#include "crayon/harness/pipeline.hpp"
#include "crayon/model/tensor_file.hpp"
#include "crayon/training/pretrain.hpp"

namespace fs = std::filesystem;
using namespace crayon;

namespace {

struct Global {
  std::uint64_t seed = 7;
  bool seed_set = false;
  std::string precision = "f32";
  bool deterministic = false;
  std::string config;
  bool smoke = false;
};

harness::PipelineConfig load_config(const Global& g) {
  harness::PipelineConfig c =
      g.smoke ? harness::PipelineConfig::smoke() : harness::PipelineConfig::defaults();
  if (!g.config.empty()) {
    c = harness::pipeline_config_from_json(nlohmann::json::parse(model::read_file_bytes(g.config)));
  }
  if (g.seed_set) c.seed = g.seed;
  c.precision = model::parse_precision(g.precision);
  c.deterministic = c.deterministic || g.deterministic;
  c.validate();
  return c;
}

void print_json(const nlohmann::json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    model::write_file_bytes(out, text);
  }
}

std::vector<harness::Record> load_split(const std::string& data, const std::string& split) {
  return harness::load_records(fs::path(data) / (split + ".jsonl"));
}

std::vector<std::string> names_of(const std::vector<harness::TaskSpec>& tasks) {
  std::vector<std::string> n;
  for (const auto& t : tasks) n.push_back(t.task_id);
  return n;
}

template <typename T>
harness::Pipeline<T> pipeline_from(const Global& g, const std::string& data,
                                   const std::string& device, const std::string& pool,
                                   const std::string& server) {
  harness::Pipeline<T> p(load_config(g));
  if (!data.empty()) p.set_data(harness::load_tasks(data), harness::load_corpus(data));
  if (!device.empty()) p.set_device(model::load_weights<T>(device));
  if (!pool.empty()) p.set_pool(adapters::load_pool<T>(pool));
  if (!server.empty()) p.set_server(model::load_weights<T>(server));
  return p;
}

struct PathArgs {
  std::string data, device, pool, server, out, task, package, eval, calibration, scores, log;
  std::string role = "device", scorer = "prototype", split = "eval", name;
  double ratio = 0.2;
  std::uint64_t client_id = 1000;
  bool with_sweeps = false, save_artifacts = false;
};

template <typename T>
int pretrain_base(const Global& g, const PathArgs& a) {
  const auto cfg = load_config(g).resolved();
  const auto train = harness::strip_labels(load_split(a.data, "train"));
  const bool server = a.role == "server";
  const auto result = training::pretrain<T>(server ? cfg.server : cfg.device, train,
                                            server ? cfg.server_pretrain : cfg.device_pretrain);
  model::save_weights(a.out, result.weights);
  std::cerr << "final loss " << result.loss.back() << "\n";
  return 0;
}

template <typename T>
int train_pool(const Global& g, const PathArgs& a) {
  auto p = pipeline_from<T>(g, a.data, a.device, "", "");
  const auto& b = p.pool();
  adapters::save_pool(a.out, b.pool, b.indicators);
  if (!a.log.empty()) model::write_file_bytes(a.log, p.pool_log().to_jsonl());
  std::cerr << "pool checksum " << model::hex64(b.checksum) << "\n";
  return 0;
}

template <typename T>
int customize(const Global& g, const PathArgs& a) {
  const auto cfg = load_config(g);
  const auto tasks = harness::load_tasks(a.data);
  const auto corpus = harness::load_corpus(a.data);
  const auto names = names_of(tasks);
  customization::BlendServer<T> blend_server(adapters::load_pool<T>(a.pool));
  auto device = std::make_shared<const model::TransformerWeights<T>>(model::load_weights<T>(a.device));
  const auto server_w = model::load_weights<T>(a.server);
  const model::ModelView<T> server{&server_w, nullptr};
  customization::DeviceRuntime<T> runtime(device, blend_server.provision(a.client_id), a.client_id,
                                          cfg.pool.normalize_alpha);
  const auto dc = harness::task_dc(corpus.customization, a.task);
  const auto calib = harness::mixed_set(corpus.calibration, a.task, names, cfg.hybrid.set_size,
                                        cfg.hybrid.matched_fraction);
  const auto dep = harness::deploy_user(blend_server, runtime, server, dc, calib, a.ratio,
                                        hybrid::parse_scorer(a.scorer));
  model::write_file_bytes(a.out, dep.package_bytes);
  print_json({{"task", a.task},
              {"request_bytes", dep.request_bytes.size()},
              {"alphas", dep.request.alphas},
              {"threshold", dep.calibration.threshold},
              {"k", dep.calibration.k},
              {"ties", dep.calibration.ties},
              {"package", a.out}},
             "");
  return 0;
}

template <typename T>
int eval(const Global&, const PathArgs& a) {
  const auto w = model::load_weights<T>(a.device);
  const auto records = load_split(a.data, a.split);
  std::optional<customization::DeploymentPackage<T>> pkg;
  if (!a.package.empty()) {
    pkg = customization::parse_package<T>(model::read_file_bytes(a.package));
    customization::check_package(*pkg, w.config);
  }
  const model::ModelView<T> view{&w, pkg ? &pkg->adapter.delta : nullptr};
  nlohmann::json per_task = nlohmann::json::object();
  for (const auto& t : names_of(harness::load_tasks(a.data))) {
    per_task[t] = harness::evaluate(view, records, t);
  }
  print_json({{"split", a.split},
              {"customized", pkg.has_value()},
              {"per_task", per_task},
              {"mean", harness::evaluate(view, records)}},
             a.out);
  return 0;
}

template <typename T>
int cross_matrix(const Global& g, const PathArgs& a) {
  auto p = pipeline_from<T>(g, a.data, a.device, a.pool, "");
  const auto r = harness::run_experiment("diagonal-dominance", p);
  if (!a.out.empty()) {
    harness::write_experiment(a.out, r);
  } else {
    print_json(r.report, "");
  }
  return 0;
}

std::vector<double> read_scores(const std::string& path) {
  const std::string text = model::read_file_bytes(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    return nlohmann::json::parse(text).get<std::vector<double>>();
  }
  std::vector<double> v;
  std::istringstream is(text);
  double x;
  while (is >> x) v.push_back(x);
  if (!is.eof()) throw FormatError("scores file holds a non-numeric entry");
  return v;
}

int calibrate(const PathArgs& a) {
  const auto scores = read_scores(a.scores);
  const auto c = hybrid::calibrate_threshold(scores, a.ratio);
  print_json({{"threshold", c.threshold},
              {"k", c.k},
              {"routed", c.routed},
              {"ties", c.ties},
              {"m", scores.size()},
              {"routed_fraction", static_cast<double>(c.routed) / static_cast<double>(scores.size())}},
             a.out);
  return 0;
}

template <typename T>
int hybrid_eval(const Global&, const PathArgs& a) {
  const auto device = model::load_weights<T>(a.device);
  const auto server_w = model::load_weights<T>(a.server);
  auto pkg = customization::parse_package<T>(model::read_file_bytes(a.package));
  customization::check_package(pkg, device.config);
  const model::ModelView<T> view{&device, &pkg.adapter.delta};
  const model::ModelView<T> server{&server_w, nullptr};
  hybrid::RoutingConfig rc = pkg.routing;
  const auto scorer = hybrid::parse_scorer(a.scorer);
  if (scorer != rc.scorer || a.ratio != rc.target_ratio) {
    if (a.calibration.empty()) {
      throw RangeError("scorer or ratio differs from the package; pass --calibration to recalibrate");
    }
    std::vector<double> scores;
    for (const auto& r : harness::load_records(a.calibration)) {
      const auto d = model::answer_query(view, std::span<const model::TokenId>(r.prompt));
      scores.push_back(hybrid::score_decode(d, pkg.prototypes, scorer));
    }
    rc = {hybrid::calibrate_threshold(scores, a.ratio).threshold, a.ratio, scorer};
  }
  const auto records = harness::load_records(a.eval);
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_task;
  std::size_t routed = 0, correct = 0;
  std::vector<double> scores;
  for (const auto& r : records) {
    const auto ans = hybrid::hybrid_answer(view, &server, std::span<const model::TokenId>(r.prompt),
                                           pkg.prototypes, rc);
    const bool ok = harness::exact_match(ans.tokens, r.answer);
    routed += ans.decision == hybrid::Decision::routed ? 1 : 0;
    correct += ok ? 1 : 0;
    per_task[r.task].first += ok ? 1 : 0;
    per_task[r.task].second += 1;
    scores.push_back(ans.score);
  }
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [t, c] : per_task) {
    acc[t] = static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  const double n = static_cast<double>(records.size());
  print_json({{"scorer", hybrid::scorer_name(rc.scorer)},
              {"ratio", rc.target_ratio},
              {"threshold", rc.threshold},
              {"per_task", acc},
              {"accuracy", static_cast<double>(correct) / n},
              {"routed_fraction", static_cast<double>(routed) / n},
              {"score_histogram", harness::histogram(scores)}},
             a.out);
  return 0;
}

template <typename T>
int experiment(const Global& g, const PathArgs& a) {
  auto p = pipeline_from<T>(g, a.data, a.device, a.pool, a.server);
  const fs::path out = a.out.empty() ? fs::path("results") : fs::path(a.out);
  if (a.name == "all") {
    const auto run = harness::run_benchmark(p, a.with_sweeps);
    for (const auto& r : run.experiments) harness::write_experiment(out, r);
    model::write_file_bytes(out / "report.json", run.report.dump(2) + "\n");
  } else {
    harness::write_experiment(out, harness::run_experiment(a.name, p));
  }
  if (a.save_artifacts) {
    harness::save_corpus(out / "data", p.corpus(), p.tasks());
    model::save_weights(out / "device.crw", *p.device());
    adapters::save_pool(out / "pool.crp", p.pool().pool, p.pool().indicators);
    model::save_weights(out / "server.crw", p.server());
  }
  nlohmann::json t = p.timings();
  model::write_file_bytes(out / "timings.json", t.dump(2) + "\n");
  std::cerr << "results in " << out << "\n";
  return 0;
}

template <typename F>
int dispatch(const Global& g, F&& f) {
  if (model::parse_precision(g.precision) == model::Precision::f64) return f(double{});
  return f(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crayon: blended low-rank adapters and device/server routing"};
  app.require_subcommand(1);
  Global g;
  PathArgs a;
  app.add_option_function<std::uint64_t>(
         "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "global seed")
      ->trigger_on_parse();
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("--deterministic", g.deterministic, "fixed evaluation order (always single-threaded)");
  app.add_option("--config", g.config, "pipeline config JSON");
  app.add_flag("--smoke", g.smoke, "seconds-scale config");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  gen->add_option("--out", a.out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain-base", "train a base model on the training split");
  pre->add_option("--data", a.data)->required();
  pre->add_option("--role", a.role)->check(CLI::IsMember({"device", "server"}));
  pre->add_option("--out", a.out)->required();

  auto* tp = app.add_subcommand("train-pool", "fit indicators and train the base adapters");
  tp->add_option("--data", a.data)->required();
  tp->add_option("--device", a.device)->required();
  tp->add_option("--out", a.out)->required();
  tp->add_option("--log", a.log, "training log (JSON lines)");

  auto* cu = app.add_subcommand("customize", "run the request / blend / deploy round trip");
  cu->add_option("--data", a.data)->required();
  cu->add_option("--device", a.device)->required();
  cu->add_option("--pool", a.pool)->required();
  cu->add_option("--server", a.server)->required();
  cu->add_option("--task", a.task, "task whose customization split is D_c")->required();
  cu->add_option("--client-id", a.client_id);
  cu->add_option("--ratio", a.ratio);
  cu->add_option("--scorer", a.scorer)->check(CLI::IsMember({"prototype", "max-softmax"}));
  cu->add_option("--out", a.out, "package file")->required();

  auto* ev = app.add_subcommand("eval", "exact-match accuracy per task");
  ev->add_option("--data", a.data)->required();
  ev->add_option("--device", a.device)->required();
  ev->add_option("--package", a.package, "apply a deployment package");
  ev->add_option("--split", a.split)->check(CLI::IsMember({"train", "customization", "eval", "calibration"}));
  ev->add_option("--out", a.out);

  auto* cm = app.add_subcommand("cross-matrix", "customized-on x evaluated-on accuracy");
  cm->add_option("--data", a.data)->required();
  cm->add_option("--device", a.device)->required();
  cm->add_option("--pool", a.pool)->required();
  cm->add_option("--out", a.out, "output directory");

  auto* ca = app.add_subcommand("calibrate", "routing threshold from a score list");
  ca->add_option("--scores", a.scores)->required();
  ca->add_option("--ratio", a.ratio);
  ca->add_option("--out", a.out);

  auto* he = app.add_subcommand("hybrid-eval", "device-first answering with server fallback");
  he->add_option("--device-pkg", a.package)->required();
  he->add_option("--device", a.device)->required();
  he->add_option("--server", a.server)->required();
  he->add_option("--eval", a.eval)->required();
  he->add_option("--calibration", a.calibration, "records for recalibration");
  he->add_option("--scorer", a.scorer)->check(CLI::IsMember({"prototype", "max-softmax"}));
  he->add_option("--ratio", a.ratio);
  he->add_option("--out", a.out);

  auto* ex = app.add_subcommand("experiment", "run a named experiment, or all of them");
  std::vector<std::string> choices = harness::experiment_names();
  choices.push_back("all");
  ex->add_option("name", a.name)->required()->check(CLI::IsMember(choices));
  ex->add_option("--out", a.out, "output directory");
  ex->add_option("--data", a.data, "reuse a corpus directory");
  ex->add_option("--device", a.device, "reuse device weights");
  ex->add_option("--pool", a.pool, "reuse a pool file");
  ex->add_option("--server", a.server, "reuse server weights");
  ex->add_flag("--with-sweeps", a.with_sweeps, "include dc-size and rank sweeps in 'all'");
  ex->add_flag("--save-artifacts", a.save_artifacts, "write corpus, weights and pool");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      harness::Pipeline<float> p(load_config(g));
      harness::save_corpus(a.out, p.corpus(), p.tasks());
      return 0;
    }
    if (*ca) return calibrate(a);
    return dispatch(g, [&](auto tag) -> int {
      using T = decltype(tag);
      if (*pre) return pretrain_base<T>(g, a);
      if (*tp) return train_pool<T>(g, a);
      if (*cu) return customize<T>(g, a);
      if (*ev) return eval<T>(g, a);
      if (*cm) return cross_matrix<T>(g, a);
      if (*he) return hybrid_eval<T>(g, a);
      return experiment<T>(g, a);
    });
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
