#include "crayon/harness/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "crayon/customization/endpoints.hpp"
#include "crayon/errors.hpp"
#include "crayon/harness/evaluate.hpp"
#include "crayon/model/tensor_file.hpp"

namespace crayon::harness {

namespace {

using Scorer = hybrid::Scorer;

std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double fraction(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

template <typename T>
std::vector<customization::CustomizationSet> all_dcs(Pipeline<T>& p, std::size_t limit) {
  std::vector<customization::CustomizationSet> dcs;
  for (const auto& t : p.task_names()) dcs.push_back(task_dc(p.corpus().customization, t, limit));
  return dcs;
}

template <typename T>
ExperimentResult diagonal_dominance(Pipeline<T>& p) {
  const CrossTaskMatrix m = pipeline_cross_matrix(p);
  return {"diagonal-dominance", m.to_json(), {{"diagonal-dominance.csv", m.to_csv()}}};
}

std::string alpha_csv(const training::AlphaDiversityReport& r) {
  std::string out = "task,adapter,mean,std\n";
  for (const auto& [task, s] : r.tasks) {
    for (std::size_t n = 0; n < s.mean.size(); ++n) {
      out += task + "," + std::to_string(n) + "," + csv_number(s.mean[n]) + "," +
             csv_number(s.std[n]) + "\n";
    }
  }
  return out;
}

template <typename T>
ExperimentResult alpha_diversity(Pipeline<T>& p) {
  const auto records = alpha_records(*p.device(), p.pool().indicators, p.corpus().train,
                                     p.config().pool);
  const auto r = training::alpha_diversity_report(records);
  nlohmann::json j = r.to_json();
  j["pairs_with_gap_0.05"] = r.pairs_with_gap(0.05);
  return {"alpha-diversity", j, {{"alpha-diversity.csv", alpha_csv(r)}}};
}

template <typename T>
ExperimentResult pca_ablation(Pipeline<T>& p) {
  const auto w = p.device();
  const auto examples = strip_labels(p.corpus().train);
  const auto& cfg = p.config().pool;
  const auto emb = training::extract_embeddings(*w, std::span<const training::Example>(examples),
                                                cfg.embedding_sample_cap, cfg.seed);
  training::TrainConfig on = cfg, off = cfg;
  on.use_pca = true;
  off.use_pca = false;
  const auto ind_on = training::build_indicators(emb, on);
  const auto ind_off = training::build_indicators(emb, off);
  const auto r_on = training::alpha_diversity_report(alpha_records(*w, ind_on, p.corpus().train, on));
  const auto r_off =
      training::alpha_diversity_report(alpha_records(*w, ind_off, p.corpus().train, off));
  nlohmann::json j = {{"pca", r_on.to_json()},
                      {"identity", r_off.to_json()},
                      {"mean_std_pca", r_on.mean_overall_std},
                      {"mean_std_identity", r_off.mean_overall_std},
                      {"ratio", r_off.mean_overall_std > 0.0
                                    ? r_on.mean_overall_std / r_off.mean_overall_std
                                    : 0.0},
                      {"identity_smaller", r_off.mean_overall_std < r_on.mean_overall_std}};
  std::string csv = "adapter,std_pca,std_identity\n";
  for (std::size_t n = 0; n < r_on.overall_std.size(); ++n) {
    csv += std::to_string(n) + "," + csv_number(r_on.overall_std[n]) + "," +
           csv_number(r_off.overall_std[n]) + "\n";
  }
  return {"pca-ablation", j, {{"pca-ablation.csv", csv}}};
}

struct RowSpec {
  Scorer scorer;
  double ratio;
};

struct RowTally {
  std::size_t cal_routed = 0, cal_total = 0;
  std::size_t eval_routed = 0, eval_total = 0, eval_correct = 0;
};

template <typename T>
ExperimentResult routing_sweep(Pipeline<T>& p) {
  const auto& cfg = p.config();
  const auto names = p.task_names();
  const auto& corpus = p.corpus();
  const auto device = p.device();
  const auto& server_w = p.server();
  const model::ModelView<T> server{&server_w, nullptr};
  customization::BlendServer<T> blend_server(p.pool());

  std::vector<RowSpec> rows;
  for (Scorer s : {Scorer::prototype, Scorer::max_softmax}) {
    for (double r : cfg.hybrid.sweep_ratios) rows.push_back({s, r});
  }
  std::vector<RowTally> tally(rows.size());
  RowTally deployed;  // the package's own routing through DeviceRuntime::hybrid
  std::size_t device_correct = 0, server_correct = 0, eval_total = 0;
  std::vector<double> eval_scores[2];
  nlohmann::json users = nlohmann::json::array();
  ExperimentResult out{"routing-sweep", {}, {}};

  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& task = names[k];
    const std::uint64_t client = 1000 + k;
    customization::DeviceRuntime<T> runtime(device, blend_server.provision(client), client,
                                            cfg.pool.normalize_alpha);
    const auto dc = task_dc(corpus.customization, task);
    const auto calib = mixed_set(corpus.calibration, task, names, cfg.hybrid.set_size,
                                 cfg.hybrid.matched_fraction);
    const UserDeployment dep = deploy_user(blend_server, runtime, server, dc, calib,
                                           cfg.hybrid.ratio, cfg.hybrid.scorer);
    const auto& req = dep.request;
    const auto& protos = dep.prototypes;
    const auto& main_cal = dep.calibration;
    std::vector<hybrid::Calibration> cals;
    for (const auto& row : rows) {
      cals.push_back(hybrid::calibrate_threshold(
          row.scorer == Scorer::prototype ? dep.prototype_scores : dep.max_softmax_scores,
          row.ratio));
    }
    out.files.emplace_back("package_" + task + ".pkg", dep.package_bytes);
    const auto state = runtime.snapshot();
    const auto view = runtime.view(state.get());

    // Deployed routing on the calibration mix itself.
    std::size_t deployed_cal_routed = 0;
    for (const auto& r : calib) {
      const auto a = runtime.hybrid(std::span<const TokenId>(r.prompt), &server);
      deployed_cal_routed += a.decision == hybrid::Decision::routed ? 1 : 0;
    }
    deployed.cal_routed += deployed_cal_routed;
    deployed.cal_total += calib.size();

    const auto eval = mixed_set(corpus.eval, task, names, cfg.hybrid.set_size,
                                cfg.hybrid.matched_fraction);
    std::size_t user_device = 0, user_server = 0, user_routed = 0, user_hybrid = 0;
    for (const auto& r : eval) {
      const std::span<const TokenId> prompt(r.prompt);
      const auto local = model::answer_query(view, prompt);
      user_device += exact_match(local.tokens, r.answer) ? 1 : 0;
      user_server += exact_match(model::answer_query(server, prompt).tokens, r.answer) ? 1 : 0;
      eval_scores[0].push_back(hybrid::score_decode(local, protos, Scorer::prototype));
      eval_scores[1].push_back(hybrid::score_decode(local, protos, Scorer::max_softmax));
      const auto a = runtime.hybrid(prompt, &server);
      user_routed += a.decision == hybrid::Decision::routed ? 1 : 0;
      user_hybrid += exact_match(a.tokens, r.answer) ? 1 : 0;
    }
    deployed.eval_routed += user_routed;
    deployed.eval_correct += user_hybrid;
    deployed.eval_total += eval.size();
    device_correct += user_device;
    server_correct += user_server;
    eval_total += eval.size();

    nlohmann::json user_rows = nlohmann::json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const hybrid::RoutingConfig rc{cals[i].threshold, rows[i].ratio, rows[i].scorer};
      std::size_t cal_routed = 0, routed = 0, correct = 0;
      for (const auto& r : calib) {
        const auto a = hybrid::hybrid_answer(view, &server, std::span<const TokenId>(r.prompt),
                                             state->prototypes, rc);
        cal_routed += a.decision == hybrid::Decision::routed ? 1 : 0;
      }
      for (const auto& r : eval) {
        const auto a = hybrid::hybrid_answer(view, &server, std::span<const TokenId>(r.prompt),
                                             state->prototypes, rc);
        routed += a.decision == hybrid::Decision::routed ? 1 : 0;
        correct += exact_match(a.tokens, r.answer) ? 1 : 0;
      }
      tally[i].cal_routed += cal_routed;
      tally[i].cal_total += calib.size();
      tally[i].eval_routed += routed;
      tally[i].eval_correct += correct;
      tally[i].eval_total += eval.size();
      user_rows.push_back({{"scorer", hybrid::scorer_name(rows[i].scorer)},
                           {"ratio", rows[i].ratio},
                           {"threshold", cals[i].threshold},
                           {"k", cals[i].k},
                           {"ties", cals[i].ties},
                           {"calibration_fraction", fraction(cal_routed, calib.size())},
                           {"eval_fraction", fraction(routed, eval.size())},
                           {"accuracy", fraction(correct, eval.size())}});
    }
    users.push_back({{"task", task},
                     {"client_id", client},
                     {"alphas", req.alphas},
                     {"prototypes", protos.size()},
                     {"calibration_size", calib.size()},
                     {"eval_size", eval.size()},
                     {"threshold", main_cal.threshold},
                     {"k", main_cal.k},
                     {"ties", main_cal.ties},
                     {"calibration_fraction", fraction(deployed_cal_routed, calib.size())},
                     {"expected_calibration_fraction", fraction(main_cal.k, calib.size())},
                     {"eval_fraction", fraction(user_routed, eval.size())},
                     {"device_accuracy", fraction(user_device, eval.size())},
                     {"server_accuracy", fraction(user_server, eval.size())},
                     {"hybrid_accuracy", fraction(user_hybrid, eval.size())},
                     {"rows", user_rows}});
  }

  nlohmann::json agg = nlohmann::json::array();
  std::string csv =
      "scorer,ratio,accuracy,eval_routed_fraction,calibration_routed_fraction,device_accuracy,"
      "server_accuracy\n";
  const double dev_acc = fraction(device_correct, eval_total);
  const double srv_acc = fraction(server_correct, eval_total);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& t = tally[i];
    agg.push_back({{"scorer", hybrid::scorer_name(rows[i].scorer)},
                   {"ratio", rows[i].ratio},
                   {"accuracy", fraction(t.eval_correct, t.eval_total)},
                   {"eval_fraction", fraction(t.eval_routed, t.eval_total)},
                   {"calibration_fraction", fraction(t.cal_routed, t.cal_total)}});
    csv += hybrid::scorer_name(rows[i].scorer) + "," + csv_number(rows[i].ratio) + "," +
           csv_number(fraction(t.eval_correct, t.eval_total)) + "," +
           csv_number(fraction(t.eval_routed, t.eval_total)) + "," +
           csv_number(fraction(t.cal_routed, t.cal_total)) + "," + csv_number(dev_acc) + "," +
           csv_number(srv_acc) + "\n";
  }
  std::string hist_csv = "bin_low,bin_high,prototype,max_softmax\n";
  const auto h0 = histogram(eval_scores[0]);
  const auto h1 = histogram(eval_scores[1]);
  for (std::size_t b = 0; b < h0.size(); ++b) {
    hist_csv += csv_number(static_cast<double>(b) / 20.0) + "," +
                csv_number(static_cast<double>(b + 1) / 20.0) + "," + std::to_string(h0[b]) + "," +
                std::to_string(h1[b]) + "\n";
  }
  out.report = {{"scorer", hybrid::scorer_name(cfg.hybrid.scorer)},
                {"ratio", cfg.hybrid.ratio},
                {"device_accuracy", dev_acc},
                {"server_accuracy", srv_acc},
                {"hybrid_accuracy", fraction(deployed.eval_correct, deployed.eval_total)},
                {"eval_fraction", fraction(deployed.eval_routed, deployed.eval_total)},
                {"calibration_fraction", fraction(deployed.cal_routed, deployed.cal_total)},
                {"rows", agg},
                {"users", users},
                {"score_histogram", {{"prototype", h0}, {"max-softmax", h1}}}};
  out.files.emplace(out.files.begin(), "routing-sweep.csv", csv);
  out.files.emplace(out.files.begin() + 1, "score-histogram.csv", hist_csv);
  return out;
}

template <typename T>
ExperimentResult dc_size_sweep(Pipeline<T>& p) {
  nlohmann::json rows = nlohmann::json::array();
  std::string csv = "dc_size,diag_mean,off_diag_mean,dominant_rows\n";
  for (std::size_t s : p.config().dc_sizes) {
    const CrossTaskMatrix m = pipeline_cross_matrix(p, s);
    rows.push_back({{"dc_size", s}, {"matrix", m.to_json()}});
    csv += std::to_string(s) + "," + csv_number(m.diag_mean()) + "," + csv_number(m.off_mean()) +
           "," + std::to_string(m.dominant_rows()) + "\n";
  }
  return {"dc-size-sweep", {{"rows", rows}}, {{"dc-size-sweep.csv", csv}}};
}

template <typename T>
ExperimentResult rank_sweep(Pipeline<T>& p) {
  const auto w = p.device();
  const auto examples = strip_labels(p.corpus().train);
  const auto names = p.task_names();
  const auto dcs = all_dcs(p, 0);
  nlohmann::json rows = nlohmann::json::array();
  std::string csv = "rank,diag_mean,off_diag_mean,dominant_rows,final_loss\n";
  for (std::size_t r : p.config().ranks) {
    training::TrainConfig c = p.config().pool;
    c.rank = r;
    adapters::PoolBundle<T> b;
    b.indicators = p.pool().indicators;
    auto trained = training::train_pool(*w, std::span<const training::Example>(examples),
                                        b.indicators, c);
    b.pool = std::move(trained.pool);
    b.checksum = adapters::pool_checksum(b.pool, b.indicators);
    const CrossTaskMatrix m = cross_task_matrix(*w, b, std::span<const std::string>(names),
                                                std::span<const customization::CustomizationSet>(dcs),
                                                p.corpus().eval, c.normalize_alpha);
    const double loss = trained.log.loss.empty() ? 0.0 : trained.log.loss.back();
    rows.push_back({{"rank", r}, {"final_loss", loss}, {"matrix", m.to_json()}});
    csv += std::to_string(r) + "," + csv_number(m.diag_mean()) + "," + csv_number(m.off_mean()) +
           "," + std::to_string(m.dominant_rows()) + "," + csv_number(loss) + "\n";
  }
  return {"rank-sweep", {{"rows", rows}}, {{"rank-sweep.csv", csv}}};
}

template <typename T>
ExperimentResult single_lora_baseline(Pipeline<T>& p) {
  const auto w = p.device();
  const auto delta = adapters::combine_pool(p.single_lora(), adapters::constant_weights(1));
  const model::ModelView<T> single{w.get(), &delta};
  const model::ModelView<T> base{w.get(), nullptr};
  const CrossTaskMatrix m = pipeline_cross_matrix(p);
  const auto names = p.task_names();
  nlohmann::json per_task = nlohmann::json::object();
  std::string csv = "task,base,single_lora,customized\n";
  double single_mean = 0.0, base_mean = 0.0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double a = evaluate(single, p.corpus().eval, names[i]);
    const double b = evaluate(base, p.corpus().eval, names[i]);
    single_mean += a / static_cast<double>(names.size());
    base_mean += b / static_cast<double>(names.size());
    per_task[names[i]] = {{"base", b}, {"single_lora", a}, {"customized", m.acc[i][i]}};
    csv += names[i] + "," + csv_number(b) + "," + csv_number(a) + "," + csv_number(m.acc[i][i]) +
           "\n";
  }
  nlohmann::json j = {{"per_task", per_task},
                      {"base_mean", base_mean},
                      {"single_lora_mean", single_mean},
                      {"customized_mean", m.diag_mean()},
                      {"improvement", m.diag_mean() - single_mean}};
  return {"single-lora-baseline", j, {{"single-lora-baseline.csv", csv}}};
}

}  // namespace

template <typename T>
UserDeployment deploy_user(customization::BlendServer<T>& blend_server,
                           customization::DeviceRuntime<T>& runtime,
                           const model::ModelView<T>& server,
                           const customization::CustomizationSet& dc,
                           std::span<const Record> calibration, double ratio,
                           hybrid::Scorer scorer) {
  UserDeployment dep;
  dep.request_bytes = runtime.customization_request(dc);
  dep.request = customization::parse_request(dep.request_bytes);
  const auto adapter = customization::blend_request(blend_server.bundle(), dep.request,
                                                    blend_server.bundle().checksum);
  const model::ModelView<T> custom{&runtime.base(), &adapter.delta};
  std::vector<std::vector<TokenId>> prompts;
  for (const auto& e : dc.examples) prompts.push_back(e.prompt);
  dep.prototypes =
      hybrid::build_prototypes(server, std::span<const std::vector<TokenId>>(prompts));
  for (const auto& r : calibration) {
    const auto d = model::answer_query(custom, std::span<const TokenId>(r.prompt));
    dep.prototype_scores.push_back(hybrid::score_decode(d, dep.prototypes, Scorer::prototype));
    dep.max_softmax_scores.push_back(hybrid::score_decode(d, dep.prototypes, Scorer::max_softmax));
  }
  dep.calibration = hybrid::calibrate_threshold(
      scorer == Scorer::prototype ? dep.prototype_scores : dep.max_softmax_scores, ratio);
  blend_server.set_prototypes(
      runtime.client_id(),
      customization::PrototypeSource{dep.prototypes,
                                     hybrid::RoutingConfig{dep.calibration.threshold, ratio, scorer}});
  dep.package_bytes = blend_server.handle(dep.request_bytes);
  runtime.apply_package_bytes(dep.package_bytes);
  return dep;
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"diagonal-dominance", "alpha-diversity",
                                              "pca-ablation",       "routing-sweep",
                                              "dc-size-sweep",      "rank-sweep",
                                              "single-lora-baseline"};
  return names;
}

std::vector<std::size_t> histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw CountError("histogram needs at least one bin");
  std::vector<std::size_t> h(bins, 0);
  for (double v : values) {
    const double pos = std::floor(v * static_cast<double>(bins));
    const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
    ++h[b];
  }
  return h;
}

template <typename T>
std::vector<training::AlphaRecord> alpha_records(const model::TransformerWeights<T>& w,
                                                 const adapters::IndicatorSet& ind,
                                                 std::span<const Record> records,
                                                 const training::TrainConfig& cfg) {
  std::vector<training::AlphaRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto bw =
        training::example_weights(w, ind, std::span<const TokenId>(records[i].prompt), cfg);
    out.push_back({i, records[i].task, bw.alphas});
  }
  return out;
}

template <typename T>
CrossTaskMatrix pipeline_cross_matrix(Pipeline<T>& p, std::size_t dc_limit) {
  const auto names = p.task_names();
  const auto dcs = all_dcs(p, dc_limit);
  return cross_task_matrix(*p.device(), p.pool(), std::span<const std::string>(names),
                           std::span<const customization::CustomizationSet>(dcs), p.corpus().eval,
                           p.config().pool.normalize_alpha);
}

template <typename T>
ExperimentResult run_experiment(const std::string& name, Pipeline<T>& p) {
  if (name == "diagonal-dominance") return diagonal_dominance(p);
  if (name == "alpha-diversity") return alpha_diversity(p);
  if (name == "pca-ablation") return pca_ablation(p);
  if (name == "routing-sweep") return routing_sweep(p);
  if (name == "dc-size-sweep") return dc_size_sweep(p);
  if (name == "rank-sweep") return rank_sweep(p);
  if (name == "single-lora-baseline") return single_lora_baseline(p);
  throw RangeError("unknown experiment '" + name + "'");
}

void write_experiment(const std::filesystem::path& dir, const ExperimentResult& r) {
  std::filesystem::create_directories(dir);
  model::write_file_bytes(dir / (r.name + ".json"), r.report.dump(2) + "\n");
  for (const auto& [file, bytes] : r.files) model::write_file_bytes(dir / file, bytes);
}

template <typename T>
BenchmarkRun run_benchmark(Pipeline<T>& p, bool with_sweeps) {
  BenchmarkRun run;
  const auto names = p.task_names();
  nlohmann::json server_acc = nlohmann::json::object();
  const model::ModelView<T> server{&p.server(), nullptr};
  for (const auto& t : names) server_acc[t] = evaluate(server, p.corpus().eval, t);

  nlohmann::json experiments = nlohmann::json::object();
  for (const auto& name : experiment_names()) {
    if (!with_sweeps && (name == "dc-size-sweep" || name == "rank-sweep")) continue;
    run.experiments.push_back(run_experiment(name, p));
    experiments[name] = run.experiments.back().report;
  }
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : p.tasks()) tasks.push_back(to_json(t));
  run.report = {{"config", to_json(p.config())},
                {"tasks", tasks},
                {"pool_checksum", model::hex64(p.pool().checksum)},
                {"server_accuracy", server_acc},
                {"experiments", experiments}};
  return run;
}

#define CRAYON_INSTANTIATE(T)                                                                   \
  template ExperimentResult run_experiment<T>(const std::string&, Pipeline<T>&);                \
  template std::vector<training::AlphaRecord> alpha_records<T>(                                 \
      const model::TransformerWeights<T>&, const adapters::IndicatorSet&,                       \
      std::span<const Record>, const training::TrainConfig&);                                   \
  template CrossTaskMatrix pipeline_cross_matrix<T>(Pipeline<T>&, std::size_t);                 \
  template BenchmarkRun run_benchmark<T>(Pipeline<T>&, bool);                                  \
  template UserDeployment deploy_user<T>(customization::BlendServer<T>&,                         \
                                         customization::DeviceRuntime<T>&,                       \
                                         const model::ModelView<T>&,                             \
                                         const customization::CustomizationSet&,                 \
                                         std::span<const Record>, double, hybrid::Scorer);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::harness
