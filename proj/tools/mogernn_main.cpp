// mogernn: reproducible experiment runs for inductive traffic forecasting on
// dynamic sensor networks.
//
// Subcommands: generate, train, evaluate, predict, sweep. Every command
// accepts --config <json> whose values fill in any flag not given on the
// command line; every artifact embeds the fully resolved config + seed, and
// re-running with that embedded config reproduces the artifact bitwise.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mogernn/checkpoint.hpp"
#include "mogernn/evaluation.hpp"
#include "mogernn/synthetic.hpp"
#include "mogernn/training.hpp"

using json = nlohmann::json;
using namespace mogernn;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// ----- config-file merge (defaults < config file < explicit flags) -----

struct ConfigFile {
  json values;

  static ConfigFile load(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    ConfigFile cf;
    try {
      in >> cf.values;
    } catch (const json::exception& e) {
      throw DataError("malformed config file " + path + ": " + e.what());
    }
    return cf;
  }

  template <typename T>
  void fill(const CLI::App& app, const std::string& flag, const std::string& key, T& target) const {
    if (values.is_null() || !values.contains(key)) return;
    const CLI::Option* opt = app.get_option_no_throw("--" + flag);
    if (opt && opt->count() > 0) return;  // explicit flag wins
    target = values.at(key).get<T>();
  }
};

std::uint64_t resolve_seed(const CLI::App& app, const ConfigFile& cf, std::uint64_t flag_value) {
  const CLI::Option* opt = app.get_option_no_throw("--seed");
  if (opt && opt->count() > 0) return flag_value;
  if (!cf.values.is_null() && cf.values.contains("seed")) return cf.values.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("MOGE_SEED")) return std::strtoull(env, nullptr, 10);
  return flag_value;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::array<std::size_t, 4> parse_role_counts(const std::string& s) {
  auto parts = split_list(s);
  if (parts.size() != 4)
    throw ValueError("--roles expects four counts AAS,VS,FS,NAS, got '" + s + "'");
  std::array<std::size_t, 4> counts{};
  for (std::size_t i = 0; i < 4; ++i) counts[i] = std::stoull(parts[i]);
  return counts;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

DatasetMetadata metadata_for(const std::string& speeds_path, const std::string& metadata_path) {
  if (!metadata_path.empty()) return load_metadata_json(metadata_path);
  // discover a sibling written by `generate`
  const std::string sibling =
      speeds_path.size() > 11 && speeds_path.ends_with("_speeds.csv")
          ? speeds_path.substr(0, speeds_path.size() - 11) + "_metadata.json"
          : "";
  if (!sibling.empty() && std::filesystem::exists(sibling)) return load_metadata_json(sibling);
  return DatasetMetadata{};
}

// κ default: drop Gaussian weights below 0.1, i.e. κ = σ·ln 10.
double resolve_kappa(double flag_kappa, const Tensor& distances) {
  if (flag_kappa > 0.0) return flag_kappa;
  return default_sigma(distances) * std::log(10.0);
}

json metrics_report_json(const MetricsReport& report) {
  json rows = json::array();
  for (const MetricRow& r : report.rows)
    rows.push_back({{"role", r.role},
                    {"horizon", r.horizon},
                    {"mape", r.metrics.mape},
                    {"mae", r.metrics.mae},
                    {"rmse", r.metrics.rmse},
                    {"count", r.metrics.count}});
  return rows;
}

std::string metrics_report_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "role,horizon,mape,mae,rmse\n";
  for (const MetricRow& r : report.rows)
    os << r.role << ',' << r.horizon << ',' << format_double(r.metrics.mape) << ','
       << format_double(r.metrics.mae) << ',' << format_double(r.metrics.rmse) << '\n';
  return os.str();
}

// ----- generate -----

struct GenerateArgs {
  std::string out_prefix;
  std::string topology = "ring";
  std::size_t nodes = 20;
  std::size_t days = 7;
  double free_speed = 65.0;
  double noise_std = 1.0;
  std::size_t episodes_per_day = 6;
  double wave_decay = 0.8;
  std::size_t wave_lag = 1;
  double spacing = 500.0;
  double frequency_min = 5.0;
  std::uint64_t seed = 1;
};

int cmd_generate(const GenerateArgs& a) {
  SyntheticSpec spec;
  spec.topology = parse_topology(a.topology);
  spec.nodes = a.nodes;
  spec.days = a.days;
  spec.free_speed = a.free_speed;
  spec.noise_std = a.noise_std;
  spec.episodes_per_day = a.episodes_per_day;
  spec.wave_decay = a.wave_decay;
  spec.wave_lag_steps = a.wave_lag;
  spec.spacing_m = a.spacing;
  spec.frequency_min = a.frequency_min;
  spec.seed = a.seed;

  SyntheticData data = generate_synthetic(spec);
  save_speed_matrix(a.out_prefix + "_speeds.csv", data.dataset);
  save_distance_matrix(a.out_prefix + "_distances.csv", data.distances, data.dataset.sensor_ids);

  json echo = {{"command", "generate"},     {"out_prefix", a.out_prefix},
               {"topology", a.topology},    {"nodes", a.nodes},
               {"days", a.days},            {"free_speed", a.free_speed},
               {"noise_std", a.noise_std},  {"episodes_per_day", a.episodes_per_day},
               {"wave_decay", a.wave_decay},{"wave_lag", a.wave_lag},
               {"spacing", a.spacing},      {"frequency_min", a.frequency_min},
               {"seed", a.seed}};
  DatasetMetadata meta{spec.frequency_min, "mph", false};
  save_metadata_json(a.out_prefix + "_metadata.json", meta, echo);
  std::cout << "wrote " << a.out_prefix << "_speeds.csv, _distances.csv, _metadata.json ("
            << spec.nodes << " sensors, " << data.dataset.length() << " steps)\n";
  return 0;
}

// ----- train -----

struct TrainArgs {
  std::string speeds, distances, metadata, out_prefix;
  std::size_t p = 12, f = 12, stride = 12, batch = 32, epochs = 200;
  double lr = 1e-3, mask_rate = 0.25;
  std::size_t tf_end_epoch = 30, patience = 10;
  double val_split = 0.0, split_ratio = 0.7;
  std::size_t h2 = 64, h_gate = 0, diffusion_steps = 2, top_k = 2;
  std::string experts = "weighted_mean,mean,max_pool,min_pool,diffusion";
  std::string gating = "sparse_topk";
  std::string gru_agg = "diffusion";
  double kappa = 0.0, sigma = 0.0;
  std::string roles;  // "AAS,VS,FS,NAS" counts; empty = all AAS
  std::uint64_t role_seed = 1;
  std::uint64_t seed = 1;
  bool diffusion_transposed = false;
  bool gru_masked_adjacency = false;
  bool no_teacher_masked = false;

  json echo() const {
    return {{"command", "train"},
            {"speeds", speeds},
            {"distances", distances},
            {"metadata", metadata},
            {"out_prefix", out_prefix},
            {"p", p},
            {"f", f},
            {"stride", stride},
            {"batch", batch},
            {"epochs", epochs},
            {"lr", lr},
            {"mask_rate", mask_rate},
            {"tf_end_epoch", tf_end_epoch},
            {"patience", patience},
            {"val_split", val_split},
            {"split_ratio", split_ratio},
            {"h2", h2},
            {"h_gate", h_gate},
            {"diffusion_steps", diffusion_steps},
            {"top_k", top_k},
            {"experts", experts},
            {"gating", gating},
            {"gru_agg", gru_agg},
            {"kappa", kappa},
            {"sigma", sigma},
            {"roles", roles},
            {"role_seed", role_seed},
            {"seed", seed},
            {"diffusion_transposed", diffusion_transposed},
            {"gru_masked_adjacency", gru_masked_adjacency},
            {"no_teacher_masked", no_teacher_masked}};
  }
};

ModelConfig model_config_from_args(const TrainArgs& a) {
  ModelConfig m;
  m.p = a.p;
  m.f = a.f;
  m.h2 = a.h2;
  m.h_gate = a.h_gate;
  m.diffusion_steps = a.diffusion_steps;
  m.top_k = a.top_k;
  m.experts.clear();
  for (const std::string& name : split_list(a.experts))
    m.experts.push_back(parse_aggregator_kind(name));
  if (m.experts.empty()) throw ValueError("--experts must name at least one aggregator");
  m.gating = parse_gating_mode(a.gating);
  m.gru_aggregator = parse_aggregator_kind(a.gru_agg);
  m.diffusion_transposed = a.diffusion_transposed;
  m.gru_uses_masked_adjacency = a.gru_masked_adjacency;
  m.teacher_includes_masked = !a.no_teacher_masked;
  return m;
}

TrainConfig train_config_from_args(const TrainArgs& a) {
  TrainConfig t;
  t.p = a.p;
  t.f = a.f;
  t.stride = a.stride;
  t.batch_size = a.batch;
  t.epochs = a.epochs;
  t.learning_rate = a.lr;
  t.mask_rate = a.mask_rate;
  t.tf_end_epoch = a.tf_end_epoch;
  t.patience = a.patience;
  t.seed = a.seed;
  t.val_split = a.val_split;
  return t;
}

int cmd_train(const TrainArgs& a) {
  DatasetMetadata meta = metadata_for(a.speeds, a.metadata);
  SpeedDataset full = load_speed_matrix(a.speeds, meta);
  Tensor distances = load_distance_matrix(a.distances, full.sensor_ids);

  const std::size_t n = full.n_sensors();
  RoleAssignment roles;
  if (a.roles.empty()) {
    roles.roles.assign(n, Role::AAS);
    roles.seed = a.role_seed;
  } else {
    roles = assign_roles(n, parse_role_counts(a.roles), a.role_seed);
  }

  auto [train_full, test_full] = split_train_test(full, a.split_ratio);
  auto training_nodes = roles.training_nodes();
  if (training_nodes.empty()) throw ValueError("role counts leave no training sensors");
  SpeedDataset train_ds = select_sensors(train_full, training_nodes);

  Tensor train_dist = Tensor::zeros({training_nodes.size(), training_nodes.size()});
  for (std::size_t i = 0; i < training_nodes.size(); ++i)
    for (std::size_t j = 0; j < training_nodes.size(); ++j)
      train_dist.set(i, j, distances.at(training_nodes[i], training_nodes[j]));

  const double kappa = resolve_kappa(a.kappa, distances);
  std::optional<double> sigma = a.sigma > 0.0 ? std::optional<double>(a.sigma) : std::nullopt;
  SensorGraph graph = SensorGraph::build(train_dist, sigma, kappa,
                                         std::vector<std::uint8_t>(training_nodes.size(), 1));

  ModelConfig mcfg = model_config_from_args(a);
  TrainConfig tcfg = train_config_from_args(a);

  std::ostringstream log_lines;
  log_lines << json{{"config", a.echo()}}.dump() << '\n';
  TrainResult result = train(mcfg, tcfg, train_ds, graph, [&](const EpochLog& l) {
    json line = {{"epoch", l.epoch},
                 {"tf_rate", l.tf_rate},
                 {"train_loss", l.train_loss},
                 {"val_loss", l.val_loss}};
    log_lines << line.dump() << '\n';
    std::cout << "epoch " << l.epoch << " tf " << l.tf_rate << " train " << l.train_loss
              << " val " << l.val_loss << '\n';
  });
  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << '\n';

  Checkpoint ck;
  ck.model_cfg = mcfg;
  ck.train_cfg = tcfg;
  ck.model = std::move(result.model);
  ck.norm = result.norm;
  ck.roles = roles;
  ck.sensor_ids = full.sensor_ids;
  ck.kappa = kappa;
  ck.sigma = sigma;
  ck.split_ratio = a.split_ratio;
  ck.cli_config = a.echo();
  save_checkpoint(a.out_prefix + "_checkpoint.json", ck);
  write_text(a.out_prefix + "_train_log.jsonl", log_lines.str());
  std::cout << "best epoch " << result.best_epoch << " (val " << result.best_val_loss
            << "); wrote " << a.out_prefix << "_checkpoint.json\n";
  return 0;
}

// ----- evaluate -----

struct EvaluateArgs {
  std::string checkpoint, speeds, distances, metadata, out_prefix;
  std::string roles;  // optional override: dynamic-scenario role counts
  std::uint64_t role_seed = 1;
  std::string baselines;  // e.g. "knn_ed,persistence"
  std::size_t knn_k = 2;
  std::size_t eval_stride = 0;  // 0 → training stride
  bool dump_predictions = false;

  json echo() const {
    return {{"command", "evaluate"},
            {"checkpoint", checkpoint},
            {"speeds", speeds},
            {"distances", distances},
            {"metadata", metadata},
            {"out_prefix", out_prefix},
            {"roles", roles},
            {"role_seed", role_seed},
            {"baselines", baselines},
            {"knn_k", knn_k},
            {"eval_stride", eval_stride},
            {"dump_predictions", dump_predictions}};
  }
};

std::string predictions_csv(const EvalOutputs& dump, const std::vector<std::string>& ids) {
  std::ostringstream os;
  os << "window_start,sensor_id,step,prediction,target,valid\n";
  for (std::size_t w = 0; w < dump.preds.size(); ++w)
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t s = 0; s < dump.preds[w].cols(); ++s)
        os << dump.window_starts[w] << ',' << ids[i] << ',' << s + 1 << ','
           << format_double(dump.preds[w].at(i, s)) << ','
           << format_double(dump.targets[w].at(i, s)) << ','
           << (dump.valids[w].at(i, s) != 0.0 ? 1 : 0) << '\n';
  return os.str();
}

int cmd_evaluate(const EvaluateArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  DatasetMetadata meta = metadata_for(a.speeds, a.metadata);
  SpeedDataset full = load_speed_matrix(a.speeds, meta);
  if (full.sensor_ids != ck.sensor_ids)
    throw DataError("evaluate: sensor ids in " + a.speeds + " do not match the checkpoint");
  Tensor distances = load_distance_matrix(a.distances, full.sensor_ids);

  RoleAssignment roles = a.roles.empty()
                             ? ck.roles
                             : assign_roles(full.n_sensors(), parse_role_counts(a.roles), a.role_seed);
  auto [train_part, test_part] = split_train_test(full, ck.split_ratio);
  const std::size_t stride = a.eval_stride == 0 ? ck.train_cfg.stride : a.eval_stride;

  EvalOutputs dump;
  MetricsReport report = run_dynamic_scenario(ck.model, ck.norm, test_part, distances, roles,
                                              ck.kappa, ck.sigma, stride,
                                              a.dump_predictions ? &dump : nullptr);

  json out;
  out["config"] = a.echo();
  out["checkpoint_config"] = ck.cli_config;
  out["mogernn"] = metrics_report_json(report);
  if (roles.count(Role::VS) > 0 && roles.count(Role::AAS) > 0)
    out["d_v2a"] = vs_to_aas_distance(roles, distances);
  write_text(a.out_prefix + "_report.csv", metrics_report_csv(report));

  for (const std::string& b : split_list(a.baselines)) {
    if (b == "knn_ed") {
      MetricsReport r = baseline_knn_ed(ck.model, ck.norm, test_part, distances, roles, a.knn_k,
                                        ck.kappa, ck.sigma, stride);
      out["knn_ed"] = metrics_report_json(r);
      write_text(a.out_prefix + "_report_knn_ed.csv", metrics_report_csv(r));
    } else if (b == "persistence") {
      MetricsReport r = baseline_persistence(ck.model, ck.norm, test_part, distances, roles,
                                             a.knn_k, stride);
      out["persistence"] = metrics_report_json(r);
      write_text(a.out_prefix + "_report_persistence.csv", metrics_report_csv(r));
    } else {
      throw ValueError("unknown baseline '" + b + "' (expected knn_ed, persistence)");
    }
  }
  if (a.dump_predictions)
    write_text(a.out_prefix + "_predictions.csv", predictions_csv(dump, full.sensor_ids));
  write_text(a.out_prefix + "_report.json", out.dump(2) + "\n");
  std::cout << "wrote " << a.out_prefix << "_report.{json,csv}\n";
  return 0;
}

// ----- predict -----

struct PredictArgs {
  std::string checkpoint, speeds, distances, metadata, out;
  std::string virtual_ids;  // extra sensor ids present only in the distance file

  json echo() const {
    return {{"command", "predict"}, {"checkpoint", checkpoint}, {"speeds", speeds},
            {"distances", distances}, {"metadata", metadata},   {"out", out},
            {"virtual", virtual_ids}};
  }
};

int cmd_predict(const PredictArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  DatasetMetadata meta = metadata_for(a.speeds, a.metadata);
  SpeedDataset observed_ds = load_speed_matrix(a.speeds, meta);
  const std::size_t p = ck.model_cfg.p;
  if (observed_ds.length() < p)
    throw DataError("predict: window has " + std::to_string(observed_ds.length()) +
                    " rows, model needs P=" + std::to_string(p));

  std::vector<std::string> ids = observed_ds.sensor_ids;
  std::vector<std::uint8_t> observed(ids.size(), 1);
  for (const std::string& v : split_list(a.virtual_ids)) {
    ids.push_back(v);
    observed.push_back(0);
  }
  Tensor distances = load_distance_matrix(a.distances, ids);
  SensorGraph graph = SensorGraph::build(std::move(distances), ck.sigma, ck.kappa, observed);

  const std::size_t n = ids.size();
  const std::size_t offset = observed_ds.length() - p;  // last P rows
  Tensor window = Tensor::zeros({n, p});
  Tensor valid = Tensor::zeros({n, p});
  for (std::size_t i = 0; i < observed_ds.n_sensors(); ++i)
    for (std::size_t t = 0; t < p; ++t) {
      window.set(i, t, observed_ds.series.at(i, offset + t));
      valid.set(i, t, observed_ds.is_valid(i, offset + t) ? 1.0 : 0.0);
    }

  Tensor pred = predict(ck.model, ck.norm, window, valid, graph);
  std::ostringstream os;
  os << "sensor_id,step,prediction\n";
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < ck.model_cfg.f; ++s)
      os << ids[i] << ',' << s + 1 << ',' << format_double(pred.at(i, s)) << '\n';
  write_text(a.out, os.str());
  write_text(a.out + ".meta.json", a.echo().dump(2) + "\n");
  std::cout << "wrote " << a.out << " (" << n * ck.model_cfg.f << " rows)\n";
  return 0;
}

// ----- sweep (§5.4 VS-ratio study) -----

struct SweepArgs {
  TrainArgs train;           // shared training parameters
  std::string vs_counts;     // explicit list, e.g. "4,8,12"
  std::size_t knn_k = 2;
  std::size_t eval_stride = 0;

  json echo() const {
    json j = train.echo();
    j["command"] = "sweep";
    j["vs_counts"] = vs_counts;
    j["knn_k"] = knn_k;
    j["eval_stride"] = eval_stride;
    return j;
  }
};

int cmd_sweep(const SweepArgs& a) {
  DatasetMetadata meta = metadata_for(a.train.speeds, a.train.metadata);
  SpeedDataset full = load_speed_matrix(a.train.speeds, meta);
  Tensor distances = load_distance_matrix(a.train.distances, full.sensor_ids);
  const std::size_t n = full.n_sensors();
  const double kappa = resolve_kappa(a.train.kappa, distances);
  std::optional<double> sigma =
      a.train.sigma > 0.0 ? std::optional<double>(a.train.sigma) : std::nullopt;

  std::ostringstream csv;
  csv << "vs_count,aas_count,d_v2a,vs_mape,vs_mae,vs_rmse,aas_mape,aas_mae,aas_rmse\n";
  for (const std::string& item : split_list(a.vs_counts)) {
    const std::size_t vs = std::stoull(item);
    if (vs == 0 || vs >= n)
      throw ValueError("sweep: vs count " + item + " outside (0, " + std::to_string(n) + ")");
    RoleAssignment roles = assign_roles(n, {n - vs, vs, 0, 0}, a.train.role_seed);

    auto [train_full, test_full] = split_train_test(full, a.train.split_ratio);
    auto training_nodes = roles.training_nodes();
    SpeedDataset train_ds = select_sensors(train_full, training_nodes);
    Tensor train_dist = Tensor::zeros({training_nodes.size(), training_nodes.size()});
    for (std::size_t i = 0; i < training_nodes.size(); ++i)
      for (std::size_t j = 0; j < training_nodes.size(); ++j)
        train_dist.set(i, j, distances.at(training_nodes[i], training_nodes[j]));
    SensorGraph graph = SensorGraph::build(train_dist, sigma, kappa,
                                           std::vector<std::uint8_t>(training_nodes.size(), 1));

    TrainResult result =
        train(model_config_from_args(a.train), train_config_from_args(a.train), train_ds, graph);
    const std::size_t stride = a.eval_stride == 0 ? a.train.stride : a.eval_stride;
    MetricsReport report = run_dynamic_scenario(result.model, result.norm, test_full, distances,
                                                roles, kappa, sigma, stride);
    const double dv2a = vs_to_aas_distance(roles, distances);
    const MetricRow* vs_row = report.find("VS", "all");
    const MetricRow* aas_row = report.find("AAS", "all");
    if (!vs_row || !aas_row) throw DataError("sweep: missing VS/AAS rows in report");
    csv << vs << ',' << n - vs << ',' << format_double(dv2a) << ','
        << format_double(vs_row->metrics.mape) << ',' << format_double(vs_row->metrics.mae) << ','
        << format_double(vs_row->metrics.rmse) << ',' << format_double(aas_row->metrics.mape)
        << ',' << format_double(aas_row->metrics.mae) << ','
        << format_double(aas_row->metrics.rmse) << '\n';
    std::cout << "vs=" << vs << " d_v2a=" << dv2a << " vs_mae=" << vs_row->metrics.mae
              << " aas_mae=" << aas_row->metrics.mae << '\n';
  }
  write_text(a.train.out_prefix + "_sweep.csv", csv.str());
  write_text(a.train.out_prefix + "_sweep.meta.json", a.echo().dump(2) + "\n");
  std::cout << "wrote " << a.train.out_prefix << "_sweep.csv\n";
  return 0;
}

// ----- option wiring -----

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--speeds", a.speeds, "speed matrix CSV")->required();
  cmd->add_option("--distances", a.distances, "distance CSV")->required();
  cmd->add_option("--metadata", a.metadata, "metadata JSON (default: sibling of --speeds)");
  cmd->add_option("--out-prefix", a.out_prefix, "output path prefix")->required();
  cmd->add_option("--p", a.p, "history steps P");
  cmd->add_option("--f", a.f, "prediction steps F");
  cmd->add_option("--stride", a.stride, "sliding-window stride");
  cmd->add_option("--batch", a.batch, "mini-batch size");
  cmd->add_option("--epochs", a.epochs, "max epochs");
  cmd->add_option("--lr", a.lr, "learning rate");
  cmd->add_option("--mask-rate", a.mask_rate, "random node mask rate m");
  cmd->add_option("--tf-end-epoch", a.tf_end_epoch, "teacher forcing end epoch E_m");
  cmd->add_option("--patience", a.patience, "early-stop patience");
  cmd->add_option("--val-split", a.val_split, "holdout fraction (0 = validate on train)");
  cmd->add_option("--split-ratio", a.split_ratio, "train/test chronological split");
  cmd->add_option("--h2", a.h2, "hidden width H2");
  cmd->add_option("--h-gate", a.h_gate, "gate hidden width (0 = H2)");
  cmd->add_option("--diffusion-steps", a.diffusion_steps, "diffusion steps K");
  cmd->add_option("--top-k", a.top_k, "experts kept per node");
  cmd->add_option("--experts", a.experts, "comma list of expert aggregators");
  cmd->add_option("--gating", a.gating, "sparse_topk or average")
      ->check(CLI::IsMember({"sparse_topk", "average"}));
  cmd->add_option("--gru-agg", a.gru_agg, "aggregator inside the GRU")
      ->check(CLI::IsMember({"weighted_mean", "mean", "max_pool", "min_pool", "diffusion"}));
  cmd->add_option("--kappa", a.kappa, "adjacency distance threshold (0 = sigma*ln10)");
  cmd->add_option("--sigma", a.sigma, "adjacency kernel width (0 = std of distances)");
  cmd->add_option("--roles", a.roles, "role counts AAS,VS,FS,NAS (default: all AAS)");
  cmd->add_option("--role-seed", a.role_seed, "role assignment seed");
  cmd->add_option("--seed", a.seed, "training seed (env MOGE_SEED as fallback)");
  cmd->add_flag("--diffusion-transposed", a.diffusion_transposed,
                "use the transposed index-form diffusion reading");
  cmd->add_flag("--gru-masked-adjacency", a.gru_masked_adjacency,
                "apply the first-layer adjacency mask inside the GRU too");
  cmd->add_flag("--no-teacher-masked", a.no_teacher_masked,
                "do not feed masked nodes' true values as teacher signal");
}

void merge_train_config(const CLI::App& app, const ConfigFile& cf, TrainArgs& a) {
  cf.fill(app, "speeds", "speeds", a.speeds);
  cf.fill(app, "distances", "distances", a.distances);
  cf.fill(app, "metadata", "metadata", a.metadata);
  cf.fill(app, "out-prefix", "out_prefix", a.out_prefix);
  cf.fill(app, "p", "p", a.p);
  cf.fill(app, "f", "f", a.f);
  cf.fill(app, "stride", "stride", a.stride);
  cf.fill(app, "batch", "batch", a.batch);
  cf.fill(app, "epochs", "epochs", a.epochs);
  cf.fill(app, "lr", "lr", a.lr);
  cf.fill(app, "mask-rate", "mask_rate", a.mask_rate);
  cf.fill(app, "tf-end-epoch", "tf_end_epoch", a.tf_end_epoch);
  cf.fill(app, "patience", "patience", a.patience);
  cf.fill(app, "val-split", "val_split", a.val_split);
  cf.fill(app, "split-ratio", "split_ratio", a.split_ratio);
  cf.fill(app, "h2", "h2", a.h2);
  cf.fill(app, "h-gate", "h_gate", a.h_gate);
  cf.fill(app, "diffusion-steps", "diffusion_steps", a.diffusion_steps);
  cf.fill(app, "top-k", "top_k", a.top_k);
  cf.fill(app, "experts", "experts", a.experts);
  cf.fill(app, "gating", "gating", a.gating);
  cf.fill(app, "gru-agg", "gru_agg", a.gru_agg);
  cf.fill(app, "kappa", "kappa", a.kappa);
  cf.fill(app, "sigma", "sigma", a.sigma);
  cf.fill(app, "roles", "roles", a.roles);
  cf.fill(app, "role-seed", "role_seed", a.role_seed);
  cf.fill(app, "diffusion-transposed", "diffusion_transposed", a.diffusion_transposed);
  cf.fill(app, "gru-masked-adjacency", "gru_masked_adjacency", a.gru_masked_adjacency);
  cf.fill(app, "no-teacher-masked", "no_teacher_masked", a.no_teacher_masked);
  a.seed = resolve_seed(app, cf, a.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoGERNN traffic forecasting toolkit"};
  app.require_subcommand(1);

  std::string config_path;

  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  generate->add_option("--config", config_path, "JSON config (flags override)");
  generate->add_option("--out-prefix", gen.out_prefix, "output path prefix")->required();
  generate->add_option("--topology", gen.topology, "ring, line or grid")
      ->check(CLI::IsMember({"ring", "line", "grid"}));
  generate->add_option("--nodes", gen.nodes, "sensor count");
  generate->add_option("--days", gen.days, "simulated days");
  generate->add_option("--free-speed", gen.free_speed, "free-flow speed");
  generate->add_option("--noise-std", gen.noise_std, "gaussian noise std");
  generate->add_option("--episodes-per-day", gen.episodes_per_day, "congestion episodes per day");
  generate->add_option("--wave-decay", gen.wave_decay, "amplitude decay per hop");
  generate->add_option("--wave-lag", gen.wave_lag, "lag steps per hop");
  generate->add_option("--spacing", gen.spacing, "edge length, meters");
  generate->add_option("--frequency-min", gen.frequency_min, "sampling interval, minutes");
  generate->add_option("--seed", gen.seed, "rng seed (env MOGE_SEED as fallback)");

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "run the inductive training procedure");
  train_cmd->add_option("--config", config_path, "JSON config (flags override)");
  add_train_options(train_cmd, tr);

  EvaluateArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "roles, dynamic scenario, baselines");
  eval_cmd->add_option("--config", config_path, "JSON config (flags override)");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--speeds", ev.speeds, "speed matrix CSV")->required();
  eval_cmd->add_option("--distances", ev.distances, "distance CSV")->required();
  eval_cmd->add_option("--metadata", ev.metadata, "metadata JSON");
  eval_cmd->add_option("--out-prefix", ev.out_prefix, "output path prefix")->required();
  eval_cmd->add_option("--roles", ev.roles, "role counts AAS,VS,FS,NAS (default: checkpoint roles)");
  eval_cmd->add_option("--role-seed", ev.role_seed, "role assignment seed");
  eval_cmd->add_option("--baselines", ev.baselines, "comma list: knn_ed, persistence");
  eval_cmd->add_option("--knn-k", ev.knn_k, "neighbours for the KNN baselines");
  eval_cmd->add_option("--eval-stride", ev.eval_stride, "evaluation stride (0 = training stride)");
  eval_cmd->add_flag("--dump-predictions", ev.dump_predictions, "write raw prediction dump CSV");

  PredictArgs pr;
  CLI::App* predict_cmd = app.add_subcommand("predict", "multi-step forecast from a window");
  predict_cmd->add_option("--config", config_path, "JSON config (flags override)");
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "trained checkpoint")->required();
  predict_cmd->add_option("--speeds", pr.speeds, "window CSV (last P rows are used)")->required();
  predict_cmd->add_option("--distances", pr.distances, "distance CSV")->required();
  predict_cmd->add_option("--metadata", pr.metadata, "metadata JSON");
  predict_cmd->add_option("--out", pr.out, "prediction CSV path")->required();
  predict_cmd->add_option("--virtual", pr.virtual_ids, "comma list of virtual sensor ids");

  SweepArgs sw;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "VS-count sweep: train + evaluate per count");
  sweep_cmd->add_option("--config", config_path, "JSON config (flags override)");
  add_train_options(sweep_cmd, sw.train);
  sweep_cmd->add_option("--vs-counts", sw.vs_counts, "comma list of VS counts")->required();
  sweep_cmd->add_option("--knn-k", sw.knn_k, "neighbours for the KNN baselines");
  sweep_cmd->add_option("--eval-stride", sw.eval_stride, "evaluation stride (0 = training stride)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    ConfigFile cf = ConfigFile::load(config_path);
    if (generate->parsed()) {
      cf.fill(*generate, "out-prefix", "out_prefix", gen.out_prefix);
      cf.fill(*generate, "topology", "topology", gen.topology);
      cf.fill(*generate, "nodes", "nodes", gen.nodes);
      cf.fill(*generate, "days", "days", gen.days);
      cf.fill(*generate, "free-speed", "free_speed", gen.free_speed);
      cf.fill(*generate, "noise-std", "noise_std", gen.noise_std);
      cf.fill(*generate, "episodes-per-day", "episodes_per_day", gen.episodes_per_day);
      cf.fill(*generate, "wave-decay", "wave_decay", gen.wave_decay);
      cf.fill(*generate, "wave-lag", "wave_lag", gen.wave_lag);
      cf.fill(*generate, "spacing", "spacing", gen.spacing);
      cf.fill(*generate, "frequency-min", "frequency_min", gen.frequency_min);
      gen.seed = resolve_seed(*generate, cf, gen.seed);
      return cmd_generate(gen);
    }
    if (train_cmd->parsed()) {
      merge_train_config(*train_cmd, cf, tr);
      return cmd_train(tr);
    }
    if (eval_cmd->parsed()) {
      cf.fill(*eval_cmd, "checkpoint", "checkpoint", ev.checkpoint);
      cf.fill(*eval_cmd, "speeds", "speeds", ev.speeds);
      cf.fill(*eval_cmd, "distances", "distances", ev.distances);
      cf.fill(*eval_cmd, "metadata", "metadata", ev.metadata);
      cf.fill(*eval_cmd, "out-prefix", "out_prefix", ev.out_prefix);
      cf.fill(*eval_cmd, "roles", "roles", ev.roles);
      cf.fill(*eval_cmd, "role-seed", "role_seed", ev.role_seed);
      cf.fill(*eval_cmd, "baselines", "baselines", ev.baselines);
      cf.fill(*eval_cmd, "knn-k", "knn_k", ev.knn_k);
      cf.fill(*eval_cmd, "eval-stride", "eval_stride", ev.eval_stride);
      cf.fill(*eval_cmd, "dump-predictions", "dump_predictions", ev.dump_predictions);
      return cmd_evaluate(ev);
    }
    if (predict_cmd->parsed()) {
      cf.fill(*predict_cmd, "checkpoint", "checkpoint", pr.checkpoint);
      cf.fill(*predict_cmd, "speeds", "speeds", pr.speeds);
      cf.fill(*predict_cmd, "distances", "distances", pr.distances);
      cf.fill(*predict_cmd, "metadata", "metadata", pr.metadata);
      cf.fill(*predict_cmd, "out", "out", pr.out);
      cf.fill(*predict_cmd, "virtual", "virtual", pr.virtual_ids);
      return cmd_predict(pr);
    }
    if (sweep_cmd->parsed()) {
      merge_train_config(*sweep_cmd, cf, sw.train);
      cf.fill(*sweep_cmd, "vs-counts", "vs_counts", sw.vs_counts);
      cf.fill(*sweep_cmd, "knn-k", "knn_k", sw.knn_k);
      cf.fill(*sweep_cmd, "eval-stride", "eval_stride", sw.eval_stride);
      return cmd_sweep(sw);
    }
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
