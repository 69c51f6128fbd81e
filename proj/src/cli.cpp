#include "whitenorm/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <vector>

#include "json.hpp"
#include "whitenorm/diagnostics.hpp"
#include "whitenorm/rng.hpp"
#include "whitenorm/train.hpp"

namespace whitenorm::cli {

namespace {

using nlohmann::json;

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config parse failure in " + path + ": " + e.what());
  }
}

void check_keys(const json& obj, const std::string& context,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) {
    throw ConfigError(context + " must be a JSON object");
  }
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key \"" + item.key() + "\" in " + context);
    }
  }
}

template <typename T>
T require(const json& obj, const std::string& context, const char* key) {
  if (!obj.contains(key)) {
    throw ConfigError(context + " is missing required key \"" + key + "\"");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for \"" + std::string(key) + "\" in " +
                      context + ": " + e.what());
  }
}

template <typename T>
T value_or(const json& obj, const std::string& context, const char* key,
           T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for \"" + std::string(key) + "\" in " +
                      context + ": " + e.what());
  }
}

std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

std::string format_g(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%g", value);
  return buffer;
}

void write_file(const std::string& dir, const std::string& name,
                const std::string& content) {
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/" + name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << content;
}

std::uint64_t config_seed(const json& config, const CliOptions& options) {
  if (options.seed) return *options.seed;
  return value_or<std::uint64_t>(config, "config", "seed", 0);
}

json vector_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json matrix_json(const Matrix& m) {
  json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  json data = json::array();
  for (Index c = 0; c < m.cols(); ++c) {
    for (Index r = 0; r < m.rows(); ++r) data.push_back(m(r, c));
  }
  out["data"] = data;  // column-major
  return out;
}

NormMode parse_mode(const std::string& name, const std::string& context) {
  if (name == "zca") return NormMode::Zca;
  if (name == "pca") return NormMode::Pca;
  if (name == "bn") return NormMode::Bn;
  throw ConfigError("unknown mode \"" + name + "\" in " + context +
                    " (expected zca, pca or bn)");
}

const char* mode_name(NormMode mode) {
  switch (mode) {
    case NormMode::Zca: return "zca";
    case NormMode::Pca: return "pca";
    case NormMode::Bn: return "bn";
  }
  return "?";
}

DbnOptions parse_norm_options(const json& j, const std::string& context,
                              NormMode default_mode) {
  DbnOptions opts;
  opts.mode = j.contains("mode")
                  ? parse_mode(require<std::string>(j, context, "mode"),
                               context)
                  : default_mode;
  opts.group_size = value_or<Index>(j, context, "group", 0);
  opts.epsilon = value_or<double>(j, context, "epsilon", 1e-5);
  opts.momentum = value_or<double>(j, context, "momentum", 0.1);
  opts.affine = value_or<bool>(j, context, "affine", false);
  opts.clamp_degenerate =
      value_or<bool>(j, context, "clamp_degenerate", false);
  return opts;
}

struct DatasetPair {
  Dataset train;
  Dataset test;  // may be empty
  bool has_test = false;
};

DatasetPair build_dataset(const json& j, std::uint64_t seed) {
  const std::string context = "dataset";
  check_keys(j, context,
             {"type", "dim", "examples", "classes", "rho", "separation",
              "images", "labels", "limit", "path", "test_fraction",
              "subtract_feature_mean"});
  const std::string type = require<std::string>(j, context, "type");
  Dataset full;
  if (type == "synthetic") {
    full = gen_correlated_gaussians(
        require<Index>(j, context, "dim"),
        require<Index>(j, context, "examples"),
        require<int>(j, context, "classes"),
        value_or<double>(j, context, "rho", 0.0),
        value_or<double>(j, context, "separation", 3.0), seed);
  } else if (type == "idx") {
    full = load_idx_dataset(require<std::string>(j, context, "images"),
                            require<std::string>(j, context, "labels"),
                            value_or<long>(j, context, "limit", -1));
  } else if (type == "csv") {
    full = load_csv_dataset(require<std::string>(j, context, "path"));
  } else {
    throw ConfigError("unknown dataset type \"" + type + "\"");
  }
  if (value_or<bool>(j, context, "subtract_feature_mean", false)) {
    subtract_feature_mean(full);
  }
  const double test_fraction =
      value_or<double>(j, context, "test_fraction", 0.0);
  DatasetPair pair;
  if (test_fraction > 0.0) {
    auto [train, test] = split_dataset(full, test_fraction);
    pair.train = std::move(train);
    pair.test = std::move(test);
    pair.has_test = true;
  } else {
    pair.train = std::move(full);
  }
  return pair;
}

NetworkSpec parse_network(const json& j) {
  const std::string context = "network";
  check_keys(j, context, {"input_dim", "layers"});
  NetworkSpec spec;
  spec.input_dim = require<Index>(j, context, "input_dim");
  if (!j.contains("layers") || !j.at("layers").is_array()) {
    throw ConfigError("network.layers must be an array");
  }
  for (const json& lj : j.at("layers")) {
    const std::string lc = "network layer";
    const std::string kind = require<std::string>(lj, lc, "kind");
    if (kind == "linear") {
      check_keys(lj, lc, {"kind", "in", "out"});
      spec.layers.push_back(LayerSpec::linear(require<Index>(lj, lc, "in"),
                                              require<Index>(lj, lc, "out")));
    } else if (kind == "relu") {
      check_keys(lj, lc, {"kind"});
      spec.layers.push_back(LayerSpec::relu());
    } else if (kind == "trelu") {
      check_keys(lj, lc, {"kind"});
      spec.layers.push_back(LayerSpec::trelu());
    } else if (kind == "bn") {
      check_keys(lj, lc, {"kind", "affine", "epsilon", "momentum"});
      LayerSpec layer = LayerSpec::batch_norm();
      layer.norm = parse_norm_options(lj, lc, NormMode::Bn);
      layer.norm.mode = NormMode::Bn;
      layer.norm.group_size = 1;
      layer.kind = LayerKind::Norm;
      spec.layers.push_back(layer);
    } else if (kind == "dbn") {
      check_keys(lj, lc,
                 {"kind", "mode", "group", "affine", "epsilon", "momentum",
                  "clamp_degenerate"});
      LayerSpec layer;
      layer.kind = LayerKind::Norm;
      layer.norm = parse_norm_options(lj, lc, NormMode::Zca);
      spec.layers.push_back(layer);
    } else if (kind == "softmax_nll") {
      check_keys(lj, lc, {"kind"});
      spec.layers.push_back(LayerSpec::softmax_nll());
    } else {
      throw ConfigError("unknown layer kind \"" + kind + "\"");
    }
  }
  return spec;
}

TrainConfig parse_train(const json& j, std::uint64_t seed) {
  const std::string context = "train";
  check_keys(j, context,
             {"lr", "momentum", "weight_decay", "epochs", "batch_size",
              "full_batch", "shuffle", "schedule"});
  TrainConfig config;
  config.lr = require<double>(j, context, "lr");
  config.momentum = value_or<double>(j, context, "momentum", 0.0);
  config.weight_decay = value_or<double>(j, context, "weight_decay", 0.0);
  config.epochs = require<long>(j, context, "epochs");
  config.full_batch = value_or<bool>(j, context, "full_batch", false);
  config.batch_size = value_or<Index>(j, context, "batch_size", 0);
  config.shuffle = value_or<bool>(j, context, "shuffle", true);
  config.seed = seed;
  if (!config.full_batch && config.batch_size < 1) {
    throw ConfigError("train.batch_size required unless full_batch");
  }
  if (j.contains("schedule")) {
    const json& sj = j.at("schedule");
    const std::string sc = "train.schedule";
    const std::string kind = require<std::string>(sj, sc, "kind");
    if (kind == "constant") {
      check_keys(sj, sc, {"kind"});
      config.schedule = Schedule::constant();
    } else if (kind == "halve_every") {
      check_keys(sj, sc, {"kind", "iterations"});
      config.schedule =
          Schedule::halve_every(require<long>(sj, sc, "iterations"));
    } else if (kind == "divide_at") {
      check_keys(sj, sc, {"kind", "epochs", "factor"});
      config.schedule =
          Schedule::divide_at(require<std::vector<long>>(sj, sc, "epochs"),
                              require<double>(sj, sc, "factor"));
    } else {
      throw ConfigError("unknown schedule kind \"" + kind + "\"");
    }
  }
  return config;
}

json model_json(const Network& net) {
  json out;
  out["input_dim"] = net.input_dim;
  out["classes"] = net.classes;
  json layers = json::array();
  for (const Layer& layer : net.layers) {
    json lj;
    switch (layer.spec.kind) {
      case LayerKind::Linear:
        lj["kind"] = "linear";
        lj["weight"] = matrix_json(layer.weight);
        lj["bias"] = vector_json(layer.bias);
        break;
      case LayerKind::Relu:
        lj["kind"] = "relu";
        break;
      case LayerKind::Trelu:
        lj["kind"] = "trelu";
        lj["thresholds"] = vector_json(layer.thresholds);
        break;
      case LayerKind::Norm: {
        const DbnState& st = *layer.norm;
        lj["kind"] = st.opts.mode == NormMode::Bn ? "bn" : "dbn";
        lj["mode"] = mode_name(st.opts.mode);
        lj["group"] = st.opts.group_size;
        lj["epsilon"] = st.opts.epsilon;
        lj["momentum"] = st.opts.momentum;
        lj["affine"] = st.opts.affine;
        lj["running_mean"] = vector_json(st.running_mean);
        lj["running_whitening"] = matrix_json(st.running_whitening);
        if (st.opts.affine) {
          lj["gamma"] = vector_json(st.gamma);
          lj["beta"] = vector_json(st.beta);
        }
        break;
      }
      case LayerKind::SoftmaxNll:
        lj["kind"] = "softmax_nll";
        break;
    }
    layers.push_back(lj);
  }
  out["layers"] = layers;
  return out;
}

int thread_cap() {
  if (const char* env = std::getenv("WHITENORM_THREADS")) {
    const long parsed = std::strtol(env, nullptr, 10);
    if (parsed >= 1) return static_cast<int>(parsed);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// --- gradcheck ----------------------------------------------------------

int gradcheck_impl(const json& config, const CliOptions& options) {
  check_keys(config, "config",
             {"seed", "dims", "batch_sizes", "modes", "group_sizes",
              "epsilon", "step", "tolerance"});
  const std::uint64_t seed = config_seed(config, options);
  const auto dims = value_or<std::vector<Index>>(config, "config", "dims",
                                                 {2, 4, 8});
  const auto batches = value_or<std::vector<Index>>(config, "config",
                                                    "batch_sizes", {16, 64});
  const auto mode_names = value_or<std::vector<std::string>>(
      config, "config", "modes", {"zca", "pca", "bn"});
  const auto explicit_groups = value_or<std::vector<Index>>(
      config, "config", "group_sizes", {});
  const double epsilon = value_or<double>(config, "config", "epsilon", 1e-5);
  const double step = value_or<double>(config, "config", "step", 1e-5);
  const double tolerance =
      value_or<double>(config, "config", "tolerance", 1e-5);

  json cells = json::array();
  double worst = 0.0;
  std::uint64_t cell_id = 0;
  for (Index d : dims) {
    std::vector<Index> groups = explicit_groups;
    if (groups.empty()) {
      groups = {1, std::max<Index>(1, d / 2), d};
      std::sort(groups.begin(), groups.end());
      groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    }
    for (Index m : batches) {
      for (const std::string& mn : mode_names) {
        const NormMode mode = parse_mode(mn, "modes");
        for (Index k : groups) {
          if (k > d) continue;
          const double err = whitening_gradcheck_cell(
              d, m, k, mode, epsilon, step,
              splitmix64(seed ^ ++cell_id));
          worst = std::max(worst, err);
          cells.push_back({{"d", d},
                           {"m", m},
                           {"group", k},
                           {"mode", mn},
                           {"max_rel_error", err}});
          if (mode == NormMode::Bn) break;  // group size is irrelevant
        }
      }
    }
  }
  json report;
  report["cells"] = cells;
  report["max_rel_error"] = worst;
  report["tolerance"] = tolerance;
  report["pass"] = worst < tolerance;
  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  write_file(options.out_dir, "gradcheck.json", text);
  return worst < tolerance ? 0 : 1;
}

// --- whiten -------------------------------------------------------------

int whiten_impl(const json& config, const CliOptions& options) {
  check_keys(config, "config",
             {"seed", "dataset", "mode", "group", "epsilon", "momentum",
              "affine", "clamp_degenerate"});
  const std::uint64_t seed = config_seed(config, options);
  DatasetPair data = build_dataset(
      config.contains("dataset") ? config.at("dataset") : json::object(),
      splitmix64(seed ^ hash_name("dataset")));
  const Matrix& x = data.train.features;
  const Index d = x.rows();

  DbnOptions opts = parse_norm_options(config, "config", NormMode::Zca);
  DbnState state(d, opts);
  ForwardCache cache;
  const Matrix xhat = norm_forward(x, state, cache);

  // activations CSV, one example per row
  std::string csv;
  for (Index r = 0; r < d; ++r) csv += "in_" + std::to_string(r) + ",";
  for (Index r = 0; r < d; ++r) {
    csv += "out_" + std::to_string(r) + (r + 1 < d ? "," : "\n");
  }
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < d; ++r) csv += format_double(x(r, c)) + ",";
    for (Index r = 0; r < d; ++r) {
      csv += format_double(xhat(r, c)) + (r + 1 < d ? "," : "\n");
    }
  }
  write_file(options.out_dir, "activations.csv", csv);

  // per-group whiteness against the epsilon-augmented covariance
  const Vector mean = x.rowwise().mean();
  Matrix centered = x;
  centered.colwise() -= mean;
  json groups = json::array();
  double worst_deviation = 0.0;
  const Index group_size =
      state.opts.mode == NormMode::Bn ? 1 : state.opts.group_size;
  for (auto [row0, k] : group_ranges(d, group_size)) {
    Matrix sigma = (centered.middleRows(row0, k) *
                    centered.middleRows(row0, k).transpose()) /
                   static_cast<double>(x.cols());
    sigma.diagonal().array() += opts.epsilon;
    const WhitenessReport r =
        whiteness_report(xhat.middleRows(row0, k), opts.epsilon, sigma);
    worst_deviation = std::max(worst_deviation, r.max_identity_deviation);
    if (group_ranges(d, group_size).size() <= 16) {
      groups.push_back({{"row0", row0},
                        {"size", k},
                        {"max_identity_deviation", r.max_identity_deviation},
                        {"condition_before", r.condition_before},
                        {"condition_after", r.condition_after}});
    }
  }

  Matrix global_sigma =
      (centered * centered.transpose()) / static_cast<double>(x.cols());
  global_sigma.diagonal().array() += opts.epsilon;
  const WhitenessReport global =
      whiteness_report(xhat, opts.epsilon, global_sigma);
  double max_offdiag = 0.0;
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      if (i != j) {
        max_offdiag = std::max(max_offdiag, std::abs(global.correlation(i, j)));
      }
    }
  }

  json report;
  report["mode"] = mode_name(opts.mode);
  report["group_size"] = state.opts.group_size;
  report["epsilon"] = opts.epsilon;
  report["max_group_identity_deviation"] = worst_deviation;
  report["groups"] = groups;
  report["global"] = {{"condition_before", global.condition_before},
                      {"condition_after", global.condition_after},
                      {"max_offdiag_correlation", max_offdiag}};
  if (d <= 32) {
    json corr = json::array();
    for (Index i = 0; i < d; ++i) {
      json row = json::array();
      for (Index j = 0; j < d; ++j) row.push_back(global.correlation(i, j));
      corr.push_back(row);
    }
    report["global"]["correlation"] = corr;
  }
  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  write_file(options.out_dir, "whiteness.json", text);
  return 0;
}

// --- demo-axis-swap ------------------------------------------------------

json pair_json(const PairReport& pair) {
  return {{"pca_permutation", pair.pca_permutation},
          {"zca_permutation", pair.zca_permutation},
          {"pca_displacement", pair.pca_displacement},
          {"zca_displacement", pair.zca_displacement}};
}

int demo_axis_swap_impl(const json& config, const CliOptions& options) {
  check_keys(config, "config", {"seed"});
  const AxisSwapReport report = axis_swap_demo(config_seed(config, options));
  json out;
  out["flipping"] = pair_json(report.flipping);
  out["control"] = pair_json(report.control);
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  write_file(options.out_dir, "axis_swap.json", text);
  return 0;
}

// --- train ---------------------------------------------------------------

struct SweepCell {
  double lr = 0.0;
  bool diverged = false;
  double final_train_loss = std::numeric_limits<double>::infinity();
  double final_train_acc = 0.0;
  std::string metrics_file;
};

SweepCell run_cell(const NetworkSpec& netspec, const DatasetPair& data,
                   TrainConfig config, double lr, std::uint64_t seed,
                   bool emit_model, const CliOptions& options,
                   const std::string& suffix) {
  SweepCell cell;
  cell.lr = lr;
  config.lr = lr;
  Network net = init_params(netspec, splitmix64(seed ^ hash_name("init")));
  TrainResult result;
  try {
    result = train(net, data.train, data.has_test ? &data.test : nullptr,
                   config);
    if (!result.log.empty()) {
      cell.final_train_loss = result.log.back().train_loss;
      cell.final_train_acc = result.log.back().train_acc;
    }
  } catch (const DivergedError&) {
    cell.diverged = true;
  }
  cell.metrics_file = "metrics" + suffix + ".csv";
  write_file(options.out_dir, cell.metrics_file, metrics_csv(result));
  if (emit_model && !cell.diverged) {
    write_file(options.out_dir, "model" + suffix + ".json",
               model_json(net).dump(2) + "\n");
  }
  return cell;
}

int train_impl(const json& config, const CliOptions& options) {
  check_keys(config, "config",
             {"seed", "dataset", "network", "train", "sweep", "emit_model"});
  const std::uint64_t seed = config_seed(config, options);
  DatasetPair data =
      build_dataset(require<json>(config, "config", "dataset"),
                    splitmix64(seed ^ hash_name("dataset")));
  const NetworkSpec netspec =
      parse_network(require<json>(config, "config", "network"));
  TrainConfig tconfig = parse_train(require<json>(config, "config", "train"),
                                    splitmix64(seed ^ hash_name("train")));

  if (!config.contains("sweep")) {
    const bool emit_model =
        value_or<bool>(config, "config", "emit_model", true);
    SweepCell cell = run_cell(netspec, data, tconfig, tconfig.lr, seed,
                              emit_model, options, "");
    if (cell.diverged) {
      std::cout << "{\"diverged\": true}\n";
      return 1;
    }
    std::cout << "{\"final_train_loss\": " << format_double(cell.final_train_loss)
              << ", \"final_train_acc\": " << format_double(cell.final_train_acc)
              << "}\n";
    return 0;
  }

  const json& sweep = config.at("sweep");
  check_keys(sweep, "sweep", {"lr"});
  const auto lrs = require<std::vector<double>>(sweep, "sweep", "lr");
  if (lrs.empty()) throw ConfigError("sweep.lr must not be empty");
  const bool emit_model = value_or<bool>(config, "config", "emit_model", false);

  std::vector<SweepCell> cells(lrs.size());
  std::atomic<std::size_t> next{0};
  const int workers =
      std::min<int>(thread_cap(), static_cast<int>(lrs.size()));
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= lrs.size()) return;
      cells[i] = run_cell(netspec, data, tconfig, lrs[i], seed, emit_model,
                          options, "_lr" + format_g(lrs[i]));
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  json summary;
  json cell_list = json::array();
  std::size_t best = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cell_list.push_back({{"lr", cells[i].lr},
                         {"diverged", cells[i].diverged},
                         {"final_train_loss", cells[i].final_train_loss},
                         {"final_train_acc", cells[i].final_train_acc},
                         {"metrics_file", cells[i].metrics_file}});
    if (cells[i].final_train_loss < cells[best].final_train_loss) best = i;
  }
  summary["cells"] = cell_list;
  summary["best"] = {{"lr", cells[best].lr},
                     {"final_train_loss", cells[best].final_train_loss},
                     {"final_train_acc", cells[best].final_train_acc},
                     {"diverged", cells[best].diverged}};
  const std::string text = summary.dump(2) + "\n";
  std::cout << text;
  write_file(options.out_dir, "sweep.json", text);
  return 0;
}

// --- conditioning ---------------------------------------------------------

int conditioning_impl(const json& config, const CliOptions& options) {
  check_keys(config, "config",
             {"seed", "dataset", "hidden", "variants", "dbn", "train",
              "log_every"});
  const std::uint64_t seed = config_seed(config, options);
  DatasetPair data =
      build_dataset(require<json>(config, "config", "dataset"),
                    splitmix64(seed ^ hash_name("dataset")));
  const Index hidden = value_or<Index>(config, "config", "hidden", 16);
  const auto variants = value_or<std::vector<std::string>>(
      config, "config", "variants", {"plain", "bn", "dbn"});
  const TrainConfig tconfig =
      parse_train(require<json>(config, "config", "train"),
                  splitmix64(seed ^ hash_name("train")));
  const long log_every = value_or<long>(config, "config", "log_every", 5);

  DbnOptions dbn_opts;
  dbn_opts.clamp_degenerate = true;
  if (config.contains("dbn")) {
    check_keys(config.at("dbn"), "dbn",
               {"mode", "group", "epsilon", "momentum", "affine",
                "clamp_degenerate"});
    dbn_opts = parse_norm_options(config.at("dbn"), "dbn", NormMode::Zca);
  }

  const Index d = data.train.dim();
  const int classes = data.train.classes;
  std::string csv = "variant,iteration,fim_condition\n";
  std::vector<std::vector<double>> curves;

  for (const std::string& variant : variants) {
    NetworkSpec spec;
    spec.input_dim = d;
    spec.layers.push_back(LayerSpec::linear(d, hidden));
    std::size_t fim_layer = 2;
    if (variant == "bn") {
      spec.layers.push_back(LayerSpec::batch_norm());
      fim_layer = 3;
    } else if (variant == "dbn") {
      LayerSpec norm;
      norm.kind = LayerKind::Norm;
      norm.norm = dbn_opts;
      spec.layers.push_back(norm);
      fim_layer = 3;
    } else if (variant != "plain") {
      throw ConfigError("unknown variant \"" + variant + "\"");
    }
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::linear(hidden, classes));
    spec.layers.push_back(LayerSpec::softmax_nll());

    Network net = init_params(spec, splitmix64(seed ^ hash_name("init")));
    const Index batch_size =
        tconfig.full_batch ? data.train.size() : tconfig.batch_size;
    std::vector<double> curve;
    long iteration = 0;
    for (long epoch = 1; epoch <= tconfig.epochs; ++epoch) {
      BatchStream stream(
          data.train, batch_size,
          splitmix64(tconfig.seed ^ static_cast<std::uint64_t>(epoch)),
          tconfig.shuffle && !tconfig.full_batch);
      while (auto batch = stream.next()) {
        if (iteration % log_every == 0) {
          const double kappa =
              fim_condition(net, data.train, fim_layer);
          curve.push_back(kappa);
          csv += variant + "," + std::to_string(iteration) + "," +
                 format_double(kappa) + "\n";
        }
        const double lr =
            schedule_lr(tconfig.schedule, tconfig.lr, iteration, epoch);
        const ForwardResult r = net_forward(net, batch->x, batch->labels, true);
        if (!std::isfinite(r.loss) || r.loss > 1e3) {
          throw DivergedError("conditioning variant \"" + variant +
                              "\" diverged");
        }
        net_backward(net);
        sgd_step(net, lr, tconfig.momentum, tconfig.weight_decay);
        ++iteration;
      }
    }
    curves.push_back(std::move(curve));
  }
  write_file(options.out_dir, "conditioning.csv", csv);

  json report;
  report["variants"] = variants;
  // ordering fraction over logged points: dbn <= bn <= plain
  if (curves.size() == 3 && variants.size() == 3 && variants[0] == "plain" &&
      variants[1] == "bn" && variants[2] == "dbn") {
    std::size_t points = curves[0].size();
    std::size_t ordered = 0;
    for (std::size_t i = 0; i < points; ++i) {
      if (curves[2][i] <= curves[1][i] && curves[1][i] <= curves[0][i]) {
        ++ordered;
      }
    }
    report["logged_points"] = points;
    report["ordering_fraction"] =
        points == 0 ? 0.0
                    : static_cast<double>(ordered) /
                          static_cast<double>(points);
  }
  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  write_file(options.out_dir, "conditioning.json", text);
  return 0;
}

// --- bench -----------------------------------------------------------------

int bench_impl(const json& config, const CliOptions& options) {
  check_keys(config, "config",
             {"seed", "d", "m", "modes", "group_sizes", "repeats"});
  const std::uint64_t seed = config_seed(config, options);
  const Index d = value_or<Index>(config, "config", "d", 256);
  const Index m = value_or<Index>(config, "config", "m", 64);
  if (m < 1) throw ConfigError("bench batch size must be >= 1");
  if (d < 1) throw ConfigError("bench dimension must be >= 1");
  const auto mode_names = value_or<std::vector<std::string>>(
      config, "config", "modes", {"zca"});
  const auto groups = value_or<std::vector<Index>>(
      config, "config", "group_sizes", {1, 16, 64, d});
  const int repeats = value_or<int>(config, "config", "repeats", 5);

  Rng rng = Rng::substream(seed, "bench");
  Matrix x(d, m);
  Matrix dy(d, m);
  for (Index c = 0; c < m; ++c) {
    for (Index r = 0; r < d; ++r) {
      x(r, c) = rng.normal();
      dy(r, c) = rng.normal();
    }
  }

  std::string csv = "mode,d,m,k_G,fwd_us,bwd_us\n";
  for (const std::string& mn : mode_names) {
    const NormMode mode = parse_mode(mn, "modes");
    for (Index k : groups) {
      if (k > d) continue;
      DbnOptions opts;
      opts.mode = mode;
      opts.group_size = mode == NormMode::Bn ? 1 : k;
      opts.clamp_degenerate = true;
      std::vector<double> fwd_us, bwd_us;
      for (int rep = 0; rep < repeats; ++rep) {
        DbnState state(d, opts);
        ForwardCache cache;
        const auto t0 = std::chrono::steady_clock::now();
        const Matrix y = norm_forward(x, state, cache);
        const auto t1 = std::chrono::steady_clock::now();
        const Matrix dx = dbn_backward(dy, cache, state);
        const auto t2 = std::chrono::steady_clock::now();
        fwd_us.push_back(
            std::chrono::duration<double, std::micro>(t1 - t0).count());
        bwd_us.push_back(
            std::chrono::duration<double, std::micro>(t2 - t1).count());
      }
      std::sort(fwd_us.begin(), fwd_us.end());
      std::sort(bwd_us.begin(), bwd_us.end());
      csv += mn + "," + std::to_string(d) + "," + std::to_string(m) + "," +
             std::to_string(k) + "," +
             format_double(fwd_us[fwd_us.size() / 2]) + "," +
             format_double(bwd_us[bwd_us.size() / 2]) + "\n";
    }
  }
  std::cout << csv;
  write_file(options.out_dir, "bench.csv", csv);
  return 0;
}

}  // namespace

int run_gradcheck(const CliOptions& o) { return run_command("gradcheck", o); }
int run_whiten(const CliOptions& o) { return run_command("whiten", o); }
int run_demo_axis_swap(const CliOptions& o) {
  return run_command("demo-axis-swap", o);
}
int run_train(const CliOptions& o) { return run_command("train", o); }
int run_conditioning(const CliOptions& o) {
  return run_command("conditioning", o);
}
int run_bench(const CliOptions& o) { return run_command("bench", o); }

int run_command(const std::string& name, const CliOptions& options) {
  try {
    const json config = load_config(options.config_path);
    if (name == "gradcheck") return gradcheck_impl(config, options);
    if (name == "whiten") return whiten_impl(config, options);
    if (name == "demo-axis-swap") return demo_axis_swap_impl(config, options);
    if (name == "train") return train_impl(config, options);
    if (name == "conditioning") return conditioning_impl(config, options);
    if (name == "bench") return bench_impl(config, options);
    std::cerr << "unknown command \"" << name << "\"\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace whitenorm::cli
