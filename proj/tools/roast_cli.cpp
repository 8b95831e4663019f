/*
 * Copyright 2026 The roast Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


// roast_cli: benchmarks, estimator studies, training sweeps, verification and store snapshots.
//
// Every parameter can come from defaults, a JSON config (--config) or a flag, in increasing
// precedence. The resolved set is written to <out>/manifest.json, which can be passed back via
// --config to repeat the run.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "roast/bench.hpp"
#include "roast/errors.hpp"
#include "roast/estimator.hpp"
#include "roast/parallel.hpp"
#include "roast/snapshot.hpp"
#include "roast/trainer.hpp"
#include "roast/verify.hpp"

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitVerify = 3;
constexpr int kExitIo = 4;

struct VerificationFailed {};

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

/// Named parameters of one command (or the global set) bound to CLI11 options.
class Params {
 public:
  template <class T>
  void add(CLI::App* app, const std::string& key, T def, const std::string& help, bool flag = false) {
    auto value = std::make_shared<T>(def);
    defaults_[key] = def;
    CLI::Option* opt = nullptr;
    if constexpr (std::is_same_v<T, bool>) {
      opt = flag ? app->add_flag("--" + dashed(key), *value, help) : app->add_option("--" + dashed(key), *value, help);
    } else {
      opt = app->add_option("--" + dashed(key), *value, help);
    }
    if constexpr (requires { value->begin(); } && !std::is_same_v<T, std::string>) opt->delimiter(',');
    order_.push_back(key);
    options_[key] = opt;
    getters_[key] = [value] { return json(*value); };
  }

  bool has(const std::string& key) const { return defaults_.count(key) != 0; }

  /// Defaults, overlaid with config entries for known keys, overlaid with flags given on the command line.
  void resolve_into(json& out, const json& config) const {
    for (const auto& key : order_) {
      out[key] = defaults_.at(key);
      if (config.contains(key)) out[key] = config.at(key);
      if (options_.at(key)->count() > 0) out[key] = getters_.at(key)();
    }
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, json> defaults_;
  std::map<std::string, CLI::Option*> options_;
  std::map<std::string, std::function<json()>> getters_;
};

template <class T>
T get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw roast::ConfigError("config key '" + key + "' has the wrong type: " + e.what());
  }
}

std::uint64_t fnv1a(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw roast::IoError("cannot write " + p.string());
  return f;
}

roast::SharingMode sharing_from(const std::string& s) {
  if (s == "global") return roast::SharingMode::global;
  if (s == "local") return roast::SharingMode::local;
  throw roast::ConfigError("sharing must be 'global' or 'local', got '" + s + "'");
}

roast::train::OptimizerKind optimizer_from(const std::string& s) {
  if (s == "sgd") return roast::train::OptimizerKind::sgd;
  if (s == "adagrad") return roast::train::OptimizerKind::adagrad;
  if (s == "adam") return roast::train::OptimizerKind::adam;
  throw roast::ConfigError("optimizer must be sgd, adagrad or adam, got '" + s + "'");
}

roast::train::DatasetKind dataset_from(const std::string& s) {
  if (s == "clusters") return roast::train::DatasetKind::clusters;
  if (s == "moons") return roast::train::DatasetKind::moons;
  if (s == "sparse_tokens") return roast::train::DatasetKind::sparse_tokens;
  throw roast::ConfigError("dataset must be clusters, moons or sparse_tokens, got '" + s + "'");
}

// ---------------------------------------------------------------------------------------------

int cmd_bench(const json& cfg, const fs::path& out) {
  namespace rb = roast::bench;
  rb::BenchConfig bc;
  bc.dims = get<std::vector<std::size_t>>(cfg, "dims");
  bc.store_bytes.clear();
  for (auto mib : get<std::vector<std::size_t>>(cfg, "store_mib")) bc.store_bytes.push_back(mib << 20);
  bc.kernels.clear();
  for (const auto& k : get<std::vector<std::string>>(cfg, "kernels")) bc.kernels.push_back(rb::kernel_from_string(k));
  bc.batch = get<std::size_t>(cfg, "batch");
  bc.tiles = {16, get<std::size_t>(cfg, "z0"), get<std::size_t>(cfg, "z1"), get<std::size_t>(cfg, "z2")};
  bc.runs = get<int>(cfg, "runs");
  bc.warmup = get<int>(cfg, "warmup");
  bc.seed = get<std::uint64_t>(cfg, "seed");
  for (auto d : bc.dims)
    if (d == 0) throw roast::ConfigError("bench: dims must be positive");
  const auto rows = rb::run_bench(bc);
  auto f = open_out(out / "bench.csv");
  rb::write_bench_csv(f, rows);
  std::cout << rb::summary(rows);
  return kExitOk;
}

int cmd_estimate(const json& cfg, const fs::path& out) {
  namespace re = roast::estimator;
  const auto study = get<std::string>(cfg, "study");
  if (study != "all" && study != "moments" && study != "gap" && study != "norm")
    throw roast::ConfigError("study must be all, moments, gap or norm");
  const auto seed = get<std::uint64_t>(cfg, "seed");

  if (study == "all" || study == "moments") {
    const auto k = get<std::size_t>(cfg, "k");
    const auto piece = get<std::size_t>(cfg, "piece_size");
    const auto m = get<std::size_t>(cfg, "m");
    auto fractions = get<std::vector<double>>(cfg, "fractions");
    if (fractions.empty()) fractions.assign(k, 1.0 / static_cast<double>(k));
    if (fractions.size() != k) throw roast::ConfigError("fractions must list one value per piece");
    const auto layout = re::make_layout(std::vector<std::size_t>(k, piece), fractions, m);
    const auto trials = get<std::size_t>(cfg, "trials");
    const auto fixtures = get<std::size_t>(cfg, "fixtures");
    auto f = open_out(out / "moments.csv");
    roast::csv::write_row(f, re::study_csv_header());
    for (std::size_t i = 0; i < fixtures; ++i) {
      std::mt19937_64 gen(roast::hashing::mix_seed(seed, i));
      std::normal_distribution<double> normal;
      std::vector<double> x(layout.total_n()), y(layout.total_n());
      for (auto& v : x) v = normal(gen);
      for (auto& v : y) v = normal(gen);
      const auto mc_seed = roast::hashing::mix_seed(seed, 1000 + i);
      const auto g = re::monte_carlo_moments(re::Estimator::gms, x, y, layout, trials, mc_seed);
      const auto l = re::monte_carlo_moments(re::Estimator::lms, x, y, layout, trials, mc_seed);
      roast::csv::write_row(f, {roast::csv::fmt(i), roast::csv::fmt(k), roast::csv::fmt(m),
                                roast::csv::fmt(layout.total_n()), "gaussian", roast::csv::fmt(g.analytic_variance),
                                roast::csv::fmt(l.analytic_variance), roast::csv::fmt(g.estimator_variance),
                                roast::csv::fmt(l.estimator_variance), roast::csv::fmt(trials),
                                roast::csv::fmt(mc_seed)});
      std::cout << "moments fixture " << i << ": <x,y>=" << g.analytic_expectation << " gms mean z=" << g.mean_z()
                << " var z=" << g.variance_z() << " | lms mean z=" << l.mean_z() << " var z=" << l.variance_z() << '\n';
    }
  }
  if (study == "all" || study == "gap") {
    re::GapStudyConfig gc;
    gc.k = get<std::size_t>(cfg, "gap_k");
    gc.piece_size = get<std::size_t>(cfg, "gap_piece_size");
    gc.m = get<std::size_t>(cfg, "gap_m");
    gc.draws = get<std::size_t>(cfg, "draws");
    const auto mode = get<std::string>(cfg, "fraction_mode");
    if (mode != "equal" && mode != "random") throw roast::ConfigError("fraction_mode must be equal or random");
    gc.fractions = mode == "equal" ? re::FractionMode::equal : re::FractionMode::random;
    gc.sample_trials = get<std::size_t>(cfg, "sample_trials");
    gc.seed = seed;
    const auto r = re::gms_lms_gap_study(gc);
    auto f = open_out(out / "gap.csv");
    re::write_gap_csv(f, r);
    double resid = 0, neglected = 0;
    for (const auto& row : r.rows) {
      resid += std::abs(row.approx_residual);
      neglected += row.neglected;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, r.rows.size()));
    std::cout << "gap: V_L >= V_G in " << r.fraction_l_ge_g() << " of " << r.rows.size() << " draws ("
              << r.exceptions.size() << " exceptions); mean |V_G - approx| = " << resid / n
              << "; mean neglected term = " << neglected / n << '\n';
  }
  if (study == "all" || study == "norm") {
    const auto n = get<std::size_t>(cfg, "norm_n");
    const auto k = get<std::size_t>(cfg, "norm_k");
    const auto m = get<std::size_t>(cfg, "norm_m");
    const auto eps = get<double>(cfg, "epsilon");
    const auto trials = get<std::size_t>(cfg, "norm_trials");
    const auto r = re::norm_preservation_study(n, k, m, eps, trials, seed);
    auto f = open_out(out / "norm.csv");
    roast::csv::write_row(f, {"n", "k", "m", "epsilon", "trials", "global_success_rate", "local_success_rate",
                              "difference_se", "seed"});
    roast::csv::write_row(f, {roast::csv::fmt(n), roast::csv::fmt(k), roast::csv::fmt(m), roast::csv::fmt(eps),
                              roast::csv::fmt(trials), roast::csv::fmt(r.global_success_rate),
                              roast::csv::fmt(r.local_success_rate), roast::csv::fmt(r.difference_std_error()),
                              roast::csv::fmt(seed)});
    std::cout << "norm: global=" << r.global_success_rate << " local=" << r.local_success_rate
              << " se=" << r.difference_std_error() << '\n';
  }
  return kExitOk;
}

int cmd_train(const json& cfg, const fs::path& out) {
  namespace tr = roast::train;
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const bool deterministic = get<bool>(cfg, "deterministic");
  const auto kind = dataset_from(get<std::string>(cfg, "dataset"));
  tr::SynthOptions so;
  so.feature_dim = get<std::size_t>(cfg, "feature_dim");
  so.separation = get<double>(cfg, "separation");
  so.vocab_size = get<std::size_t>(cfg, "vocab_size");
  so.seq_len = get<std::size_t>(cfg, "seq_len");
  const auto classes = get<std::size_t>(cfg, "classes");
  const auto data = tr::split_dataset(tr::synth_dataset(kind, get<std::size_t>(cfg, "samples"), classes, seed, so),
                                      get<double>(cfg, "test_fraction"), roast::hashing::mix_seed(seed, 1));

  tr::ModelSpec base;
  base.vocab_size = kind == tr::DatasetKind::sparse_tokens ? so.vocab_size : 0;
  base.embed_dim = kind == tr::DatasetKind::sparse_tokens ? get<std::size_t>(cfg, "embed_dim") : so.feature_dim;
  base.hidden_dims = get<std::vector<std::size_t>>(cfg, "hidden");
  base.num_classes = classes;
  base.tiles = {get<std::size_t>(cfg, "chunk"), 32, get<std::size_t>(cfg, "z1"), get<std::size_t>(cfg, "z2")};
  base.keep_dense_bias = get<bool>(cfg, "keep_dense_bias");
  base.init_scale = get<double>(cfg, "init_scale");
  base.deterministic = deterministic;

  tr::TrainConfig tc;
  tc.optimizer.kind = optimizer_from(get<std::string>(cfg, "optimizer"));
  tc.optimizer.learning_rate = get<double>(cfg, "lr");
  tc.epochs = get<std::size_t>(cfg, "epochs");
  tc.batch_size = get<std::size_t>(cfg, "batch");

  auto ratios = get<std::vector<double>>(cfg, "ratio");
  auto seeds = get<std::vector<std::uint64_t>>(cfg, "seeds");
  if (seeds.empty()) seeds = {seed};
  std::vector<std::string> sharing = get<std::vector<std::string>>(cfg, "sharing");
  if (ratios.empty() || sharing.empty()) throw roast::ConfigError("train needs at least one ratio and sharing mode");
  for (double& r : ratios)
    if (r <= 0) r = tr::max_feasible_ratio(base);  // 0 requests the highest feasible ratio

  auto csv_out = open_out(out / "train.csv");
  roast::csv::write_row(csv_out, tr::train_csv_header());
  std::vector<tr::ExperimentRow> rows;
  for (double ratio : ratios)
    for (const auto& sh : sharing) {
      std::vector<double> acc;
      double achieved = 0;
      for (auto s : seeds) {
        tr::ModelSpec spec = base;
        spec.compression_ratio = ratio;
        spec.sharing = sharing_from(sh);
        spec.seed = s;
        auto net = tr::build_model(spec);
        tr::TrainConfig c = tc;
        c.seed = s;
        const auto rep = tr::train_compressed(net, data, c);
        tr::write_train_csv(csv_out, rep, !deterministic, false);
        achieved = net.achieved_ratio();
        acc.push_back(rep.final_test_accuracy());
        rows.push_back({ratio, achieved, sh, std::to_string(s), acc.back(), 0});
        std::cout << "sharing=" << sh << " ratio=" << achieved << " seed=" << s
                  << " final_test_accuracy=" << acc.back() << " first_step_loss=" << rep.first_step_loss << '\n';
      }
      double mean = 0, var = 0;
      for (double a : acc) mean += a / static_cast<double>(acc.size());
      for (double a : acc) var += (a - mean) * (a - mean);
      const double sd = acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0;
      rows.push_back({ratio, achieved, sh, "summary", mean, sd});
    }
  if (get<bool>(cfg, "reference")) {
    for (auto s : seeds) {
      tr::ModelSpec spec = base;
      spec.seed = s;
      tr::DenseMlp ref(spec);
      tr::TrainConfig c = tc;
      c.seed = s;
      auto rep = tr::train(ref, data, c);
      rep.ratio = 1;
      tr::write_train_csv(csv_out, rep, !deterministic, false);
      rows.push_back({1, 1, "dense", std::to_string(s), rep.final_test_accuracy(), 0});
      std::cout << "dense reference seed=" << s << " final_test_accuracy=" << rep.final_test_accuracy() << '\n';
    }
  }
  auto exp = open_out(out / "experiment.csv");
  tr::write_experiment_csv(exp, rows);
  return kExitOk;
}

int cmd_verify(const json& cfg, const fs::path& out) {
  const auto report = roast::verify::run_all(get<bool>(cfg, "quick"), get<std::uint64_t>(cfg, "seed"));
  roast::verify::print(std::cout, report);
  auto f = open_out(out / "verify.csv");
  roast::csv::write_row(f, {"check", "cases", "max_error", "tolerance", "passed"});
  for (const auto& c : report.checks)
    roast::csv::write_row(f, {c.name, roast::csv::fmt(c.cases), roast::csv::fmt(c.max_error),
                              roast::csv::fmt(c.tolerance), c.passed() ? "1" : "0"});
  if (!report.all_passed()) throw VerificationFailed{};
  return kExitOk;
}

int cmd_store(const json& cfg, const fs::path& out) {
  const auto action = get<std::string>(cfg, "action");
  fs::path path = get<std::string>(cfg, "path");
  if (path.empty()) path = out / "store.roast";
  if (action == "save") {
    const auto store = roast::create_store<double>(get<std::size_t>(cfg, "m"), get<double>(cfg, "scale"),
                                                   get<std::uint64_t>(cfg, "seed"));
    roast::save_snapshot(store, path);
    std::cout << "saved m=" << store.size() << " checksum=" << hex(fnv1a(store.values())) << " path=" << path.string()
              << '\n';
  } else if (action == "load") {
    const auto store = roast::load_snapshot<double>(path);
    std::cout << "loaded m=" << store.size() << " scale=" << store.init_scale() << " seed=" << store.master_seed()
              << " checksum=" << hex(fnv1a(store.values())) << '\n';
  } else {
    throw roast::ConfigError("store action must be save or load");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"roast: hashed weight-sharing kernels, estimator studies and training"};
  app.require_subcommand(0, 1);

  Params globals;
  std::string config_path;
  app.add_option("--config", config_path, "JSON config (a manifest.json from an earlier run works)");
  globals.add<std::uint64_t>(&app, "seed", 0, "master seed");
  globals.add<int>(&app, "threads", 0, "worker cap (0 = all cores)");
  globals.add<std::string>(&app, "out", "out", "output directory");
  globals.add<bool>(&app, "deterministic", true, "fixed reduction order and zeroed timing columns in train CSVs");

  std::map<std::string, Params> params;
  std::map<std::string, CLI::App*> subs;
  auto sub = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    s->fallthrough();
    subs[name] = s;
    return s;
  };

  {
    auto* s = sub("bench", "matmul kernel timings");
    auto& p = params["bench"];
    p.add<std::vector<std::size_t>>(s, "dims", {1024, 2048}, "square weight dims");
    p.add<std::vector<std::size_t>>(s, "store_mib", {128}, "store sizes in MiB (f32)");
    p.add<std::vector<std::string>>(s, "kernels", {"dense", "hashednet", "roast"}, "subset of dense,hashednet,roast");
    p.add<std::size_t>(s, "batch", 128, "input rows");
    p.add<std::size_t>(s, "z0", 64, "batch tile");
    p.add<std::size_t>(s, "z1", 32, "weight tile rows");
    p.add<std::size_t>(s, "z2", 32, "weight tile cols");
    p.add<int>(s, "runs", 9, "timed runs");
    p.add<int>(s, "warmup", 2, "discarded runs");
  }
  {
    auto* s = sub("estimate", "inner-product estimator studies");
    auto& p = params["estimate"];
    p.add<std::string>(s, "study", "all", "all, moments, gap or norm");
    p.add<std::size_t>(s, "k", 4, "moments: pieces");
    p.add<std::size_t>(s, "piece_size", 16, "moments: piece length");
    p.add<std::size_t>(s, "m", 16, "moments: memory");
    p.add<std::vector<double>>(s, "fractions", {}, "moments: memory fractions (default equal)");
    p.add<std::size_t>(s, "trials", 100000, "moments: Monte Carlo trials");
    p.add<std::size_t>(s, "fixtures", 1, "moments: random (x, y) fixtures");
    p.add<std::size_t>(s, "gap_k", 8, "gap: pieces");
    p.add<std::size_t>(s, "gap_piece_size", 32, "gap: piece length");
    p.add<std::size_t>(s, "gap_m", 64, "gap: memory");
    p.add<std::size_t>(s, "draws", 10000, "gap: random draws");
    p.add<std::string>(s, "fraction_mode", "random", "gap: equal or random fractions");
    p.add<std::size_t>(s, "sample_trials", 0, "gap: Monte Carlo trials per draw (0 = analytic only)");
    p.add<std::size_t>(s, "norm_n", 256, "norm: vector length");
    p.add<std::size_t>(s, "norm_k", 8, "norm: pieces");
    p.add<std::size_t>(s, "norm_m", 64, "norm: memory");
    p.add<double>(s, "epsilon", 0.5, "norm: relative tolerance");
    p.add<std::size_t>(s, "norm_trials", 100000, "norm: trials");
  }
  {
    auto* s = sub("train", "train compressed models on synthetic data");
    auto& p = params["train"];
    p.add<std::string>(s, "dataset", "clusters", "clusters, moons or sparse_tokens");
    p.add<std::size_t>(s, "samples", 3000, "dataset size");
    p.add<std::size_t>(s, "classes", 2, "number of classes");
    p.add<std::size_t>(s, "feature_dim", 16, "dense input width");
    p.add<double>(s, "separation", 4.0, "clusters: center distance from origin");
    p.add<std::size_t>(s, "vocab_size", 256, "sparse_tokens: vocabulary");
    p.add<std::size_t>(s, "seq_len", 8, "sparse_tokens: sequence length");
    p.add<std::size_t>(s, "embed_dim", 16, "sparse_tokens: embedding width");
    p.add<double>(s, "test_fraction", 0.25, "held-out share");
    p.add<std::vector<std::size_t>>(s, "hidden", {32}, "hidden widths");
    p.add<std::vector<double>>(s, "ratio", {10.0}, "compression ratios (0 = highest feasible)");
    p.add<std::vector<std::string>>(s, "sharing", {"global"}, "global and/or local");
    p.add<std::vector<std::uint64_t>>(s, "seeds", {}, "model seeds (default: --seed)");
    p.add<std::string>(s, "optimizer", "adam", "sgd, adagrad or adam");
    p.add<double>(s, "lr", 0.0, "learning rate (0 = optimizer default)");
    p.add<std::size_t>(s, "epochs", 20, "epochs");
    p.add<std::size_t>(s, "batch", 64, "minibatch size");
    p.add<std::size_t>(s, "chunk", 8, "lookup chunk length");
    p.add<std::size_t>(s, "z1", 8, "matmul tile rows");
    p.add<std::size_t>(s, "z2", 8, "matmul tile cols");
    p.add<double>(s, "init_scale", 1.0, "store init Uniform(-1/C, 1/C)");
    p.add<bool>(s, "keep_dense_bias", false, "keep biases outside the store", true);
    p.add<bool>(s, "reference", false, "also train the uncompressed reference", true);
  }
  {
    auto* s = sub("verify", "gradient and oracle checks");
    auto& p = params["verify"];
    p.add<bool>(s, "quick", false, "reduced case counts", true);
  }
  {
    auto* s = sub("store", "save or load a store snapshot");
    auto& p = params["store"];
    p.add<std::string>(s, "action", "", "save or load");
    p.add<std::string>(s, "path", "", "snapshot path (default <out>/store.roast)");
    p.add<std::size_t>(s, "m", 4096, "save: store size");
    p.add<double>(s, "scale", 1.0, "save: init scale C");
  }
  // `store save|load` positional form.
  std::string store_action;
  subs["store"]->add_option("action_positional", store_action, "save or load");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    json config = json::object();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw roast::IoError("cannot read config " + config_path);
      try {
        config = json::parse(f);
      } catch (const json::parse_error& e) {
        throw roast::ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
      if (!config.is_object()) throw roast::ConfigError("config must be a JSON object");
    }

    std::string command;
    for (const auto& [name, s] : subs)
      if (s->parsed()) command = name;
    if (config.contains("command")) {
      const auto from_cfg = get<std::string>(config, "command");
      if (!command.empty() && command != from_cfg)
        throw roast::ConfigError("config is for '" + from_cfg + "' but '" + command + "' was requested");
      command = from_cfg;
    }
    if (command.empty() || !params.count(command)) throw roast::ConfigError("no command given (bench, estimate, train, verify, store)");

    const Params& p = params.at(command);
    for (const auto& [key, value] : config.items()) {
      (void)value;
      if (key != "command" && !globals.has(key) && !p.has(key))
        throw roast::ConfigError("unknown config key '" + key + "' for command " + command);
    }
    json resolved = json::object();
    resolved["command"] = command;
    globals.resolve_into(resolved, config);
    p.resolve_into(resolved, config);
    if (command == "store" && !store_action.empty()) resolved["action"] = store_action;

    const int threads = get<int>(resolved, "threads");
    if (threads < 0) throw roast::ConfigError("threads must be >= 0");
    if (threads > 0) roast::parallel::set_threads(threads);

    const fs::path out = get<std::string>(resolved, "out");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw roast::IoError("cannot create output directory " + out.string() + ": " + ec.message());
    {
      auto mf = open_out(out / "manifest.json");
      mf << resolved.dump(2) << '\n';
    }

    if (command == "bench") return cmd_bench(resolved, out);
    if (command == "estimate") return cmd_estimate(resolved, out);
    if (command == "train") return cmd_train(resolved, out);
    if (command == "verify") return cmd_verify(resolved, out);
    return cmd_store(resolved, out);
  } catch (const VerificationFailed&) {
    std::cerr << "verification failed\n";
    return kExitVerify;
  } catch (const roast::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const roast::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const roast::TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const roast::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
}
