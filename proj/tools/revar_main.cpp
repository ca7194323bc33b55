// revar: synthetic-study driver for instance-conditional learned reweighting.
//
// Subcommands: synth | train | eval | table1 | sweep. Every command takes a
// strict JSON config, writes its artifacts plus a run manifest, and is fully
// deterministic given the manifest.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "revar/experiments.hpp"
#include "revar/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace revar;

namespace {

constexpr const char* kVersion = "0.1.0";

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown config field '" + key + "' in " + where);
  }
}

json load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  return j;
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid config field '" + key + "'");
  }
}

TrainConfig parse_train_config(const json& j, const std::string& where) {
  reject_unknown_keys(
      j,
      {"method", "lr_classifier", "lr_meta", "momentum", "weight_decay",
       "meta_weight_decay", "epochs", "warm_start_epochs", "meta_interval",
       "batch_train",
       "batch_val", "k_samples", "dropout_rate", "reg_weight", "seed",
       "classifier_hidden", "meta_hidden", "mbr_temperature", "resume_dir"},
      where);
  TrainConfig cfg;
  if (j.contains("method"))
    cfg.method = method_from_string(j.at("method").get<std::string>());
  cfg.lr_classifier = get_or(j, "lr_classifier", cfg.lr_classifier);
  cfg.lr_meta = get_or(j, "lr_meta", cfg.lr_meta);
  cfg.momentum = get_or(j, "momentum", cfg.momentum);
  cfg.weight_decay = get_or(j, "weight_decay", cfg.weight_decay);
  cfg.meta_weight_decay =
      get_or(j, "meta_weight_decay", cfg.meta_weight_decay);
  cfg.epochs = get_or(j, "epochs", cfg.epochs);
  cfg.warm_start_epochs = get_or(j, "warm_start_epochs", cfg.warm_start_epochs);
  cfg.meta_interval = get_or(j, "meta_interval", cfg.meta_interval);
  cfg.batch_train = get_or(j, "batch_train", cfg.batch_train);
  cfg.batch_val = get_or(j, "batch_val", cfg.batch_val);
  cfg.mc.k_samples = get_or(j, "k_samples", cfg.mc.k_samples);
  cfg.mc.dropout_rate = get_or(j, "dropout_rate", cfg.mc.dropout_rate);
  cfg.mc.reg_weight = get_or(j, "reg_weight", cfg.mc.reg_weight);
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.classifier_hidden =
      get_or(j, "classifier_hidden", cfg.classifier_hidden);
  cfg.meta_hidden = get_or(j, "meta_hidden", cfg.meta_hidden);
  cfg.mbr_temperature = get_or(j, "mbr_temperature", cfg.mbr_temperature);
  return cfg;
}

class ManifestWriter {
 public:
  ManifestWriter(std::string command, json config, std::uint64_t seed)
      : command_(std::move(command)),
        config_(std::move(config)),
        seed_(seed),
        start_(std::chrono::steady_clock::now()) {}

  void add_input(const fs::path& path) {
    inputs_[path.string()] = digest_file(path);
  }
  void add_output(const fs::path& path) { outputs_.push_back(path.string()); }

  void write(const fs::path& out_dir) {
    const auto elapsed = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start_)
                             .count();
    std::sort(outputs_.begin(), outputs_.end());
    json m{{"command", command_}, {"config", config_},
           {"seed", seed_},       {"version", kVersion},
           {"inputs", inputs_},   {"outputs", outputs_},
           {"duration_seconds", elapsed}};
    write_text_file(out_dir / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  json config_;
  std::uint64_t seed_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

std::uint64_t effective_seed(const json& cfg, std::optional<std::uint64_t> cli) {
  if (cli) return *cli;
  return get_or<std::uint64_t>(cfg, "seed", 0);
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_flag) {
  json cfg = load_config(config_path);
  reject_unknown_keys(cfg,
                      {"scenario", "task", "n_train", "n_val", "n_test",
                       "seed", "s", "core_dim", "latent_dim", "n_classes",
                       "max_flip", "mean_flip"},
                      "synth config");
  const std::uint64_t seed = effective_seed(cfg, seed_flag);
  const auto n_train = get_or<std::size_t>(cfg, "n_train", 2000);
  const auto n_val = get_or<std::size_t>(cfg, "n_val", 500);
  const auto n_test = get_or<std::size_t>(cfg, "n_test", 1000);
  const std::string task = get_or<std::string>(cfg, "task", "regression");

  fs::create_directories(out_dir);
  ManifestWriter manifest("synth", cfg, seed);
  manifest.add_input(config_path);

  if (task == "flip3") {
    FlipTaskConfig fc;
    fc.seed = seed;
    fc.n_train = n_train;
    fc.n_val = n_val;
    fc.n_test = n_test;
    fc.n_classes = get_or(cfg, "n_classes", fc.n_classes);
    fc.max_flip = get_or(cfg, "max_flip", fc.max_flip);
    fc.mean_flip = get_or(cfg, "mean_flip", fc.mean_flip);
    const FlipTask t = make_flip_task(fc);
    write_class_batch(fs::path(out_dir) / "train.csv", t.splits.train);
    write_class_batch(fs::path(out_dir) / "val.csv", t.splits.val);
    write_class_batch(fs::path(out_dir) / "test.csv", t.test);
    for (const char* f : {"train.csv", "val.csv", "test.csv"})
      manifest.add_output(fs::path(out_dir) / f);
    manifest.write(out_dir);
    return 0;
  }
  if (task != "regression")
    throw ConfigError("invalid config field 'task' (regression or flip3)");

  if (!cfg.contains("scenario"))
    throw ConfigError("missing config field 'scenario'");
  Scenario sc;
  try {
    sc = scenario_from_string(cfg.at("scenario").get<std::string>());
  } catch (const std::exception&) {
    throw ConfigError("invalid config field 'scenario'");
  }
  const double s_override = get_or(cfg, "s", -1.0);
  const ScenarioSpec spec = ScenarioSpec::standard(sc, s_override);
  Dims dims;
  dims.core = get_or<std::size_t>(cfg, "core_dim", dims.core);
  dims.latent = get_or<std::size_t>(cfg, "latent_dim", dims.latent);

  Rng rng(seed, 0x53594E54u);
  const GeneratorParams params = make_world(spec, dims, rng);
  const SyntheticBundle bundle =
      generate_scenario(spec, params, n_train, n_val, n_test, rng);
  write_bundle(out_dir, bundle, seed);
  for (const char* f : {"train.csv", "val.csv", "test.csv", "params.json"})
    manifest.add_output(fs::path(out_dir) / f);
  manifest.write(out_dir);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir,
              std::optional<std::uint64_t> seed_flag) {
  json cfg = load_config(config_path);
  TrainConfig tc = parse_train_config(cfg, "train config");
  if (seed_flag) tc.seed = *seed_flag;

  fs::create_directories(out_dir);
  ManifestWriter manifest("train", cfg, tc.seed);
  manifest.add_input(config_path);

  DataSplits splits;
  const fs::path data(data_dir);
  if (fs::exists(data / "params.json")) {
    const SyntheticBundle bundle = read_bundle(data);
    splits = splits_from_bundle(bundle);
    const Standardizer st = Standardizer::fit(splits.train);
    st.apply(splits.train);
    st.apply(splits.val);
    st.apply_inputs(splits.unlabeled);
    manifest.add_input(data / "params.json");
  } else {
    if (!fs::exists(data / "train.csv") || !fs::exists(data / "val.csv"))
      throw IoError("data dir lacks train.csv/val.csv: " + data_dir);
    splits.train = read_labeled_csv(data / "train.csv");
    splits.val = read_labeled_csv(data / "val.csv");
    const Standardizer st = Standardizer::fit(splits.train);
    st.apply(splits.train);
    st.apply(splits.val);
  }
  manifest.add_input(data / "train.csv");
  manifest.add_input(data / "val.csv");

  TrainedPair init;
  const TrainedPair* init_ptr = nullptr;
  if (cfg.contains("resume_dir")) {
    const fs::path resume(cfg.at("resume_dir").get<std::string>());
    init.classifier = net_from_json(read_text_file(resume / "classifier.json"));
    init.meta = meta_from_json(read_text_file(resume / "metanet.json"));
    init_ptr = &init;
    manifest.add_input(resume / "classifier.json");
    manifest.add_input(resume / "metanet.json");
  }

  const TrainedPair pair = train(splits, tc, init_ptr);
  write_text_file(fs::path(out_dir) / "classifier.json",
                  net_to_json(pair.classifier));
  write_text_file(fs::path(out_dir) / "metanet.json", meta_to_json(pair.meta));
  write_history_csv(fs::path(out_dir) / "history.csv", pair.history);
  for (const char* f : {"classifier.json", "metanet.json", "history.csv"})
    manifest.add_output(fs::path(out_dir) / f);
  manifest.write(out_dir);
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_dir,
             const std::string& data_dir, const std::string& out_dir,
             std::optional<std::uint64_t> seed_flag) {
  json cfg = load_config(config_path);
  reject_unknown_keys(
      cfg, {"score", "n_bins", "k_samples", "dropout_rate", "seed"},
      "eval config");
  if (!cfg.contains("score")) throw ConfigError("missing config field 'score'");
  const std::string score = cfg.at("score").get<std::string>();
  const int n_bins = get_or(cfg, "n_bins", 15);
  McConfig mc;
  mc.k_samples = get_or(cfg, "k_samples", mc.k_samples);
  mc.dropout_rate = get_or(cfg, "dropout_rate", mc.dropout_rate);
  const std::uint64_t seed = effective_seed(cfg, seed_flag);

  fs::create_directories(out_dir);
  ManifestWriter manifest("eval", cfg, seed);
  manifest.add_input(config_path);

  const fs::path ckpt(checkpoint_dir);
  const NetParams classifier =
      net_from_json(read_text_file(ckpt / "classifier.json"));
  manifest.add_input(ckpt / "classifier.json");
  std::optional<MetaNet> meta;
  if (fs::exists(ckpt / "metanet.json")) {
    meta = meta_from_json(read_text_file(ckpt / "metanet.json"));
    manifest.add_input(ckpt / "metanet.json");
  }

  const fs::path test_csv = fs::path(data_dir) / "test.csv";
  const Batch test = read_labeled_csv(test_csv);
  manifest.add_input(test_csv);
  if (!test.is_classification())
    throw ConfigError("eval needs classification data (label column)");
  if (classifier.output_kind != OutputKind::softmax)
    throw ConfigError("score '" + score + "' unsupported: regressor checkpoint");
  if (score == "g" &&
      (!meta || meta->conditioning != MetaConditioning::instance ||
       meta->input_dim() != test.x.cols))
    throw ConfigError(
        "score 'g' needs an instance-conditioned metanet.json checkpoint");
  if (score != "g" && score != "sr" && score != "entropy" && score != "mcd")
    throw ConfigError("invalid config field 'score'");

  const std::size_t n = test.size();
  std::vector<double> uncertainty(n), confidence(n);
  std::vector<std::uint8_t> correct(n);
  Rng rng(seed, 0x4D4344u);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = test.x.row(i);
    const auto p = forward(classifier, x);
    const auto it = std::max_element(p.begin(), p.end());
    confidence[i] = *it;
    correct[i] =
        static_cast<int>(it - p.begin()) == test.y_class[i] ? 1 : 0;
    if (score == "g") {
      uncertainty[i] = 1.0 - weight_of(*meta, x);
    } else if (score == "sr") {
      uncertainty[i] = 1.0 - *it;
    } else if (score == "entropy") {
      double h = 0.0;
      for (double pv : p)
        if (pv > 0.0) h -= pv * std::log(pv);
      uncertainty[i] = h;
    } else {
      uncertainty[i] = mcd_score(classifier, x, mc, rng);
    }
  }

  const auto grid = default_coverage_grid();
  const RejectionCurve curve =
      rejection_curve(uncertainty, correct, grid, score);
  MetricsReport report;
  report.auarc = auarc(curve);
  report.ece = ece(confidence, correct, n_bins);
  for (double cov : {0.5, 0.8, 0.9, 1.0})
    report.selective_ece[cov] =
        selective_ece(uncertainty, confidence, correct, cov, n_bins);
  report.seed = seed;
  report.config_digest = digest_string(cfg.dump());

  write_curve_csv(fs::path(out_dir) / "curve.csv", curve);
  write_text_file(fs::path(out_dir) / "metrics.json", metrics_to_json(report));
  manifest.add_output(fs::path(out_dir) / "curve.csv");
  manifest.add_output(fs::path(out_dir) / "metrics.json");
  manifest.write(out_dir);
  return 0;
}

int cmd_table1(const std::string& config_path, const std::string& out_dir,
               std::optional<std::uint64_t> seed_flag) {
  json cfg = load_config(config_path);
  reject_unknown_keys(cfg,
                      {"seeds", "n_train", "n_val", "n_test", "n_worlds",
                       "n_train_world", "n_val_world", "epochs_world", "train"},
                      "table1 config");
  Table1Config tcfg;
  tcfg.seeds = get_or(cfg, "seeds", std::vector<std::uint64_t>{1});
  if (seed_flag) tcfg.seeds = {*seed_flag};
  if (tcfg.seeds.empty()) throw ConfigError("invalid config field 'seeds'");
  tcfg.n_train = get_or(cfg, "n_train", tcfg.n_train);
  tcfg.n_val = get_or(cfg, "n_val", tcfg.n_val);
  tcfg.n_test = get_or(cfg, "n_test", tcfg.n_test);
  tcfg.n_worlds = get_or(cfg, "n_worlds", tcfg.n_worlds);
  tcfg.n_train_world = get_or(cfg, "n_train_world", tcfg.n_train_world);
  tcfg.n_val_world = get_or(cfg, "n_val_world", tcfg.n_val_world);
  tcfg.epochs_world = get_or(cfg, "epochs_world", tcfg.epochs_world);
  if (cfg.contains("train"))
    tcfg.base = parse_train_config(cfg.at("train"), "table1.train");

  fs::create_directories(out_dir);
  ManifestWriter manifest("table1", cfg, tcfg.seeds.front());
  manifest.add_input(config_path);

  const std::vector<Table1Row> rows = run_table1(tcfg);

  std::ostringstream out;
  out << "scenario,seed,r2_mwn,r2_ibr,r2_revar,spearman_revar,cv_revar,"
         "ordering_ok,ref_mwn,ref_ibr,ref_revar\n";
  auto emit = [&](const std::string& sc, const std::string& seed,
                  double mwn, double ibr, double rv, double sp, double cv,
                  bool ord, Table1Reference ref) {
    out << sc << "," << seed << "," << fmt17(mwn) << "," << fmt17(ibr) << ","
        << fmt17(rv) << "," << fmt17(sp) << "," << fmt17(cv) << ","
        << (ord ? 1 : 0) << "," << fmt17(ref.mwn) << "," << fmt17(ref.ibr)
        << "," << fmt17(ref.revar) << "\n";
  };
  for (const auto& r : rows)
    emit(to_string(r.scenario), std::to_string(r.seed), r.r2_mwn, r.r2_ibr,
         r.r2_revar, r.spearman_revar, r.cv_revar, r.ordering_ok,
         table1_reference(r.scenario));
  // Per-scenario means across seeds.
  for (Scenario sc : {Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4,
                      Scenario::S5}) {
    double mwn = 0, ibr = 0, rv = 0, sp = 0, cv = 0;
    int n = 0, ord = 0;
    for (const auto& r : rows)
      if (r.scenario == sc) {
        mwn += r.r2_mwn;
        ibr += r.r2_ibr;
        rv += r.r2_revar;
        sp += r.spearman_revar;
        cv += r.cv_revar;
        ord += r.ordering_ok ? 1 : 0;
        ++n;
      }
    emit(to_string(sc), "mean", mwn / n, ibr / n, rv / n, sp / n, cv / n,
         ord * 2 > n, table1_reference(sc));
  }
  write_text_file(fs::path(out_dir) / "table1.csv", out.str());
  manifest.add_output(fs::path(out_dir) / "table1.csv");
  manifest.write(out_dir);
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_flag) {
  json cfg = load_config(config_path);
  reject_unknown_keys(
      cfg, {"scenario", "s_values", "seed", "n_train", "n_val", "n_test",
            "train"},
      "sweep config");
  if (!cfg.contains("scenario"))
    throw ConfigError("missing config field 'scenario'");
  const Scenario sc =
      scenario_from_string(cfg.at("scenario").get<std::string>());
  const auto s_values =
      get_or(cfg, "s_values", std::vector<double>{5.0, 25.0, 50.0});
  const auto n_train = get_or<std::size_t>(cfg, "n_train", 2000);
  const auto n_val = get_or<std::size_t>(cfg, "n_val", 500);
  const auto n_test = get_or<std::size_t>(cfg, "n_test", 500);
  TrainConfig tc;
  if (cfg.contains("train"))
    tc = parse_train_config(cfg.at("train"), "sweep.train");
  tc.seed = effective_seed(cfg, seed_flag);
  tc.method = Method::revar;

  fs::create_directories(out_dir);
  ManifestWriter manifest("sweep", cfg, tc.seed);
  manifest.add_input(config_path);

  const auto points = shift_sweep(sc, s_values, tc, n_train, n_val, n_test);
  std::ostringstream out;
  out << "s,lambda1,lambda2,hardness_share\n";
  for (const auto& p : points)
    out << fmt17(p.s) << "," << fmt17(p.lambda1) << "," << fmt17(p.lambda2)
        << "," << fmt17(p.hardness_share) << "\n";
  write_text_file(fs::path(out_dir) / "sweep.csv", out.str());
  manifest.add_output(fs::path(out_dir) / "sweep.csv");
  manifest.write(out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-conditional learned reweighting toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, checkpoint_dir;
  std::optional<std::uint64_t> seed_flag;

  auto add_common = [&](CLI::App* sub, bool needs_data, bool needs_ckpt) {
    sub->add_option("--config", config_path, "JSON config path")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    if (needs_data)
      sub->add_option("--data", data_dir, "data directory")->required();
    if (needs_ckpt)
      sub->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")
          ->required();
    sub->add_option("--seed", seed_flag, "seed override");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic bundle");
  add_common(synth, false, false);
  CLI::App* train_cmd = app.add_subcommand("train", "train a method");
  add_common(train_cmd, true, false);
  CLI::App* eval_cmd = app.add_subcommand("eval", "selective metrics");
  add_common(eval_cmd, true, true);
  CLI::App* table1 = app.add_subcommand("table1", "scenario R^2 table");
  add_common(table1, false, false);
  CLI::App* sweep = app.add_subcommand("sweep", "shift magnitude sweep");
  add_common(sweep, false, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(config_path, out_dir, seed_flag);
    if (train_cmd->parsed())
      return cmd_train(config_path, data_dir, out_dir, seed_flag);
    if (eval_cmd->parsed())
      return cmd_eval(config_path, checkpoint_dir, data_dir, out_dir,
                      seed_flag);
    if (table1->parsed()) return cmd_table1(config_path, out_dir, seed_flag);
    if (sweep->parsed()) return cmd_sweep(config_path, out_dir, seed_flag);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParamError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
