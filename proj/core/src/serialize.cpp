#include "revar/serialize.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace revar {

using nlohmann::json;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("short write to " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string digest_string(const std::string& content) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : content) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string digest_file(const std::filesystem::path& path) {
  return digest_string(read_text_file(path));
}

namespace {

std::string set_to_csv(const LabeledSet& set) {
  std::ostringstream out;
  const std::size_t d = set.x_full.cols;
  for (std::size_t j = 0; j < d; ++j) out << "x" << j << ",";
  out << "y,noise_std,hardness\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << fmt17(set.x_full.at(i, j)) << ",";
    out << fmt17(set.y[i]) << "," << fmt17(set.noise_std[i]) << ","
        << fmt17(set.hardness[i]) << "\n";
  }
  return out.str();
}

LabeledSet set_from_csv(const std::string& text, const ScenarioSpec& spec,
                        const GeneratorParams& params) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty split CSV");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  const std::size_t d = params.dims.total();
  const std::size_t d_obs = spec.observe_latent ? d : params.dims.core;
  LabeledSet set;
  set.x_full = Matrix(rows.size(), d);
  set.x_observed = Matrix(rows.size(), d_obs);
  set.y.resize(rows.size());
  set.noise_std.resize(rows.size());
  set.hardness.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d + 3) throw IoError("bad split CSV row width");
    for (std::size_t j = 0; j < d; ++j) set.x_full.at(i, j) = rows[i][j];
    for (std::size_t j = 0; j < d_obs; ++j) set.x_observed.at(i, j) = rows[i][j];
    set.y[i] = rows[i][d];
    set.noise_std[i] = rows[i][d + 1];
    set.hardness[i] = rows[i][d + 2];
  }
  return set;
}

json params_to_json(const GeneratorParams& p) {
  return json{{"core_dim", p.dims.core},
              {"latent_dim", p.dims.latent},
              {"w_core", p.w_core},
              {"w_latent", p.w_latent},
              {"g_noise", p.g_noise},
              {"c", p.c},
              {"s", p.s},
              {"mu", p.mu},
              {"sigma_diag", p.sigma_diag},
              {"shift_mu", p.shift_mu},
              {"shift_sigma_diag", p.shift_sigma_diag}};
}

GeneratorParams params_from_json(const json& j) {
  GeneratorParams p;
  p.dims.core = j.at("core_dim").get<std::size_t>();
  p.dims.latent = j.at("latent_dim").get<std::size_t>();
  p.w_core = j.at("w_core").get<std::vector<double>>();
  p.w_latent = j.at("w_latent").get<std::vector<double>>();
  p.g_noise = j.at("g_noise").get<std::vector<double>>();
  p.c = j.at("c").get<double>();
  p.s = j.at("s").get<double>();
  p.mu = j.at("mu").get<std::vector<double>>();
  p.sigma_diag = j.at("sigma_diag").get<std::vector<double>>();
  p.shift_mu = j.at("shift_mu").get<std::vector<double>>();
  p.shift_sigma_diag = j.at("shift_sigma_diag").get<std::vector<double>>();
  return p;
}

json spec_to_json(const ScenarioSpec& s) {
  return json{{"id", to_string(s.id)},
              {"c", s.c},
              {"s", s.s},
              {"g_active", s.g_active},
              {"observe_latent", s.observe_latent},
              {"latent_shift_only", s.latent_shift_only},
              {"w_latent_zero", s.w_latent_zero}};
}

ScenarioSpec spec_from_json(const json& j) {
  ScenarioSpec s;
  s.id = scenario_from_string(j.at("id").get<std::string>());
  s.c = j.at("c").get<double>();
  s.s = j.at("s").get<double>();
  s.g_active = j.at("g_active").get<bool>();
  s.observe_latent = j.at("observe_latent").get<bool>();
  s.latent_shift_only = j.at("latent_shift_only").get<bool>();
  s.w_latent_zero = j.at("w_latent_zero").get<bool>();
  return s;
}

}  // namespace

void write_bundle(const std::filesystem::path& dir,
                  const SyntheticBundle& bundle, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "train.csv", set_to_csv(bundle.train));
  write_text_file(dir / "val.csv", set_to_csv(bundle.val));
  write_text_file(dir / "test.csv", set_to_csv(bundle.test));
  json side{{"params", params_to_json(bundle.params)},
            {"scenario", spec_to_json(bundle.spec)},
            {"seed", seed}};
  write_text_file(dir / "params.json", side.dump(2) + "\n");
}

SyntheticBundle read_bundle(const std::filesystem::path& dir) {
  const json side = json::parse(read_text_file(dir / "params.json"));
  SyntheticBundle b;
  b.params = params_from_json(side.at("params"));
  b.spec = spec_from_json(side.at("scenario"));
  b.train = set_from_csv(read_text_file(dir / "train.csv"), b.spec, b.params);
  b.val = set_from_csv(read_text_file(dir / "val.csv"), b.spec, b.params);
  b.test = set_from_csv(read_text_file(dir / "test.csv"), b.spec, b.params);
  return b;
}

void write_class_batch(const std::filesystem::path& path, const Batch& batch) {
  std::ostringstream out;
  for (std::size_t j = 0; j < batch.x.cols; ++j) out << "x" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < batch.x.cols; ++j)
      out << fmt17(batch.x.at(i, j)) << ",";
    out << batch.y_class[i] << "\n";
  }
  write_text_file(path, out.str());
}

Batch read_labeled_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string header;
  if (!std::getline(in, header)) throw IoError("empty CSV: " + path.string());
  // Count x columns and detect the target column name.
  std::vector<std::string> cols;
  {
    std::istringstream hs(header);
    std::string cell;
    while (std::getline(hs, cell, ',')) cols.push_back(cell);
  }
  std::size_t d = 0;
  while (d < cols.size() && cols[d].starts_with("x")) ++d;
  if (d == 0 || d == cols.size())
    throw IoError("CSV needs x columns and a target: " + path.string());
  const bool classification = cols[d] == "label";

  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() < d + 1) throw IoError("short CSV row in " + path.string());
    rows.push_back(std::move(row));
  }
  Batch b;
  b.x = Matrix(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) b.x.at(i, j) = rows[i][j];
  if (classification) {
    b.y_class.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      b.y_class[i] = static_cast<int>(rows[i][d]);
  } else {
    b.y_real.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) b.y_real[i] = rows[i][d];
  }
  return b;
}

namespace {

json net_to_json_obj(const NetParams& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l)
    layers.push_back(json{{"rows", net.weights[l].rows},
                          {"cols", net.weights[l].cols},
                          {"weights", net.weights[l].data},
                          {"bias", net.biases[l]}});
  return json{{"layers", layers},
              {"output_kind",
               net.output_kind == OutputKind::softmax ? "softmax" : "linear"},
              {"dropout_rate", net.dropout_rate}};
}

NetParams net_from_json_obj(const json& j) {
  NetParams net;
  net.output_kind = j.at("output_kind").get<std::string>() == "softmax"
                        ? OutputKind::softmax
                        : OutputKind::linear;
  net.dropout_rate = j.at("dropout_rate").get<double>();
  for (const auto& lj : j.at("layers")) {
    Matrix w(lj.at("rows").get<std::size_t>(), lj.at("cols").get<std::size_t>());
    w.data = lj.at("weights").get<std::vector<double>>();
    if (w.data.size() != w.rows * w.cols)
      throw IoError("checkpoint layer size mismatch");
    net.weights.push_back(std::move(w));
    net.biases.push_back(lj.at("bias").get<std::vector<double>>());
  }
  return net;
}

}  // namespace

std::string net_to_json(const NetParams& net) {
  return net_to_json_obj(net).dump(2) + "\n";
}

NetParams net_from_json(const std::string& text) {
  return net_from_json_obj(json::parse(text));
}

std::string meta_to_json(const MetaNet& meta) {
  json j = net_to_json_obj(meta.net);
  j["conditioning"] = meta.conditioning == MetaConditioning::instance
                          ? "instance"
                          : "loss_scalar";
  return j.dump(2) + "\n";
}

MetaNet meta_from_json(const std::string& text) {
  const json j = json::parse(text);
  MetaNet m;
  m.net = net_from_json_obj(j);
  m.conditioning = j.at("conditioning").get<std::string>() == "instance"
                       ? MetaConditioning::instance
                       : MetaConditioning::loss_scalar;
  return m;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,meta_loss,weight_mean,weight_sd\n";
  for (const auto& r : history)
    out << r.epoch << "," << fmt17(r.train_loss) << "," << fmt17(r.meta_loss)
        << "," << fmt17(r.weight_mean) << "," << fmt17(r.weight_sd) << "\n";
  write_text_file(path, out.str());
}

void write_curve_csv(const std::filesystem::path& path,
                     const RejectionCurve& curve) {
  std::ostringstream out;
  out << "coverage,accuracy\n";
  for (std::size_t i = 0; i < curve.coverages.size(); ++i)
    out << fmt17(curve.coverages[i]) << "," << fmt17(curve.accuracies[i])
        << "\n";
  write_text_file(path, out.str());
}

std::string metrics_to_json(const MetricsReport& report) {
  json sel = json::object();
  for (const auto& [cov, v] : report.selective_ece) sel[fmt17(cov)] = v;
  json j{{"auarc", report.auarc},
         {"ece", report.ece},
         {"selective_ece", sel},
         {"r2_by_scenario", report.r2_by_scenario},
         {"spearman_by_scenario", report.spearman_by_scenario},
         {"seed", report.seed},
         {"config_digest", report.config_digest}};
  return j.dump(2) + "\n";
}

}  // namespace revar
