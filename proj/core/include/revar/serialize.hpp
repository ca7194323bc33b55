#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "revar/experiments.hpp"

namespace revar {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Full-precision decimal rendering (17 significant digits) so CSV diffs are
// bit-stable.
std::string fmt17(double v);

void write_text_file(const std::filesystem::path& path,
                     const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

// FNV-1a 64 over file bytes, hex encoded; used for manifest input digests.
std::string digest_file(const std::filesystem::path& path);
std::string digest_string(const std::string& content);

// Bundle <-> columnar CSV (header x0..x{d-1},y,noise_std,hardness) plus a
// JSON sidecar with GeneratorParams, ScenarioSpec and the seed.
void write_bundle(const std::filesystem::path& dir,
                  const SyntheticBundle& bundle, std::uint64_t seed);
SyntheticBundle read_bundle(const std::filesystem::path& dir);

// Classification split CSV: header x0..,label.
void write_class_batch(const std::filesystem::path& path, const Batch& batch);
Batch read_labeled_csv(const std::filesystem::path& path);  // either format

// JSON checkpoints: layer shapes plus row-major value arrays.
std::string net_to_json(const NetParams& net);
NetParams net_from_json(const std::string& text);
std::string meta_to_json(const MetaNet& meta);
MetaNet meta_from_json(const std::string& text);

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& history);

void write_curve_csv(const std::filesystem::path& path,
                     const RejectionCurve& curve);

std::string metrics_to_json(const MetricsReport& report);

}  // namespace revar
