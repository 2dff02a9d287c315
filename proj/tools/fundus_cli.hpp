#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fundus/training.hpp"

namespace fundus::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline constexpr int kRunConfigSchema = 1;

// Contents of run.json. Relative paths are resolved against the config file's
// directory.
struct RunConfig {
  int schema_version = kRunConfigSchema;
  std::string model;                                // preset name
  std::optional<std::filesystem::path> architecture;  // or an architecture JSON file
  std::filesystem::path manifest;
  std::optional<double> train_ratio;  // metadata carried into the log
  std::optional<std::filesystem::path> output_dir;
  train::TrainConfig train;
};

// Throws ConfigError listing every violation found.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Manifest paths are relative to the manifest's own directory.
std::vector<data::Sample> load_manifest_samples(const std::filesystem::path& manifest_path);

// Entry point shared by the executable and the tests. args excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fundus::cli
