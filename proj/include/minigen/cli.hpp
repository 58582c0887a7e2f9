#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace minigen::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";
inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";

// Config file problem: missing/unknown key, wrong type, bad value, wrong
// schema version. Reported as a usage error before any compute starts.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parsed command-line flags shared by every subcommand. `seed` overrides the
// config's training/generation seed when `has_seed` is set; `fast` switches
// the kernels to the OpenMP backend (excluded from bit-exactness claims).
struct CliOptions {
  std::string out_dir;
  bool force = false;
  bool fast = false;
  bool has_seed = false;
  std::uint64_t seed = 0;
  int merges_override = -1;  // bpe-train --merges
};

// Subcommand bodies. Each validates the config strictly (every key known,
// schema_version matching), checks input paths, runs, writes its artifacts
// into the run directory, and writes manifest.json last. The run directory
// path is returned. All throw on failure; `run` translates exceptions into
// one-line errors and exit codes.
std::string run_bpe_train(const nlohmann::json& config, const CliOptions& opt);
std::string run_synth_data(const nlohmann::json& config, const CliOptions& opt);
std::string run_pretrain(const nlohmann::json& config, const CliOptions& opt);
std::string run_finetune(const nlohmann::json& config, const CliOptions& opt);
std::string run_decode(const nlohmann::json& config, const CliOptions& opt);
std::string run_evaluate(const nlohmann::json& config, const CliOptions& opt);
std::string run_analyze_overlap(const nlohmann::json& config,
                                const CliOptions& opt);
std::string run_sweep(const nlohmann::json& config, const CliOptions& opt);

// Full command line: parse flags, load the config file, dispatch, report.
// Returns the process exit code (0 success, 2 usage/config, 1 runtime).
int run(int argc, const char* const* argv);

// FNV-1a over the raw bytes of a file, as a decimal string; the hash format
// used for every input recorded in a manifest.
std::string file_hash(const std::string& path);

// Strict parse of a JSON config file (must be a JSON object).
nlohmann::json load_config(const std::string& path);

}  // namespace minigen::cli
