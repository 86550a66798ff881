#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tfda/datasets.hpp"
#include "tfda/feature_tf.hpp"
#include "tfda/networks.hpp"
#include "tfda/ra2b.hpp"
#include "tfda/translation.hpp"

namespace tfda {

struct OrchestratorConfig {
  int alternation_count = 3;
  // Source-only segmenter trained as the k = 0 reference; 0 disables it.
  int baseline_epochs = 40;
  bool reinit_discriminators = false;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  double holdout_fraction = 0.3;
  int gap_seeds = 3;
  int gap_iterations = 300;
};

struct RunConfig {
  SynthConfig dataset;
  // Dataset manifest; empty means "generate from `dataset` into <out>/data".
  std::string manifest;
  NetworkSpec networks;
  AttentionNorm attention_norm = AttentionNorm::kColumn;
  TdHyper td;
  TfHyper tf;
  OrchestratorConfig orchestrator;
  EvalConfig eval;

  void validate() const;
};

// One documented configuration key, used for --help and the docs.
struct ConfigKeyInfo {
  std::string section;
  std::string name;
  std::string default_value;
  std::string provenance;
  std::string description;
};

std::vector<ConfigKeyInfo> config_keys();

// Strict JSON parsing: unknown sections or keys raise Error(kConfig).
// Missing keys keep their defaults.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical serialisation listing every key.
std::string serialize_config(const RunConfig& config);

// Stable hex digest of the canonical serialisation.
std::string config_hash(const RunConfig& config);

}  // namespace tfda
