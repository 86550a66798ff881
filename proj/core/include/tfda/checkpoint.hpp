#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

namespace tfda {

inline constexpr int kCheckpointVersion = 1;

// A checkpoint is a directory holding checkpoint.json plus one raw
// little-endian float32 blob per named array under arrays/.
struct Checkpoint {
  int version = kCheckpointVersion;
  std::string config_hash;
  std::string config_json;  // canonical run configuration
  int alternation = 0;
  double lambda_s = 0.0;
  double lambda_t = 0.0;
  std::map<std::string, torch::Tensor> arrays;
  std::string history_json = "[]";  // metric records up to this alternation
};

void checkpoint_save(const Checkpoint& checkpoint, const std::filesystem::path& dir);

// Throws Error(kValidation) on version mismatch, missing arrays, shape or
// checksum mismatches.
Checkpoint checkpoint_load(const std::filesystem::path& dir);

// Adds every parameter of `module` as "<prefix>/<parameter name>".
void collect_arrays(const std::string& prefix, const torch::nn::Module& module,
                    std::map<std::string, torch::Tensor>& arrays);

// Copies arrays back into `module`; every parameter must be present.
void restore_arrays(const std::string& prefix, torch::nn::Module& module,
                    const std::map<std::string, torch::Tensor>& arrays);

bool has_prefix(const std::map<std::string, torch::Tensor>& arrays, const std::string& prefix);

}  // namespace tfda
