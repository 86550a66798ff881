#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tfda {

// Target-domain appearance shift. Components are applied in the order
// color, texture, deform.
struct ShiftSpec {
  double color_shift = 0.0;          // in [0, 1]
  double texture_noise_sigma = 0.0;  // >= 0
  double shape_deform = 0.0;         // in [0, 1]
};

struct SynthConfig {
  int image_size = 32;
  int num_classes = 2;
  int num_source = 160;
  int num_target = 160;
  int num_target_eval = 80;
  // Multiplies lesion radii; the knob for foreground/background balance.
  double lesion_scale = 1.0;
  ShiftSpec shift{0.8, 0.08, 0.3};  // moderate default shift
  std::uint64_t seed = 0;

  // Throws Error(kConfig) naming the offending field.
  void validate() const;
};

// image: float32 [3, H, W] in [0, 1]. mask: int64 [H, W] in [0, K).
struct LabeledExample {
  torch::Tensor image;
  std::optional<torch::Tensor> mask;
};

enum class Split { kSource, kTargetTrain, kTargetEval };

std::string_view split_name(Split split);

struct DomainPairDataset {
  int num_classes = 0;
  int image_size = 0;
  std::vector<LabeledExample> source;        // masks present
  std::vector<LabeledExample> target_train;  // masks absent
  std::vector<LabeledExample> target_eval;   // masks present, never trained on

  const std::vector<LabeledExample>& split(Split which) const;
};

DomainPairDataset synth_generate(const SynthConfig& config);

// Writes PNG rasters plus manifest.json under dir; returns the manifest path.
std::filesystem::path save_dataset(const DomainPairDataset& dataset,
                                   const std::filesystem::path& dir);

// Throws Error(kValidation) on missing files, size mismatches or labels >= K.
DomainPairDataset load_dataset(const std::filesystem::path& manifest);

bool datasets_equal(const DomainPairDataset& a, const DomainPairDataset& b);

// Stacks images into [N, 3, H, W] and masks into [N, H, W].
torch::Tensor stack_images(const std::vector<LabeledExample>& examples);
torch::Tensor stack_masks(const std::vector<LabeledExample>& examples);

// 8-bit quantisation used by the on-disk format.
torch::Tensor quantize_image(const torch::Tensor& image);

}  // namespace tfda
