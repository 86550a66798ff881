#pragma once

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include "tfda/ra2b.hpp"

namespace tfda {

struct NetworkSpec {
  int base_channels = 8;
  int depth = 2;  // number of stride-2 encoder stages
  int num_classes = 2;
  int latent_channels = 8;
  int ra2b_count = 16;
  int noise_channels = 4;

  void validate() const;

  // Channel width after encoder stage `stage` (0 is the full-resolution stem).
  int64_t channels_at(int stage) const;
  int64_t low_channels() const { return channels_at(1); }
  int64_t high_channels() const { return channels_at(depth); }
  // Spatial size of the low/high feature taps for a square input.
  int64_t low_size(int64_t image_size) const { return image_size / 2; }
  int64_t high_size(int64_t image_size) const { return image_size >> depth; }
};

struct SegmenterOutput {
  torch::Tensor logits;  // [B, K, H, W]
  torch::Tensor low;     // [B, low_channels, H/2, W/2]
  torch::Tensor high;    // [B, high_channels, H/2^depth, W/2^depth]
};

class SegmenterImpl : public torch::nn::Module {
 public:
  explicit SegmenterImpl(const NetworkSpec& spec);
  SegmenterOutput forward(const torch::Tensor& images);

 private:
  NetworkSpec spec_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> down_;
  torch::nn::Sequential context_{nullptr};
  std::vector<torch::nn::Sequential> up_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Segmenter);

struct TranslatorOutput {
  torch::Tensor image;    // [B, 3, H, W] in (0, 1)
  torch::Tensor mu;       // [B, latent, h, w]
  torch::Tensor log_var;  // [B, latent, h, w]
};

// Image-to-image translator with a diagonal-Gaussian bottleneck on its last
// encoder block. Samples z = mu + sigma * eps while training, uses mu in eval.
class TranslatorImpl : public torch::nn::Module {
 public:
  explicit TranslatorImpl(const NetworkSpec& spec);
  TranslatorOutput forward(const torch::Tensor& images);

 private:
  NetworkSpec spec_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> down_;
  torch::nn::Sequential residual_{nullptr};
  torch::nn::Conv2d mu_head_{nullptr};
  torch::nn::Conv2d log_var_head_{nullptr};
  torch::nn::Sequential from_latent_{nullptr};
  std::vector<torch::nn::Sequential> up_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(Translator);

enum class DiscriminatorKind { kImage, kFeature };

// Five fully convolutional layers with widths {16, 32, 64, 64, 1}, leaky ReLU
// (slope 0.2) between layers and a sigmoid on the last. Output [B, 1, h', w'].
class DiscriminatorImpl : public torch::nn::Module {
 public:
  static constexpr std::array<int64_t, 5> kWidths{16, 32, 64, 64, 1};

  DiscriminatorImpl(DiscriminatorKind kind, int64_t in_channels);
  torch::Tensor forward(const torch::Tensor& input);

  DiscriminatorKind kind() const { return kind_; }
  const std::vector<torch::nn::Conv2d>& layers() const { return layers_; }

 private:
  DiscriminatorKind kind_;
  std::vector<torch::nn::Conv2d> layers_;
};
TORCH_MODULE(Discriminator);

// Feature augmentor: encodes the segmenter's low and high taps after adding
// projected Gaussian noise, then refines them with a stack of RA²B blocks.
// Output matches the high tap's shape.
class AugmentorImpl : public torch::nn::Module {
 public:
  AugmentorImpl(const NetworkSpec& spec, int64_t image_size,
                AttentionNorm norm = AttentionNorm::kColumn);

  // noise: [B, noise_channels, H/2, W/2]; weight: optional [B, 1, h, w]
  // residual transferability weight applied inside every RA²B block.
  torch::Tensor forward(const torch::Tensor& low, const torch::Tensor& high,
                        const torch::Tensor& noise,
                        const std::optional<torch::Tensor>& weight = std::nullopt);

  // Fusion and output convolutions only: no noise and no RA²B refinement.
  torch::Tensor plain_path(const torch::Tensor& low, const torch::Tensor& high);

  std::vector<int64_t> noise_shape(int64_t batch) const;
  const std::vector<Ra2bBlock>& blocks() const { return blocks_; }
  torch::nn::Conv2d& noise_to_low() { return noise_low_; }
  torch::nn::Conv2d& noise_to_high() { return noise_high_; }

 private:
  torch::Tensor encode(const torch::Tensor& low, const torch::Tensor& high);

  NetworkSpec spec_;
  int64_t image_size_;
  int64_t pool_factor_;
  torch::nn::Conv2d noise_low_{nullptr};
  torch::nn::Conv2d noise_high_{nullptr};
  torch::nn::Conv2d down_{nullptr};
  torch::nn::Conv2d fuse_{nullptr};
  std::vector<Ra2bBlock> blocks_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(Augmentor);

Segmenter build_segmenter(const NetworkSpec& spec);
Translator build_translator(const NetworkSpec& spec);
Discriminator build_discriminator(const NetworkSpec& spec, DiscriminatorKind kind);
Augmentor build_augmentor(const NetworkSpec& spec, int64_t image_size);

int64_t parameter_count(const torch::nn::Module& module);

// Copies every parameter of `src` into `dst` (same architecture).
void copy_parameters(const torch::nn::Module& src, torch::nn::Module& dst);

// Toggles requires_grad on every parameter.
void set_trainable(torch::nn::Module& module, bool trainable);

}  // namespace tfda
