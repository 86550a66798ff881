#pragma once

#include <torch/torch.h>

#include <string>

namespace tfda {

// Clamp applied to discriminator probabilities before taking logs.
inline constexpr double kProbEpsilon = 1e-6;

// Per-location transferability score P in [0, 1], shape [B, 1, h, w]. Always
// detached from the discriminator that produced it. `provenance` records
// which discriminator snapshot the map came from.
struct TransferabilityMap {
  torch::Tensor p;
  std::string provenance;
};

// Bernoulli entropy in bits of clamp(p, eps, 1 - eps).
torch::Tensor binary_entropy(const torch::Tensor& p);

// P = 1 - H(d_out).
TransferabilityMap transferability(const torch::Tensor& d_out,
                                   std::string provenance = {});

// 1 + P, treated as a constant signal.
torch::Tensor residual_weight(const TransferabilityMap& map);

// Bilinear resampling (half-pixel centres, edge clamp) to [B, 1, h, w].
TransferabilityMap resize_to(const TransferabilityMap& map, int64_t height,
                             int64_t width);

// All-zero map used before any feature discriminator has been trained.
TransferabilityMap zero_transferability(int64_t batch, int64_t height,
                                        int64_t width,
                                        torch::Dtype dtype = torch::kFloat32);

}  // namespace tfda
