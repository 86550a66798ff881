#include "tfda/transferability.hpp"

#include <cmath>

namespace tfda {

namespace nnf = torch::nn::functional;

torch::Tensor binary_entropy(const torch::Tensor& p) {
  const auto q = p.clamp(kProbEpsilon, 1.0 - kProbEpsilon);
  const auto one_minus = 1.0 - q;
  return -(q * torch::log2(q) + one_minus * torch::log2(one_minus));
}

TransferabilityMap transferability(const torch::Tensor& d_out,
                                   std::string provenance) {
  auto p = (1.0 - binary_entropy(d_out.detach())).clamp(0.0, 1.0);
  return {p, std::move(provenance)};
}

torch::Tensor residual_weight(const TransferabilityMap& map) {
  return 1.0 + map.p.detach();
}

TransferabilityMap resize_to(const TransferabilityMap& map, int64_t height,
                             int64_t width) {
  if (map.p.size(2) == height && map.p.size(3) == width) return map;
  auto p = nnf::interpolate(map.p, nnf::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{height, width})
                                       .mode(torch::kBilinear)
                                       .align_corners(false));
  return {p.clamp(0.0, 1.0), map.provenance};
}

TransferabilityMap zero_transferability(int64_t batch, int64_t height,
                                        int64_t width, torch::Dtype dtype) {
  return {torch::zeros({batch, 1, height, width}, torch::TensorOptions(dtype)),
          "none"};
}

}  // namespace tfda
