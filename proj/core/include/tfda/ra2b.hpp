#pragma once

#include <torch/torch.h>

#include <optional>
#include <utility>

namespace tfda {

// Which index the attention softmax normalises over. kColumn follows the
// published formula (denominator sums over the query index i, so columns of
// M sum to one) and multiplies M^T against the value features. kRow is the
// conventional row softmax multiplied as-is. Both make the applied matrix
// row-stochastic.
enum class AttentionNorm { kColumn, kRow };

// How the gate transforms act. kSpatial uses N x N pixel-mixing matrices and
// N x C biases exactly as written; kChannel uses C x C channel maps with a
// per-channel bias and scales to any N.
enum class GateMode { kSpatial, kChannel };

// Feature tensors below are [B, N, C] unless noted.

// Raw attention matrix M, [B, N, N], M_ij ∝ exp((C1 C2^T)_ij).
torch::Tensor attention_map(const torch::Tensor& c1, const torch::Tensor& c2,
                            AttentionNorm norm = AttentionNorm::kColumn);

// The matrix that actually multiplies C3: M^T for kColumn, M for kRow.
torch::Tensor applied_attention(const torch::Tensor& m,
                                AttentionNorm norm = AttentionNorm::kColumn);

// F_p = applied_attention(M) · C3.
torch::Tensor attention_apply(const torch::Tensor& m, const torch::Tensor& c3,
                              AttentionNorm norm = AttentionNorm::kColumn);

struct GateParams {
  GateMode mode = GateMode::kSpatial;
  // kSpatial: [N, N]. kChannel: [C, C] acting on the channel axis.
  torch::Tensor wf1, wf2, wg1, wg2;
  // kSpatial: [N, C]. kChannel: [C].
  torch::Tensor bf, bg;
};

// Information flow f and relevance gate g = sigmoid(...), both [B, N, C].
std::pair<torch::Tensor, torch::Tensor> aoa_gate(const torch::Tensor& c1,
                                                 const torch::Tensor& fp,
                                                 const GateParams& params);

struct Ra2bParams {
  // Pointwise projections producing C1..C3: weight [C, C], bias [C].
  torch::Tensor w1, b1, w2, b2, w3, b3;
  GateParams gate;
  torch::Tensor delta;  // scalar
  AttentionNorm norm = AttentionNorm::kColumn;
};

// F_o = delta * (f ⊗ g) * weight + F_i for F_i in [B, C, H, W]. `weight` is an
// optional [B, 1, H, W] map (the residual transferability weight); absent
// means 1 everywhere.
torch::Tensor ra2b_forward(const torch::Tensor& input, const Ra2bParams& params,
                           const std::optional<torch::Tensor>& weight = std::nullopt);

// Learnable block. Gate mode is kSpatial when H*W <= kSpatialGateLimit.
class Ra2bBlockImpl : public torch::nn::Module {
 public:
  static constexpr int64_t kSpatialGateLimit = 4096;

  Ra2bBlockImpl(int64_t channels, int64_t height, int64_t width,
                AttentionNorm norm = AttentionNorm::kColumn);

  torch::Tensor forward(const torch::Tensor& input,
                        const std::optional<torch::Tensor>& weight = std::nullopt);

  Ra2bParams params() const;
  torch::Tensor& delta() { return delta_; }
  GateMode gate_mode() const { return mode_; }

 private:
  GateMode mode_;
  AttentionNorm norm_;
  torch::Tensor w1_, b1_, w2_, b2_, w3_, b3_;
  torch::Tensor wf1_, wf2_, wg1_, wg2_, bf_, bg_;
  torch::Tensor delta_;
};
TORCH_MODULE(Ra2bBlock);

}  // namespace tfda
