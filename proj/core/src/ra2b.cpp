#include "tfda/ra2b.hpp"

#include "tfda/error.hpp"

namespace tfda {

namespace {

void require(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::kValidation, std::string("ra2b: ") + what);
}

// x [B, N, C] · w^T + b for pointwise (1x1) projections.
torch::Tensor pointwise(const torch::Tensor& x, const torch::Tensor& w,
                        const torch::Tensor& b) {
  return torch::matmul(x, w.t()) + b;
}

torch::Tensor gate_linear(const torch::Tensor& c1, const torch::Tensor& fp,
                          const torch::Tensor& w1, const torch::Tensor& w2,
                          const torch::Tensor& bias, GateMode mode) {
  if (mode == GateMode::kSpatial) {
    return torch::matmul(w1, c1) + torch::matmul(w2, fp) + bias;
  }
  return torch::matmul(c1, w1.t()) + torch::matmul(fp, w2.t()) + bias;
}

}  // namespace

torch::Tensor attention_map(const torch::Tensor& c1, const torch::Tensor& c2,
                            AttentionNorm norm) {
  require(c1.dim() == 3 && c2.dim() == 3, "attention inputs must be [B, N, C]");
  require(c1.sizes() == c2.sizes(), "C1/C2 shape mismatch");
  const auto scores = torch::matmul(c1, c2.transpose(1, 2));
  return torch::softmax(scores, norm == AttentionNorm::kColumn ? 1 : 2);
}

torch::Tensor applied_attention(const torch::Tensor& m, AttentionNorm norm) {
  return norm == AttentionNorm::kColumn ? m.transpose(1, 2) : m;
}

torch::Tensor attention_apply(const torch::Tensor& m, const torch::Tensor& c3,
                              AttentionNorm norm) {
  require(m.dim() == 3 && c3.dim() == 3, "attention_apply expects 3-d tensors");
  require(m.size(0) == c3.size(0) && m.size(1) == m.size(2) &&
              m.size(2) == c3.size(1),
          "attention matrix does not conform to C3");
  return torch::matmul(applied_attention(m, norm), c3);
}

std::pair<torch::Tensor, torch::Tensor> aoa_gate(const torch::Tensor& c1,
                                                 const torch::Tensor& fp,
                                                 const GateParams& p) {
  require(c1.sizes() == fp.sizes(), "C1/F_p shape mismatch");
  const int64_t n = c1.size(1);
  const int64_t c = c1.size(2);
  if (p.mode == GateMode::kSpatial) {
    require(p.wf1.size(0) == n && p.wf1.size(1) == n, "spatial gate needs N x N");
    require(p.bf.size(0) == n && p.bf.size(1) == c, "spatial bias needs N x C");
  } else {
    require(p.wf1.size(0) == c && p.wf1.size(1) == c, "channel gate needs C x C");
  }
  auto f = gate_linear(c1, fp, p.wf1, p.wf2, p.bf, p.mode);
  auto g = torch::sigmoid(gate_linear(c1, fp, p.wg1, p.wg2, p.bg, p.mode));
  return {f, g};
}

torch::Tensor ra2b_forward(const torch::Tensor& input, const Ra2bParams& p,
                           const std::optional<torch::Tensor>& weight) {
  require(input.dim() == 4, "input must be [B, C, H, W]");
  const int64_t batch = input.size(0);
  const int64_t channels = input.size(1);
  const int64_t height = input.size(2);
  const int64_t width = input.size(3);
  require(p.w1.size(0) == channels && p.w1.size(1) == channels,
          "projection weights do not match channel count");

  const auto flat = input.flatten(2).transpose(1, 2);  // [B, N, C]
  const auto c1 = pointwise(flat, p.w1, p.b1);
  const auto c2 = pointwise(flat, p.w2, p.b2);
  const auto c3 = pointwise(flat, p.w3, p.b3);
  const auto m = attention_map(c1, c2, p.norm);
  const auto fp = attention_apply(m, c3, p.norm);
  auto [f, g] = aoa_gate(c1, fp, p.gate);

  auto refined = (f * g).transpose(1, 2).reshape({batch, channels, height, width});
  if (weight) {
    require(weight->size(0) == batch && weight->size(2) == height &&
                weight->size(3) == width,
            "weight map does not match feature size");
    refined = refined * *weight;
  }
  return p.delta * refined + input;
}

Ra2bBlockImpl::Ra2bBlockImpl(int64_t channels, int64_t height, int64_t width,
                             AttentionNorm norm)
    : mode_(height * width <= kSpatialGateLimit ? GateMode::kSpatial
                                                : GateMode::kChannel),
      norm_(norm) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  auto proj = [&](const char* wname, const char* bname, torch::Tensor& w,
                  torch::Tensor& b) {
    w = register_parameter(wname, torch::empty({channels, channels}).uniform_(-bound, bound));
    b = register_parameter(bname, torch::zeros({channels}));
  };
  proj("w1", "b1", w1_, b1_);
  proj("w2", "b2", w2_, b2_);
  proj("w3", "b3", w3_, b3_);

  const int64_t n = height * width;
  const int64_t side = mode_ == GateMode::kSpatial ? n : channels;
  auto bias_shape = mode_ == GateMode::kSpatial ? std::vector<int64_t>{n, channels}
                                                : std::vector<int64_t>{channels};
  wf1_ = register_parameter("wf1", torch::eye(side));
  wf2_ = register_parameter("wf2", torch::eye(side));
  wg1_ = register_parameter("wg1", torch::eye(side));
  wg2_ = register_parameter("wg2", torch::eye(side));
  bf_ = register_parameter("bf", torch::zeros(bias_shape));
  bg_ = register_parameter("bg", torch::zeros(bias_shape));
  delta_ = register_parameter("delta", torch::zeros({}));
}

Ra2bParams Ra2bBlockImpl::params() const {
  return {w1_, b1_, w2_, b2_, w3_, b3_,
          GateParams{mode_, wf1_, wf2_, wg1_, wg2_, bf_, bg_}, delta_, norm_};
}

torch::Tensor Ra2bBlockImpl::forward(const torch::Tensor& input,
                                     const std::optional<torch::Tensor>& weight) {
  return ra2b_forward(input, params(), weight);
}

}  // namespace tfda
