#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tfda/error.hpp"
#include "tfda/ra2b.hpp"

using namespace tfda;

namespace {

Ra2bParams random_params(int64_t c, int64_t h, int64_t w, GateMode mode, AttentionNorm norm,
                         double delta, uint64_t seed) {
  torch::manual_seed(seed);
  const auto opt = torch::TensorOptions(torch::kFloat64);
  const int64_t n = h * w;
  const int64_t side = mode == GateMode::kSpatial ? n : c;
  const std::vector<int64_t> bias = mode == GateMode::kSpatial ? std::vector<int64_t>{n, c}
                                                               : std::vector<int64_t>{c};
  Ra2bParams p;
  p.w1 = torch::randn({c, c}, opt) * 0.5;
  p.b1 = torch::randn({c}, opt) * 0.1;
  p.w2 = torch::randn({c, c}, opt) * 0.5;
  p.b2 = torch::randn({c}, opt) * 0.1;
  p.w3 = torch::randn({c, c}, opt) * 0.5;
  p.b3 = torch::randn({c}, opt) * 0.1;
  p.gate.mode = mode;
  p.gate.wf1 = torch::randn({side, side}, opt) * 0.3;
  p.gate.wf2 = torch::randn({side, side}, opt) * 0.3;
  p.gate.wg1 = torch::randn({side, side}, opt) * 0.3;
  p.gate.wg2 = torch::randn({side, side}, opt) * 0.3;
  p.gate.bf = torch::randn(bias, opt) * 0.1;
  p.gate.bg = torch::randn(bias, opt) * 0.1;
  p.delta = torch::tensor(delta, opt);
  p.norm = norm;
  return p;
}

oracle::Ra2bScalarParams to_scalar(const Ra2bParams& p, int c, int n) {
  oracle::Ra2bScalarParams s;
  s.c = c;
  s.n = n;
  s.spatial = p.gate.mode == GateMode::kSpatial;
  s.column_norm = p.norm == AttentionNorm::kColumn;
  s.w1 = oracle::values(p.w1);
  s.b1 = oracle::values(p.b1);
  s.w2 = oracle::values(p.w2);
  s.b2 = oracle::values(p.b2);
  s.w3 = oracle::values(p.w3);
  s.b3 = oracle::values(p.b3);
  s.wf1 = oracle::values(p.gate.wf1);
  s.wf2 = oracle::values(p.gate.wf2);
  s.wg1 = oracle::values(p.gate.wg1);
  s.wg2 = oracle::values(p.gate.wg2);
  s.bf = oracle::values(p.gate.bf);
  s.bg = oracle::values(p.gate.bg);
  s.delta = p.delta.item<double>();
  return s;
}

struct Case {
  GateMode mode;
  AttentionNorm norm;
  bool weighted;
};

}  // namespace

TEST(Attention, AppliedMatrixIsRowStochastic) {
  torch::manual_seed(11);
  for (auto norm : {AttentionNorm::kColumn, AttentionNorm::kRow}) {
    const auto c1 = torch::randn({2, 16, 4}) * 2.0;
    const auto c2 = torch::randn({2, 16, 4}) * 2.0;
    const auto applied = applied_attention(attention_map(c1, c2, norm), norm);
    const auto rows = applied.sum(2);
    EXPECT_LT((rows - 1.0).abs().max().item<double>(), 1e-5);
    EXPECT_GE(applied.min().item<double>(), 0.0);
  }
}

TEST(Attention, ColumnFormNormalisesOverQueryIndex) {
  torch::manual_seed(12);
  const auto c1 = torch::randn({1, 5, 3}, torch::kFloat64);
  const auto c2 = torch::randn({1, 5, 3}, torch::kFloat64);
  const auto m = attention_map(c1, c2, AttentionNorm::kColumn);
  // Columns of M sum to one; rows in general do not.
  EXPECT_LT((m.sum(1) - 1.0).abs().max().item<double>(), 1e-12);
  EXPECT_GT((m.sum(2) - 1.0).abs().max().item<double>(), 1e-3);
}

TEST(Attention, ShapeMismatchIsValidationError) {
  const auto a = torch::zeros({1, 4, 3});
  const auto b = torch::zeros({1, 5, 3});
  try {
    attention_map(a, b);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
  }
}

TEST(Ra2b, MatchesScalarLoopOracle) {
  const int64_t c = 3, h = 4, w = 4, n = h * w;
  const std::vector<Case> cases = {{GateMode::kSpatial, AttentionNorm::kColumn, false},
                                   {GateMode::kSpatial, AttentionNorm::kRow, true},
                                   {GateMode::kChannel, AttentionNorm::kColumn, true},
                                   {GateMode::kChannel, AttentionNorm::kRow, false}};
  uint64_t seed = 100;
  for (const auto& cs : cases) {
    const auto p = random_params(c, h, w, cs.mode, cs.norm, 0.7, seed++);
    const auto input = torch::randn({2, c, h, w}, torch::kFloat64);
    const auto weight = 1.0 + torch::rand({2, 1, h, w}, torch::kFloat64);
    const auto out = cs.weighted ? ra2b_forward(input, p, weight) : ra2b_forward(input, p);
    const auto sp = to_scalar(p, c, n);
    for (int64_t b = 0; b < 2; ++b) {
      const auto expected = oracle::ra2b(oracle::values(input[b]), sp,
                                         cs.weighted ? oracle::values(weight[b]) : std::vector<double>{});
      EXPECT_LT(oracle::max_abs_diff(oracle::values(out[b]), expected), 1e-6)
          << "mode " << static_cast<int>(cs.mode) << " norm " << static_cast<int>(cs.norm);
    }
  }
}

TEST(Ra2b, ZeroDeltaIsExactIdentity) {
  for (auto mode : {GateMode::kSpatial, GateMode::kChannel}) {
    const auto p = random_params(4, 3, 3, mode, AttentionNorm::kColumn, 0.0, 7);
    const auto input = torch::randn({2, 4, 3, 3}, torch::kFloat64);
    EXPECT_TRUE(torch::equal(ra2b_forward(input, p), input));
    EXPECT_TRUE(torch::equal(ra2b_forward(input, p, torch::full({2, 1, 3, 3}, 1.8, torch::kFloat64)), input));
  }
}

TEST(Ra2b, BlockStartsAsIdentity) {
  torch::manual_seed(2);
  Ra2bBlock block(4, 4, 4);
  EXPECT_EQ(block->gate_mode(), GateMode::kSpatial);
  const auto input = torch::randn({1, 4, 4, 4});
  EXPECT_TRUE(torch::equal(block->forward(input), input));
}

TEST(Ra2b, LargeMapsUseChannelGate) {
  Ra2bBlock block(2, 128, 64);
  EXPECT_EQ(block->gate_mode(), GateMode::kChannel);
}

TEST(Ra2b, PixelPermutationEquivariantInChannelMode) {
  const auto p = random_params(3, 3, 3, GateMode::kChannel, AttentionNorm::kColumn, 0.9, 21);
  const auto input = torch::randn({1, 3, 3, 3}, torch::kFloat64);
  const auto perm = torch::randperm(9);
  const auto permuted = input.flatten(2).index_select(2, perm).view({1, 3, 3, 3});
  const auto a = ra2b_forward(input, p).flatten(2).index_select(2, perm);
  const auto b = ra2b_forward(permuted, p).flatten(2);
  EXPECT_LT((a - b).abs().max().item<double>(), 1e-10);
}

TEST(Ra2b, GradientMatchesFiniteDifferences) {
  for (auto mode : {GateMode::kSpatial, GateMode::kChannel}) {
    auto p = random_params(2, 2, 3, mode, AttentionNorm::kColumn, 0.8, 31);
    std::vector<torch::Tensor> leaves = {p.w1, p.b1, p.w2, p.w3, p.gate.wf1, p.gate.wg2,
                                         p.gate.bf, p.gate.bg, p.delta};
    auto input = torch::randn({2, 2, 2, 3}, torch::kFloat64);
    leaves.push_back(input);
    for (auto& t : leaves) t.set_requires_grad(true);
    const auto weight = 1.0 + torch::rand({2, 1, 2, 3}, torch::kFloat64);
    const auto probe = torch::randn({2, 2, 2, 3}, torch::kFloat64);
    const double err = oracle::gradient_rel_error(
        [&] { return (ra2b_forward(input, p, weight) * probe).sum(); }, leaves);
    EXPECT_LT(err, 1e-4) << "mode " << static_cast<int>(mode);
  }
}

TEST(Ra2b, WrongWeightShapeRejected) {
  const auto p = random_params(2, 2, 2, GateMode::kSpatial, AttentionNorm::kColumn, 1.0, 1);
  const auto input = torch::randn({1, 2, 2, 2}, torch::kFloat64);
  EXPECT_THROW(ra2b_forward(input, p, torch::ones({1, 1, 3, 3}, torch::kFloat64)), Error);
}
