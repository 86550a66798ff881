#include <gtest/gtest.h>

#include <array>
#include <random>

#include "tfda/error.hpp"
#include "tfda/evalkit.hpp"

using namespace tfda;

namespace {

// Confusion counts by explicit double loop.
std::vector<int64_t> confusion_oracle(const std::vector<int64_t>& pred, const std::vector<int64_t>& gt, int k,
                                      int64_t ignore) {
  std::vector<int64_t> out(static_cast<size_t>(k) * k, 0);
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore) continue;
    ++out[static_cast<size_t>(gt[i]) * k + pred[i]];
  }
  return out;
}

torch::Tensor blob(int n, int d, double shift, uint64_t seed) {
  torch::manual_seed(seed);
  return torch::randn({n, d}, torch::kFloat64) + shift;
}

}  // namespace

TEST(Miou, PublishedTableAnchors) {
  const std::array<double, 2> a{74.47, 32.65};
  EXPECT_NEAR(miou(a), 53.56, 0.005);
  const std::array<double, 2> b{85.48, 43.67};
  EXPECT_NEAR(miou(b), 64.58, 0.005);
}

TEST(Miou, EmptyIsValidationError) {
  try {
    miou(std::span<const double>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
  }
}

TEST(Confusion, MatchesScalarOracleWithIgnoredPixels) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cls(0, 2);
  std::vector<int64_t> pred(64), gt(64);
  for (int i = 0; i < 64; ++i) {
    pred[i] = cls(rng);
    gt[i] = i % 9 == 0 ? 255 : cls(rng);
  }
  const auto cm = confusion(torch::tensor(pred).view({8, 8}), torch::tensor(gt).view({8, 8}), 3);
  const auto expected = confusion_oracle(pred, gt, 3, 255);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) EXPECT_EQ(cm.at(a, b), expected[a * 3 + b]);
  EXPECT_EQ(cm.total(), 64 - 8);
}

TEST(IouPerClass, HandCaseAndAbsentClass) {
  // gt:   0 0 1 1    pred: 0 1 1 1    class 2 never appears.
  const auto gt = torch::tensor({0, 0, 1, 1}, torch::kLong);
  const auto pred = torch::tensor({0, 1, 1, 1}, torch::kLong);
  const auto ious = iou_per_class(confusion(pred, gt, 3));
  ASSERT_TRUE(ious[0] && ious[1]);
  EXPECT_DOUBLE_EQ(*ious[0], 0.5);
  EXPECT_DOUBLE_EQ(*ious[1], 2.0 / 3.0);
  EXPECT_FALSE(ious[2].has_value());
  EXPECT_DOUBLE_EQ(miou(confusion(pred, gt, 3)), (0.5 + 2.0 / 3.0) / 2.0);
}

TEST(Confusion, LabelOutsideRangeRejected) {
  const auto gt = torch::tensor({0, 3}, torch::kLong);
  const auto pred = torch::tensor({0, 1}, torch::kLong);
  EXPECT_THROW(confusion(pred, gt, 2), Error);
}

TEST(Confusion, AccumulatesAcrossBatches) {
  const auto a = confusion(torch::tensor({0, 1}, torch::kLong), torch::tensor({0, 0}, torch::kLong), 2);
  auto sum = a;
  sum += a;
  EXPECT_EQ(sum.at(0, 1), 2);
  EXPECT_EQ(sum.total(), 4);
}

TEST(DomainGap, IdenticalDistributionsGiveSmallDistance) {
  const auto g = domain_gap_estimate(blob(200, 4, 0.0, 1), blob(200, 4, 0.0, 2));
  EXPECT_LT(g.d_hat, 0.4);
  EXPECT_GE(g.d_hat, 0.0);
}

TEST(DomainGap, SeparatedDistributionsApproachTwo) {
  const auto g = domain_gap_estimate(blob(200, 4, 0.0, 3), blob(200, 4, 5.0, 4));
  EXPECT_GT(g.d_hat, 1.9);
  EXPECT_LE(g.d_hat, 2.0);
}

TEST(DomainGap, MonotoneInSeparation) {
  double prev = -1.0;
  for (double shift : {0.0, 0.5, 1.0, 2.0}) {
    const double d = domain_gap_estimate(blob(200, 3, 0.0, 5), blob(200, 3, shift, 6)).d_hat;
    EXPECT_GE(d, prev - 0.1);
    prev = d;
  }
}

TEST(DomainGap, DeterministicGivenSeed) {
  GapOptions o;
  o.seed = 9;
  const auto a = domain_gap_estimate(blob(60, 3, 0.0, 7), blob(60, 3, 1.0, 8), o);
  const auto b = domain_gap_estimate(blob(60, 3, 0.0, 7), blob(60, 3, 1.0, 8), o);
  EXPECT_EQ(a.d_hat, b.d_hat);
  EXPECT_EQ(a.d_hat_std, b.d_hat_std);
}

TEST(DomainGap, TooFewRowsRejected) {
  EXPECT_THROW(domain_gap_estimate(blob(10, 2, 0, 1), blob(40, 2, 0, 2)), Error);
}

TEST(BoundReport, LeavesGammaUnestimated) {
  GapEstimate g;
  g.d_hat = 0.5;
  const auto text = bound_report(0.1, g, 0.2);
  EXPECT_NE(text.find("unestimated"), std::string::npos);
  EXPECT_NE(text.find("0.3500"), std::string::npos);
  EXPECT_NE(text.find("0.2000"), std::string::npos);
}
