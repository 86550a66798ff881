#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tfda/error.hpp"
#include "tfda/feature_tf.hpp"

using namespace tfda;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec spec;
  spec.base_channels = 4;
  spec.depth = 2;
  spec.ra2b_count = 2;
  spec.noise_channels = 2;
  return spec;
}

torch::Tensor two_class_probs(double p0) {
  return torch::tensor({p0, 1.0 - p0}, torch::kFloat64).view({1, 2, 1, 1});
}

std::map<std::string, torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& item : m.named_parameters()) out[item.key()] = item.value().detach().clone();
  return out;
}

bool unchanged(const torch::nn::Module& m, const std::map<std::string, torch::Tensor>& before) {
  for (const auto& item : m.named_parameters()) {
    if (!torch::equal(item.value(), before.at(item.key()))) return false;
  }
  return true;
}

TfData tiny_data(int64_t n, int64_t size, const NetworkSpec& spec, uint64_t seed) {
  torch::manual_seed(seed);
  TfData data;
  data.source = torch::rand({n, 3, size, size});
  data.source_labels = (torch::rand({n, size, size}) > 0.7).to(torch::kLong);
  data.target = torch::rand({n, 3, size, size});
  const int64_t h = spec.high_size(size);
  data.p_source = {torch::rand({n, 1, h, h}), "test"};
  data.p_target = {torch::rand({n, 1, h, h}), "test"};
  return data;
}

}  // namespace

TEST(PseudoLabels, ConfidentPixelKeepsArgmax) {
  const auto a = pseudo_labels(two_class_probs(0.95), 0.9);
  EXPECT_EQ(a.labels.item<int64_t>(), 0);
  EXPECT_TRUE(a.mask.item<bool>());
  const auto b = pseudo_labels(two_class_probs(0.6), 0.9);
  EXPECT_FALSE(b.mask.item<bool>());
  EXPECT_EQ(b.coverage(), 0.0);
}

TEST(PseudoLabels, CoverageNonIncreasingInBeta) {
  torch::manual_seed(20);
  const auto probs = torch::softmax(torch::randn({4, 3, 8, 8}) * 3.0, 1);
  double prev = 1.0;
  for (double beta = 0.05; beta < 1.0; beta += 0.05) {
    const double cov = pseudo_labels(probs, beta).coverage();
    EXPECT_LE(cov, prev);
    prev = cov;
  }
}

TEST(PseudoLabels, UnnormalisedProbabilitiesRejected) {
  const auto bad = torch::tensor({0.7, 0.7}).view({1, 2, 1, 1});
  EXPECT_THROW(pseudo_labels(bad, 0.9), Error);
}

TEST(SegLoss, MatchesScalarCrossEntropyOracle) {
  torch::manual_seed(21);
  const auto ls = torch::randn({1, 2, 4, 4}, torch::kFloat64);
  const auto ys = (torch::rand({1, 4, 4}) > 0.5).to(torch::kLong);
  const auto lt = torch::randn({1, 2, 4, 4}, torch::kFloat64);
  const auto pseudo = pseudo_labels(torch::softmax(lt * 3.0, 1), 0.9);
  const auto loss = seg_loss(ls, ys, lt, pseudo);

  std::vector<int64_t> src_labels(ys.data_ptr<int64_t>(), ys.data_ptr<int64_t>() + 16);
  std::vector<int64_t> tgt_labels(16);
  const auto lab = pseudo.labels.contiguous();
  const auto msk = pseudo.mask.contiguous();
  for (int i = 0; i < 16; ++i) tgt_labels[i] = msk.data_ptr<bool>()[i] ? lab.data_ptr<int64_t>()[i] : -100;
  const double expected = oracle::cross_entropy(oracle::values(ls), src_labels, 1, 2, 4, 4) +
                          oracle::cross_entropy(oracle::values(lt), tgt_labels, 1, 2, 4, 4);
  EXPECT_NEAR(loss.item<double>(), expected, 1e-6);
}

TEST(SegLoss, NoConfidentTargetPixelsContributesZero) {
  const auto ls = torch::randn({1, 2, 4, 4}, torch::kFloat64);
  const auto ys = torch::zeros({1, 4, 4}, torch::kLong);
  const auto lt = torch::zeros({1, 2, 4, 4}, torch::kFloat64);  // uniform, nothing confident
  const auto pseudo = pseudo_labels(torch::softmax(lt, 1), 0.9);
  EXPECT_NEAR(seg_loss(ls, ys, lt, pseudo).item<double>(), seg_loss(ls, ys, {}, {}).item<double>(), 1e-12);
}

TEST(SegLoss, LabelOutOfRangeRejected) {
  const auto ls = torch::randn({1, 2, 2, 2});
  const auto ys = torch::full({1, 2, 2}, 2, torch::kLong);
  EXPECT_THROW(seg_loss(ls, ys, {}, {}), Error);
}

TEST(SegLoss, GradientMatchesFiniteDifferences) {
  torch::manual_seed(22);
  auto ls = torch::randn({2, 3, 3, 3}, torch::kFloat64).requires_grad_();
  auto lt = torch::randn({2, 3, 3, 3}, torch::kFloat64).requires_grad_();
  const auto ys = torch::randint(0, 3, {2, 3, 3}, torch::kLong);
  const auto pseudo = pseudo_labels(torch::softmax(lt.detach() * 4.0, 1), 0.6);
  ASSERT_GT(pseudo.coverage(), 0.0);
  EXPECT_LT(oracle::gradient_rel_error([&] { return seg_loss(ls, ys, lt, pseudo); }, {ls, lt}), 1e-4);
}

TEST(FeatureAdversarial, ConstantDiscriminatorValues) {
  const auto half = torch::full({2, 1, 4, 4}, 0.5, torch::kFloat64);
  EXPECT_NEAR(augmentor_adv_loss(half, half).item<double>(), 2.0 * std::log(0.5), 1e-12);
  EXPECT_NEAR(alignment_loss(half, half).item<double>(), 2.0 * std::log(0.5), 1e-12);
}

TEST(FeatureAdversarial, GradientsMatchFiniteDifferences) {
  torch::manual_seed(23);
  auto ds = (0.1 + 0.8 * torch::rand({2, 1, 3, 3}, torch::kFloat64)).requires_grad_();
  auto da = (0.1 + 0.8 * torch::rand({2, 1, 3, 3}, torch::kFloat64)).requires_grad_();
  EXPECT_LT(oracle::gradient_rel_error([&] { return augmentor_adv_loss(ds, da); }, {ds, da}), 1e-4);
  EXPECT_LT(oracle::gradient_rel_error([&] { return alignment_loss(ds, da); }, {ds, da}), 1e-4);
}

TEST(FeatureAdversarial, ComposedLossGradientThroughAugmentor) {
  const auto spec = tiny_spec();
  torch::manual_seed(24);
  auto nets = TfNets::build(spec, 16);
  nets.seg->to(torch::kFloat64);
  nets.aug->to(torch::kFloat64);
  nets.df->to(torch::kFloat64);
  for (auto block : nets.aug->blocks()) block->delta().data().fill_(0.5);
  const auto x = torch::rand({2, 3, 16, 16}, torch::kFloat64);
  const auto noise = torch::randn(nets.aug->noise_shape(2), torch::kFloat64);
  const auto weight = 1.0 + torch::rand({2, 1, 4, 4}, torch::kFloat64);
  auto params = nets.aug->named_parameters();
  std::vector<torch::Tensor> leaves = {params["ra2b0.delta"], params["ra2b1.w1"], params["fuse.weight"],
                                       params["noise_high.weight"]};
  EXPECT_LT(oracle::gradient_rel_error([&] { return augmentor_adv_loss(x, nets, noise, weight); }, leaves),
            1e-4);
}

TEST(TfTrainer, StepTwoLeavesSegmenterBitExact) {
  const auto spec = tiny_spec();
  torch::manual_seed(25);
  auto nets = TfNets::build(spec, 16);
  TfHyper hyper;
  hyper.batch_size = 4;
  const auto data = tiny_data(6, 16, spec, 26);
  TfTrainer trainer(nets, hyper);
  const auto seg_before = snapshot(*nets.seg);
  const auto aug_before = snapshot(*nets.aug);
  std::mt19937_64 rng(1);
  TfRoundRecord rec;
  trainer.step2(data, rng, rec);
  EXPECT_TRUE(unchanged(*nets.seg, seg_before));
  EXPECT_FALSE(unchanged(*nets.aug, aug_before));
}

TEST(TfTrainer, StepThreeLeavesAugmentorBitExact) {
  const auto spec = tiny_spec();
  torch::manual_seed(27);
  auto nets = TfNets::build(spec, 16);
  TfHyper hyper;
  hyper.batch_size = 4;
  const auto data = tiny_data(6, 16, spec, 28);
  TfTrainer trainer(nets, hyper);
  nets.seg->eval();
  const auto pseudo = pseudo_labels(predict_probs(nets.seg, data.target), hyper.beta);
  const auto seg_before = snapshot(*nets.seg);
  const auto aug_before = snapshot(*nets.aug);
  std::mt19937_64 rng(2);
  TfRoundRecord rec;
  trainer.step3(data, pseudo, rng, rec);
  EXPECT_TRUE(unchanged(*nets.aug, aug_before));
  EXPECT_FALSE(unchanged(*nets.seg, seg_before));
}

TEST(TfTrainer, RoundRecordsAllTerms) {
  const auto spec = tiny_spec();
  torch::manual_seed(29);
  auto nets = TfNets::build(spec, 16);
  TfHyper hyper;
  hyper.batch_size = 4;
  hyper.step1_epochs = 1;
  hyper.step2_epochs = 1;
  hyper.step3_epochs = 1;
  const auto data = tiny_data(6, 16, spec, 30);
  TfTrainer trainer(nets, hyper);
  std::mt19937_64 rng(3);
  const auto rec = trainer.train_round(data, 4, rng);
  EXPECT_EQ(rec.round, 4);
  EXPECT_GT(rec.seg_loss, 0.0);
  EXPECT_TRUE(std::isfinite(rec.aug_loss));
  EXPECT_TRUE(std::isfinite(rec.align_loss));
  EXPECT_GE(rec.pseudo_coverage, 0.0);
  EXPECT_LE(rec.pseudo_coverage, 1.0);
}

TEST(TfHyper, BatchMustMixDomains) {
  TfHyper h;
  h.batch_size = 1;
  EXPECT_THROW(h.validate(), Error);
}
