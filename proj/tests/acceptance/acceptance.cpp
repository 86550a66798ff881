// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. The property suites reuse the unit tests
// linked into this binary; the end-to-end criteria train full pipelines.

#include <gtest/gtest.h>
#include <unistd.h>
#include <torch/torch.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tfda/config.hpp"
#include "tfda/evalkit.hpp"
#include "tfda/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace tfda;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Recorder : public testing::EmptyTestEventListener {
 public:
  void OnTestEnd(const testing::TestInfo& info) override {
    results[std::string(info.test_suite_name()) + "." + info.name()] = info.result()->Passed();
  }
  std::map<std::string, bool> results;
};

Outcome from_tests(const Recorder& rec, const std::vector<std::string>& names) {
  Outcome o{true, ""};
  int passed = 0;
  for (const auto& n : names) {
    const auto it = rec.results.find(n);
    if (it == rec.results.end() || !it->second) {
      o.pass = false;
      o.detail += (o.detail.empty() ? "failed: " : ", ") + n;
    } else {
      ++passed;
    }
  }
  if (o.pass) o.detail = std::to_string(passed) + " checks";
  return o;
}

std::string join_filter(const std::vector<std::vector<std::string>>& groups) {
  std::string f;
  for (const auto& g : groups)
    for (const auto& n : g) f += (f.empty() ? "" : ":") + n;
  return f;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

char buf[512];

Outcome miou_anchors() {
  const std::vector<double> bl{0.7447, 0.3265};
  const std::vector<double> ours{0.8548, 0.4367};
  const double a = 100.0 * miou(bl);
  const double b = 100.0 * miou(ours);
  std::snprintf(buf, sizeof(buf), "%.4f vs 53.56, %.4f vs 64.58", a, b);
  return {std::abs(a - 53.56) <= 0.005 && std::abs(b - 64.58) <= 0.005, buf};
}

Outcome triangle() {
  Outcome o{true, ""};
  double worst = -1e9;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    torch::manual_seed(seed);
    const int64_t n = 200, d = 8;
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    const auto ps = torch::randn({n, d}, opts);
    const auto pt = torch::randn({n, d}, opts) + 1.5;
    // One reference between the domains and one off to the side.
    for (const auto& g : {torch::randn({n, d}, opts) + 0.75,
                          torch::randn({n, d}, opts) + torch::randn({1, d}, opts)}) {
      GapOptions go;
      go.seed = seed;
      const double st = domain_gap_estimate(ps, pt, go).d_hat;
      const double sg = domain_gap_estimate(ps, g, go).d_hat;
      const double tg = domain_gap_estimate(pt, g, go).d_hat;
      const double margin = st - (sg + tg + 0.15);
      worst = std::max(worst, margin);
      if (margin > 0) o.pass = false;
    }
  }
  std::snprintf(buf, sizeof(buf), "worst d(s,t) - (d(s,g) + d(t,g) + 0.15) = %.4f over 3 seeds", worst);
  o.detail = buf;
  return o;
}

RunConfig seeded(const RunConfig& base, std::uint64_t seed) {
  RunConfig c = base;
  c.dataset.seed = seed;
  c.orchestrator.seed = seed;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  testing::InitGoogleTest(&argc, argv);

  const std::vector<std::string> gradients{
      "Ra2b.GradientMatchesFiniteDifferences",
      "AdversarialLoss.GradientMatchesFiniteDifferences",
      "BottleneckLoss.GradientMatchesFiniteDifferences",
      "TdTotalLoss.GradientMatchesFiniteDifferences",
      "SegLoss.GradientMatchesFiniteDifferences",
      "FeatureAdversarial.GradientsMatchFiniteDifferences",
      "FeatureAdversarial.ComposedLossGradientThroughAugmentor"};
  const std::vector<std::string> invariants{
      "Attention.AppliedMatrixIsRowStochastic",
      "Ra2b.ZeroDeltaIsExactIdentity",
      "Transferability.BoundedAndMatchesScalarOracle",
      "BinaryEntropy.KnownValues",
      "GaussianKl.NonNegativeAndZeroOnlyAtStandardNormal",
      "TdTrainer.MultipliersNeverDecreaseOverFiftySteps",
      "PseudoLabels.CoverageNonIncreasingInBeta",
      "TfTrainer.StepTwoLeavesSegmenterBitExact",
      "TfTrainer.StepThreeLeavesAugmentorBitExact"};
  const std::vector<std::string> oracles{
      "Ra2b.MatchesScalarLoopOracle",
      "GaussianKl.MatchesScalarOracle",
      "BottleneckLoss.WeightedMeanMatchesOracle",
      "CycleLoss.MatchesExplicitRoundTrips",
      "SegLoss.MatchesScalarCrossEntropyOracle",
      "Confusion.MatchesScalarOracleWithIgnoredPixels",
      "ResizeTo.MatchesScalarOracleOnRandomMaps"};

  testing::GTEST_FLAG(filter) = join_filter({gradients, invariants, oracles});
  auto& listeners = testing::UnitTest::GetInstance()->listeners();
  delete listeners.Release(listeners.default_result_printer());
  auto* recorder = new Recorder;
  listeners.Append(recorder);
  (void)RUN_ALL_TESTS();

  std::vector<std::pair<std::string, Outcome>> report;
  auto emit = [&](const std::string& name, const Outcome& o) {
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    report.emplace_back(name, o);
  };

  emit("1 miou-anchors", miou_anchors());
  emit("2 gradient-suite", from_tests(*recorder, gradients));
  emit("3 invariant-suite", from_tests(*recorder, invariants));
  emit("4 oracle-equivalence", from_tests(*recorder, oracles));

  const auto base = load_config(fs::path(TFDA_SOURCE_DIR) / "configs/default.json");
  const auto root = fs::temp_directory_path() / ("tfda_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const auto started = std::chrono::steady_clock::now();

  int adapt_pass = 0, coverage_pass = 0;
  std::string adapt_detail, coverage_detail;
  RunArtifacts first;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto art = alternate_train(seeded(base, seed), root / ("seed" + std::to_string(seed)));
    if (seed == 1) first = art;
    const auto& h = art.history;
    const double gain = 100.0 * (h[3].miou - h[0].miou);
    const bool adapt = gain >= 5.0 && h[3].domain_gap < h[0].domain_gap;
    const bool cover = h[3].pseudo_coverage >= h[1].pseudo_coverage;
    adapt_pass += adapt;
    coverage_pass += cover;
    std::snprintf(buf, sizeof(buf), " [seed %d: +%.2f pts, gap %.3f->%.3f]", static_cast<int>(seed), gain,
                  h[0].domain_gap, h[3].domain_gap);
    adapt_detail += buf;
    std::snprintf(buf, sizeof(buf), " [seed %d: %.4f->%.4f]", static_cast<int>(seed), h[1].pseudo_coverage,
                  h[3].pseudo_coverage);
    coverage_detail += buf;
  }
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;
  std::snprintf(buf, sizeof(buf), "%d/5 seeds in %.1f min;", adapt_pass, minutes);
  emit("5 end-to-end-adaptation", {adapt_pass >= 4 && minutes <= 120.0, buf + adapt_detail});
  std::snprintf(buf, sizeof(buf), "%d/5 seeds;", coverage_pass);
  emit("6 pseudo-label-progression", {coverage_pass >= 4, buf + coverage_detail});

  emit("7 triangle-inequality", triangle());

  const auto again = alternate_train(seeded(base, 1), root / "seed1_again");
  const auto a = checkpoint_load(first.checkpoints[1]);
  const auto b = checkpoint_load(again.checkpoints[1]);
  bool same = a.arrays.size() == b.arrays.size();
  for (const auto& [name, t] : a.arrays) {
    const auto it = b.arrays.find(name);
    same = same && it != b.arrays.end() && torch::equal(t, it->second);
  }
  const bool tables = slurp(first.metrics_table) == slurp(again.metrics_table);
  std::snprintf(buf, sizeof(buf), "k=1 checkpoint %s (%zu arrays), metric tables %s",
                same ? "bit-identical" : "differs", a.arrays.size(), tables ? "identical" : "differ");
  emit("8 reproducibility", {same && tables, buf});

  fs::remove_all(root);
  int failed = 0;
  for (const auto& [name, o] : report) failed += !o.pass;
  std::printf("%d/%zu criteria passed\n", static_cast<int>(report.size()) - failed, report.size());
  return failed == 0 ? 0 : 1;
}
