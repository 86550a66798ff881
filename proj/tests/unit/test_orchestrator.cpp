#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "scratch_dir.hpp"
#include "tiny_config.hpp"
#include "tfda/error.hpp"
#include "tfda/orchestrator.hpp"

using namespace tfda;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_arrays(const Checkpoint& a, const Checkpoint& b) {
  if (a.arrays.size() != b.arrays.size()) return false;
  for (const auto& [name, t] : a.arrays) {
    const auto it = b.arrays.find(name);
    if (it == b.arrays.end() || !torch::equal(t, it->second)) return false;
  }
  return true;
}

}  // namespace

TEST(Orchestrator, WritesArtifactsForEveryAlternation) {
  ScratchDir dir("orch_artifacts");
  const auto config = tiny_config(2);
  const auto art = alternate_train(config, dir.path());
  ASSERT_EQ(art.checkpoints.size(), 3u);  // baseline plus two alternations
  ASSERT_EQ(art.history.size(), 3u);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(art.history[k].alternation, k);
    EXPECT_EQ(checkpoint_load(art.checkpoints[k]).alternation, k);
    EXPECT_GE(art.history[k].miou, 0.0);
    EXPECT_LE(art.history[k].miou, 1.0);
    EXPECT_GE(art.history[k].domain_gap, 0.0);
    EXPECT_LE(art.history[k].domain_gap, 2.0);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.tsv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "report.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "config.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "translated/k1/img_00000.png"));

  const auto log = slurp(art.run_log);
  EXPECT_NE(log.find("\"phase\":\"td\""), std::string::npos);
  EXPECT_NE(log.find("\"phase\":\"tf\""), std::string::npos);
  EXPECT_NE(log.find("\"provenance\":\"step3:round=1\""), std::string::npos);
  EXPECT_NE(log.find("\"lambda_s\""), std::string::npos);
}

TEST(Orchestrator, TargetEvalNeverFeedsTraining) {
  ScratchDir dir("orch_splits");
  const auto art = alternate_train(tiny_config(1), dir.path());
  EXPECT_EQ(art.training_splits, (std::set<Split>{Split::kSource, Split::kTargetTrain}));
}

TEST(Orchestrator, SameSeedGivesBitIdenticalCheckpointsAndTables) {
  ScratchDir a("orch_det_a");
  ScratchDir b("orch_det_b");
  const auto config = tiny_config(1);
  const auto ra = alternate_train(config, a.path());
  const auto rb = alternate_train(config, b.path());
  EXPECT_TRUE(same_arrays(checkpoint_load(ra.checkpoints[1]), checkpoint_load(rb.checkpoints[1])));
  EXPECT_EQ(slurp(ra.metrics_table), slurp(rb.metrics_table));
}

TEST(Orchestrator, DifferentSeedsDiffer) {
  ScratchDir a("orch_seed_a");
  ScratchDir b("orch_seed_b");
  auto config = tiny_config(1);
  const auto ra = alternate_train(config, a.path());
  config.orchestrator.seed = 5;
  const auto rb = alternate_train(config, b.path());
  EXPECT_FALSE(same_arrays(checkpoint_load(ra.checkpoints[1]), checkpoint_load(rb.checkpoints[1])));
}

TEST(Orchestrator, ResumeAtSecondAlternationMatchesUninterrupted) {
  ScratchDir full("orch_full");
  ScratchDir resumed("orch_resumed");
  const auto config = tiny_config(3);
  const auto rf = alternate_train(config, full.path());
  const auto rr = alternate_train(config, resumed.path(), rf.checkpoints[2]);
  ASSERT_EQ(rr.history.size(), 4u);
  EXPECT_TRUE(same_arrays(checkpoint_load(rf.checkpoints[3]),
                          checkpoint_load(resumed / "checkpoints/k3")));
  EXPECT_EQ(slurp(rf.metrics_table), slurp(rr.metrics_table));
}

TEST(Orchestrator, ResumeWithDifferentConfigIsRejected) {
  ScratchDir a("orch_cfg_a");
  ScratchDir b("orch_cfg_b");
  const auto ra = alternate_train(tiny_config(1), a.path());
  auto other = tiny_config(2);
  try {
    alternate_train(other, b.path(), ra.checkpoints[1]);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
  }
}

TEST(Orchestrator, DivergenceNamesPhaseAndLeavesPartialCheckpoint) {
  ScratchDir dir("orch_diverge");
  auto config = tiny_config(1);
  config.orchestrator.baseline_epochs = 0;
  config.td.alpha = 1e12;  // cycle term leaves the finite range at once
  try {
    alternate_train(config, dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
    EXPECT_NE(std::string(e.what()).find("phase td"), std::string::npos);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints/partial_k1_td/checkpoint.json"));
}

TEST(Orchestrator, ZeroShiftAdaptationMatchesSourcePerformance) {
  ScratchDir dir("orch_zero_shift");
  auto config = parse_config(R"({
    "dataset": {"image_size": 16, "num_source": 96, "num_target": 64, "num_target_eval": 96,
                "color_shift": 0.0, "texture_noise_sigma": 0.0, "shape_deform": 0.0},
    "networks": {"ra2b_count": 2},
    "td": {"epochs": 3},
    "tf": {"step1_epochs": 10, "step2_epochs": 1, "step3_epochs": 2},
    "orchestrator": {"alternation_count": 1, "baseline_epochs": 0},
    "eval": {"gap_seeds": 1, "gap_iterations": 60}
  })");
  alternate_train(config, dir.path());
  const auto cp = checkpoint_load(dir / "checkpoints/k1");
  auto seg = load_segmenter(cp);
  const auto data = load_dataset(dir / "data/manifest.json");
  const double target = miou(evaluate_segmenter(seg, stack_images(data.target_eval),
                                                stack_masks(data.target_eval), 2));
  const double source = miou(evaluate_segmenter(seg, stack_images(data.source),
                                                stack_masks(data.source), 2));
  EXPECT_GT(source, 0.6);
  EXPECT_LT(std::abs(target - source), 0.02) << "target " << target << " source " << source;
}

TEST(MetricsTable, HistoryJsonRoundTrip) {
  AlternationRecord r;
  r.alternation = 2;
  r.miou = 0.5;
  r.class_iou = {0.75, std::nan("")};
  r.pseudo_coverage = 0.4;
  r.domain_gap = 1.2;
  const auto back = history_from_json(history_to_json({r}));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].alternation, 2);
  EXPECT_EQ(back[0].class_iou[0], 0.75);
  EXPECT_TRUE(std::isnan(back[0].class_iou[1]));
  const auto table = metrics_table({r}, 2);
  EXPECT_EQ(table.substr(0, table.find('\n')),
            "alternation\tmiou\tiou_0\tiou_1\tpseudo_coverage\tdomain_gap\tdomain_gap_std\tsource_error\ttarget_error");
  EXPECT_NE(table.find("2\t0.500000\t0.750000\tnan\t0.400000\t1.200000"), std::string::npos);
}
