#include <gtest/gtest.h>

#include <fstream>

#include "scratch_dir.hpp"
#include "tfda/error.hpp"
#include "tfda/report.hpp"

using namespace tfda;

TEST(Report, MetricsTableRoundTrip) {
  ScratchDir dir("report_rt");
  std::vector<AlternationRecord> history(3);
  for (int k = 0; k < 3; ++k) {
    history[k].alternation = k;
    history[k].miou = 0.4 + 0.1 * k;
    history[k].class_iou = {0.9, 0.1 + 0.2 * k};
    history[k].pseudo_coverage = 0.5 + 0.1 * k;
    history[k].domain_gap = 1.8 - 0.3 * k;
    history[k].source_error = 0.01;
    history[k].target_error = 0.1 - 0.02 * k;
  }
  std::ofstream(dir / "metrics.tsv") << metrics_table(history, 2);
  const auto back = read_metrics_table(dir / "metrics.tsv");
  ASSERT_EQ(back.size(), 3u);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(back[k].alternation, k);
    EXPECT_NEAR(back[k].miou, history[k].miou, 1e-6);
    EXPECT_NEAR(back[k].domain_gap, history[k].domain_gap, 1e-6);
    EXPECT_NEAR(back[k].class_iou[1], history[k].class_iou[1], 1e-6);
  }

  const auto out = write_report(dir.path(), dir / "out/report.txt");
  std::ifstream in(out);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("unestimated"), std::string::npos);
  for (const char* plot : {"report_miou.png", "report_gap.png", "report_coverage.png"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / plot)) << plot;
  }
}

TEST(Report, PlotHasRequestedSizeAndInk) {
  const auto r = render_line_plot({{0, 1, 2, 3}, {0.4, 0.7, 0.8, 0.85}}, 200, 120);
  EXPECT_EQ(r.width, 200);
  EXPECT_EQ(r.height, 120);
  EXPECT_EQ(r.channels, 3);
  size_t dark = 0;
  for (auto v : r.pixels) dark += v < 128;
  EXPECT_GT(dark, 200u);
}

TEST(Report, MissingTableIsValidationError) {
  ScratchDir dir("report_missing");
  EXPECT_THROW(read_metrics_table(dir / "metrics.tsv"), Error);
}
