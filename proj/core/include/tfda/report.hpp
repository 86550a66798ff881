#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tfda/image_io.hpp"
#include "tfda/orchestrator.hpp"

namespace tfda {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
};

// Line plot with axes, markers and numeric labels on the y-axis extremes.
Raster render_line_plot(const Series& series, int width = 320, int height = 220);

// Reads <run_dir>/metrics.tsv; writes the text report at `out` and three
// plots (<stem>_miou.png, <stem>_gap.png, <stem>_coverage.png) beside it.
std::filesystem::path write_report(const std::filesystem::path& run_dir,
                                   const std::filesystem::path& out);

std::vector<AlternationRecord> read_metrics_table(const std::filesystem::path& path);

}  // namespace tfda
