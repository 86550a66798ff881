#include "tfda/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "tfda/error.hpp"

namespace tfda {

namespace fs = std::filesystem;

namespace {

// 3x5 glyphs, one row per 3-bit group, most significant bit on the left.
constexpr std::array<std::array<std::uint8_t, 5>, 12> kGlyphs = {{
    {7, 5, 5, 5, 7},  // 0
    {2, 6, 2, 2, 7},  // 1
    {7, 1, 7, 4, 7},  // 2
    {7, 1, 7, 1, 7},  // 3
    {5, 5, 7, 1, 1},  // 4
    {7, 4, 7, 1, 7},  // 5
    {7, 4, 7, 5, 7},  // 6
    {7, 1, 1, 1, 1},  // 7
    {7, 5, 7, 5, 7},  // 8
    {7, 5, 7, 1, 7},  // 9
    {0, 0, 0, 0, 2},  // .
    {0, 0, 7, 0, 0},  // -
}};

struct Canvas {
  Raster raster;

  Canvas(int w, int h) : raster{w, h, 3, std::vector<std::uint8_t>(static_cast<size_t>(w) * h * 3, 255)} {}

  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= raster.width || y >= raster.height) return;
    auto* p = &raster.pixels[(static_cast<size_t>(y) * raster.width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }

  void text(int x, int y, const std::string& s, std::array<std::uint8_t, 3> c) {
    for (char ch : s) {
      int g = -1;
      if (ch >= '0' && ch <= '9') g = ch - '0';
      if (ch == '.') g = 10;
      if (ch == '-') g = 11;
      if (g >= 0) {
        for (int row = 0; row < 5; ++row) {
          for (int col = 0; col < 3; ++col) {
            if (kGlyphs[g][row] & (4 >> col)) set(x + col, y + row, c);
          }
        }
      }
      x += 4;
    }
  }
};

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

double parse_number(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kValidation, "metrics table: bad number '" + s + "'");
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, '\t')) out.push_back(cell);
  return out;
}

}  // namespace

Raster render_line_plot(const Series& series, int width, int height) {
  Canvas canvas(width, height);
  const int left = 36, right = width - 10, top = 12, bottom = height - 20;
  constexpr std::array<std::uint8_t, 3> kAxis{40, 40, 40};
  constexpr std::array<std::uint8_t, 3> kLine{200, 40, 40};
  canvas.line(left, top, left, bottom, kAxis);
  canvas.line(left, bottom, right, bottom, kAxis);

  std::vector<std::pair<double, double>> pts;
  for (size_t i = 0; i < std::min(series.x.size(), series.y.size()); ++i) {
    if (std::isfinite(series.x[i]) && std::isfinite(series.y[i])) pts.emplace_back(series.x[i], series.y[i]);
  }
  if (pts.empty()) return canvas.raster;
  double x_lo = pts.front().first, x_hi = x_lo, y_lo = pts.front().second, y_hi = y_lo;
  for (const auto& [x, y] : pts) {
    x_lo = std::min(x_lo, x);
    x_hi = std::max(x_hi, x);
    y_lo = std::min(y_lo, y);
    y_hi = std::max(y_hi, y);
  }
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) { y_lo -= 0.5; y_hi += 0.5; }
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (bottom - top))); };

  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    canvas.line(px(pts[i].first), py(pts[i].second), px(pts[i + 1].first), py(pts[i + 1].second), kLine);
  }
  for (const auto& [x, y] : pts) {
    for (int d = -2; d <= 2; ++d) {
      canvas.set(px(x) + d, py(y), kLine);
      canvas.set(px(x), py(y) + d, kLine);
    }
    canvas.line(px(x), bottom, px(x), bottom + 3, kAxis);
    canvas.text(px(x) - 2, bottom + 6, fixed(x, 0), kAxis);
  }
  canvas.text(2, top - 2, fixed(y_hi, 3), kAxis);
  canvas.text(2, bottom - 4, fixed(y_lo, 3), kAxis);
  return canvas.raster;
}

std::vector<AlternationRecord> read_metrics_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kValidation, "missing file " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kValidation, "empty metrics table " + path.string());
  const auto header = split_tabs(line);
  auto column = [&](const std::string& name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorCode::kValidation, "metrics table lacks column " + name);
    return static_cast<int>(it - header.begin());
  };
  const int c_alt = column("alternation"), c_miou = column("miou"), c_cov = column("pseudo_coverage"),
            c_gap = column("domain_gap"), c_std = column("domain_gap_std"),
            c_src = column("source_error"), c_tgt = column("target_error");
  std::vector<int> c_iou;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i].rfind("iou_", 0) == 0) c_iou.push_back(static_cast<int>(i));
  }
  std::vector<AlternationRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != header.size()) fail(ErrorCode::kValidation, "metrics table: ragged row");
    AlternationRecord r;
    r.alternation = static_cast<int>(parse_number(cells[c_alt]));
    r.miou = parse_number(cells[c_miou]);
    for (int c : c_iou) r.class_iou.push_back(parse_number(cells[c]));
    r.pseudo_coverage = parse_number(cells[c_cov]);
    r.domain_gap = parse_number(cells[c_gap]);
    r.domain_gap_std = parse_number(cells[c_std]);
    r.source_error = parse_number(cells[c_src]);
    r.target_error = parse_number(cells[c_tgt]);
    out.push_back(std::move(r));
  }
  return out;
}

fs::path write_report(const fs::path& run_dir, const fs::path& out) {
  const auto history = read_metrics_table(run_dir / "metrics.tsv");
  std::ostringstream text;
  text << "run: " << run_dir.string() << "\n\n";
  text << "alternation  mIoU      gap (d_hat +- std)   coverage  source_err  target_err\n";
  Series miou_s, gap_s, cov_s;
  for (const auto& r : history) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12d %-9.4f %.4f +- %.4f      %-9.4f %-11.4f %.4f\n", r.alternation,
                  r.miou, r.domain_gap, r.domain_gap_std, r.pseudo_coverage, r.source_error,
                  r.target_error);
    text << buf;
    miou_s.x.push_back(r.alternation);
    miou_s.y.push_back(r.miou);
    gap_s.x.push_back(r.alternation);
    gap_s.y.push_back(r.domain_gap);
    cov_s.x.push_back(r.alternation);
    cov_s.y.push_back(r.pseudo_coverage);
  }
  text << "\n";
  for (const auto& r : history) {
    GapEstimate gap;
    gap.d_hat = r.domain_gap;
    gap.d_hat_std = r.domain_gap_std;
    text << "k=" << r.alternation << "\n" << bound_report(r.source_error, gap, r.target_error) << "\n";
  }
  if (history.size() >= 2) {
    const auto& first = history.front();
    const auto& last = history.back();
    text << "\nmIoU change k=" << first.alternation << " -> k=" << last.alternation << ": "
         << fixed((last.miou - first.miou) * 100.0, 2) << " points\n";
    text << "gap change: " << fixed(last.domain_gap - first.domain_gap, 4) << "\n";
  }

  std::error_code ec;
  if (out.has_parent_path()) fs::create_directories(out.parent_path(), ec);
  std::ofstream file(out);
  file << text.str();
  if (!file) fail(ErrorCode::kIo, "cannot write " + out.string());

  const auto stem = out.parent_path() / out.stem();
  write_png(fs::path(stem.string() + "_miou.png"), render_line_plot(miou_s));
  write_png(fs::path(stem.string() + "_gap.png"), render_line_plot(gap_s));
  write_png(fs::path(stem.string() + "_coverage.png"), render_line_plot(cov_s));
  return out;
}

}  // namespace tfda
