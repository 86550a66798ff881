#include "tfda/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <random>

#include "json.hpp"
#include "tfda/error.hpp"
#include "tfda/image_io.hpp"

namespace tfda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

using Rgb = std::array<double, 3>;

struct Blob {
  double cx = 0;
  double cy = 0;
  double radius = 0;
  double wobble = 0;
  double aspect = 1;
  double orientation = 0;
  std::array<double, 3> coeff{};
  std::array<double, 3> phase{};

  double extent() const { return radius * (1.0 + wobble) * aspect; }

  bool contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double c = std::cos(orientation);
    const double s = std::sin(orientation);
    const double u = (c * dx + s * dy) / aspect;
    const double v = (-s * dx + c * dy) * aspect;
    const double r = std::hypot(u, v);
    const double theta = std::atan2(v, u);
    double boundary = 1.0;
    for (int m = 0; m < 3; ++m) {
      boundary += wobble * coeff[m] * std::sin((m + 2) * theta + phase[m]);
    }
    return r <= radius * boundary;
  }
};

Rgb lesion_color(int cls) {
  static constexpr std::array<Rgb, 3> kPalette{{
      {0.50, 0.18, 0.18},
      {0.92, 0.86, 0.62},
      {0.30, 0.30, 0.48},
  }};
  if (cls - 1 < static_cast<int>(kPalette.size())) return kPalette[cls - 1];
  const double t = std::fmod(0.37 * cls, 1.0);
  return {0.2 + 0.6 * t, 0.8 - 0.5 * t, 0.3 + 0.4 * std::fmod(2 * t, 1.0)};
}

// Keeps the 4-connected component of `label` that contains (sx, sy), or the
// largest one when the seed pixel was overwritten; other pixels become 0.
void keep_one_component(std::vector<std::int64_t>& mask, int size,
                        std::int64_t label, int sx, int sy) {
  std::vector<int> component(mask.size(), -1);
  std::vector<int> sizes;
  for (int start = 0; start < static_cast<int>(mask.size()); ++start) {
    if (mask[start] != label || component[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    std::queue<int> frontier;
    frontier.push(start);
    component[start] = id;
    while (!frontier.empty()) {
      const int p = frontier.front();
      frontier.pop();
      ++sizes[id];
      const int x = p % size;
      const int y = p / size;
      const std::array<std::pair<int, int>, 4> nbrs{
          {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}}};
      for (auto [nx, ny] : nbrs) {
        if (nx < 0 || ny < 0 || nx >= size || ny >= size) continue;
        const int q = ny * size + nx;
        if (mask[q] == label && component[q] < 0) {
          component[q] = id;
          frontier.push(q);
        }
      }
    }
  }
  if (sizes.empty()) return;
  int keep = component[sy * size + sx];
  if (keep < 0) {
    keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) -
                            sizes.begin());
  }
  for (size_t p = 0; p < mask.size(); ++p) {
    if (mask[p] == label && component[p] != keep) mask[p] = 0;
  }
}

std::mt19937_64 example_rng(std::uint64_t seed, Split split, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  return std::mt19937_64(seq);
}

struct Rendered {
  Raster image;
  Raster mask;
};

Rendered render_example(const SynthConfig& cfg, Split split, int index) {
  const bool target = split != Split::kSource;
  const int size = cfg.image_size;
  const int classes = cfg.num_classes;
  auto rng = example_rng(cfg.seed, split, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Rgb background{0.80, 0.45, 0.40};
  for (double& c : background) c += uniform(-0.05, 0.05);

  struct Wave {
    double fx, fy, phase, amplitude;
  };
  std::array<Wave, 3> waves{};
  for (auto& w : waves) {
    const double freq = uniform(1.0, 3.0);
    const double dir = uniform(0.0, 2 * std::numbers::pi);
    w = {freq * std::cos(dir), freq * std::sin(dir),
         uniform(0.0, 2 * std::numbers::pi), uniform(0.02, 0.05)};
  }

  const double deform = target ? cfg.shift.shape_deform : 0.0;
  std::vector<Blob> blobs;
  std::vector<Rgb> colors;
  const double shrink = 1.0 / std::sqrt(static_cast<double>(classes - 1));
  for (int cls = 1; cls < classes; ++cls) {
    Blob blob;
    blob.radius = size * uniform(0.14, 0.24) * cfg.lesion_scale * shrink;
    blob.radius = std::max(blob.radius, 2.0);
    blob.wobble = 0.12 + 0.30 * deform;
    blob.aspect = 1.0 + 0.8 * deform * unit(rng);
    blob.orientation = uniform(0.0, std::numbers::pi);
    for (int m = 0; m < 3; ++m) {
      blob.coeff[m] = uniform(-1.0, 1.0) / 3.0;
      blob.phase[m] = uniform(0.0, 2 * std::numbers::pi);
    }
    const double margin = std::min(blob.extent() + 1.0, size / 2.0 - 1.0);
    for (int attempt = 0; attempt < 50; ++attempt) {
      blob.cx = uniform(margin, size - margin);
      blob.cy = uniform(margin, size - margin);
      bool clear = true;
      for (const Blob& other : blobs) {
        if (std::hypot(blob.cx - other.cx, blob.cy - other.cy) <
            blob.extent() + other.extent() + 2.0) {
          clear = false;
          break;
        }
      }
      if (clear) break;
    }
    Rgb color = lesion_color(cls);
    for (double& c : color) c += uniform(-0.05, 0.05);
    blobs.push_back(blob);
    colors.push_back(color);
  }

  std::vector<std::int64_t> labels(static_cast<size_t>(size) * size, 0);
  for (int cls = 1; cls < classes; ++cls) {
    const Blob& blob = blobs[cls - 1];
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (blob.contains(x + 0.5, y + 0.5)) labels[y * size + x] = cls;
      }
    }
  }
  for (int cls = 1; cls < classes; ++cls) {
    const Blob& blob = blobs[cls - 1];
    const int sx = std::clamp(static_cast<int>(blob.cx), 0, size - 1);
    const int sy = std::clamp(static_cast<int>(blob.cy), 0, size - 1);
    keep_one_component(labels, size, cls, sx, sy);
  }

  const double shift = target ? cfg.shift.color_shift : 0.0;
  const double noise_sigma = target ? cfg.shift.texture_noise_sigma : 0.0;
  Rendered out;
  out.image = {size, size, 3, std::vector<std::uint8_t>(size * size * 3)};
  out.mask = {size, size, 1, std::vector<std::uint8_t>(size * size)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size;
      const double v = (y + 0.5) / size;
      double texture = 0.0;
      for (const auto& w : waves) {
        texture += w.amplitude *
                   std::sin(2 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
      }
      const std::int64_t cls = labels[y * size + x];
      Rgb pixel;
      if (cls == 0) {
        for (int c = 0; c < 3; ++c) pixel[c] = background[c] + texture;
      } else {
        const Blob& blob = blobs[cls - 1];
        const double rel =
            std::min(1.0, std::hypot(x + 0.5 - blob.cx, y + 0.5 - blob.cy) /
                              blob.radius);
        for (int c = 0; c < 3; ++c) {
          pixel[c] = colors[cls - 1][c] * (0.9 + 0.1 * rel) + 0.5 * texture;
        }
      }
      for (double& c : pixel) c += 0.015 * gauss(rng);
      if (shift > 0.0) {
        const Rgb src = pixel;
        for (int c = 0; c < 3; ++c) {
          pixel[c] = (1.0 - shift) * src[c] + shift * (1.0 - src[(c + 1) % 3]);
        }
      }
      if (noise_sigma > 0.0) {
        for (double& c : pixel) c += noise_sigma * gauss(rng);
      }
      for (int c = 0; c < 3; ++c) {
        const double clamped = std::clamp(pixel[c], 0.0, 1.0);
        out.image.pixels[(y * size + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(clamped * 255.0));
      }
      out.mask.pixels[y * size + x] = static_cast<std::uint8_t>(cls);
    }
  }
  return out;
}

torch::Tensor image_from_raster(const Raster& raster) {
  auto bytes = torch::from_blob(const_cast<std::uint8_t*>(raster.pixels.data()),
                                {raster.height, raster.width, 3}, torch::kUInt8);
  return bytes.permute({2, 0, 1}).to(torch::kFloat32).div(255.0f).contiguous();
}

torch::Tensor mask_from_raster(const Raster& raster) {
  auto bytes = torch::from_blob(const_cast<std::uint8_t*>(raster.pixels.data()),
                                {raster.height, raster.width}, torch::kUInt8);
  return bytes.to(torch::kInt64).contiguous();
}

Raster raster_from_image(const torch::Tensor& image) {
  auto bytes = image.detach()
                   .to(torch::kFloat32)
                   .clamp(0.0, 1.0)
                   .mul(255.0f)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  Raster raster{static_cast<int>(image.size(2)), static_cast<int>(image.size(1)),
                3, {}};
  raster.pixels.assign(bytes.data_ptr<std::uint8_t>(),
                       bytes.data_ptr<std::uint8_t>() + bytes.numel());
  return raster;
}

Raster raster_from_mask(const torch::Tensor& mask) {
  auto bytes = mask.to(torch::kUInt8).contiguous();
  Raster raster{static_cast<int>(mask.size(1)), static_cast<int>(mask.size(0)),
                1, {}};
  raster.pixels.assign(bytes.data_ptr<std::uint8_t>(),
                       bytes.data_ptr<std::uint8_t>() + bytes.numel());
  return raster;
}

constexpr std::array<Split, 3> kSplits{Split::kSource, Split::kTargetTrain,
                                       Split::kTargetEval};

}  // namespace

void SynthConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "dataset." + field + ": " + why);
  };
  if (image_size < 16) bad("image_size", "must be >= 16");
  if (num_classes < 2) bad("num_classes", "must be >= 2");
  if (num_classes > 255) bad("num_classes", "must fit an 8-bit index raster");
  if (num_source < 1) bad("num_source", "must be >= 1");
  if (num_target < 1) bad("num_target", "must be >= 1");
  if (num_target_eval < 1) bad("num_target_eval", "must be >= 1");
  if (!(lesion_scale > 0.0 && lesion_scale <= 2.0)) {
    bad("lesion_scale", "must be in (0, 2]");
  }
  if (!(shift.color_shift >= 0.0 && shift.color_shift <= 1.0)) {
    bad("shift.color_shift", "must be in [0, 1]");
  }
  if (!(shift.texture_noise_sigma >= 0.0)) {
    bad("shift.texture_noise_sigma", "must be >= 0");
  }
  if (!(shift.shape_deform >= 0.0 && shift.shape_deform <= 1.0)) {
    bad("shift.shape_deform", "must be in [0, 1]");
  }
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kSource:
      return "source";
    case Split::kTargetTrain:
      return "target_train";
    case Split::kTargetEval:
      return "target_eval";
  }
  return "unknown";
}

const std::vector<LabeledExample>& DomainPairDataset::split(Split which) const {
  switch (which) {
    case Split::kSource:
      return source;
    case Split::kTargetTrain:
      return target_train;
    case Split::kTargetEval:
      return target_eval;
  }
  fail(ErrorCode::kInternal, "unknown split");
}

DomainPairDataset synth_generate(const SynthConfig& config) {
  config.validate();
  DomainPairDataset ds;
  ds.num_classes = config.num_classes;
  ds.image_size = config.image_size;
  auto fill = [&](Split split, int count, bool keep_mask,
                  std::vector<LabeledExample>& out) {
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
      Rendered r = render_example(config, split, i);
      LabeledExample ex{image_from_raster(r.image), std::nullopt};
      if (keep_mask) ex.mask = mask_from_raster(r.mask);
      out.push_back(std::move(ex));
    }
  };
  fill(Split::kSource, config.num_source, true, ds.source);
  fill(Split::kTargetTrain, config.num_target, false, ds.target_train);
  fill(Split::kTargetEval, config.num_target_eval, true, ds.target_eval);
  return ds;
}

fs::path save_dataset(const DomainPairDataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  json manifest{{"version", kManifestVersion},
                {"K", dataset.num_classes},
                {"image_size", dataset.image_size},
                {"splits", json::array()}};
  for (Split split : kSplits) {
    const std::string name(split_name(split));
    fs::create_directories(dir / name, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + (dir / name).string());
    json entries = json::array();
    const auto& examples = dataset.split(split);
    for (size_t i = 0; i < examples.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%05zu", i);
      const std::string image_rel = name + "/img_" + stem + ".png";
      write_png(dir / image_rel, raster_from_image(examples[i].image));
      json entry{{"image", image_rel}, {"mask", nullptr}};
      if (examples[i].mask) {
        const std::string mask_rel = name + "/mask_" + stem + ".png";
        write_png(dir / mask_rel, raster_from_mask(*examples[i].mask));
        entry["mask"] = mask_rel;
      }
      entries.push_back(std::move(entry));
    }
    manifest["splits"].push_back({{"name", name}, {"entries", std::move(entries)}});
  }
  const fs::path path = dir / "manifest.json";
  std::ofstream out(path);
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  return path;
}

DomainPairDataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::kValidation, "missing manifest " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation,
         "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const fs::path root = manifest_path.parent_path();
  DomainPairDataset ds;
  try {
    if (manifest.at("version").get<int>() != kManifestVersion) {
      fail(ErrorCode::kValidation, "unsupported manifest version");
    }
    ds.num_classes = manifest.at("K").get<int>();
    ds.image_size = manifest.at("image_size").get<int>();
    if (ds.num_classes < 2 || ds.image_size < 1) {
      fail(ErrorCode::kValidation, "manifest K/image_size out of range");
    }
    for (const json& split_json : manifest.at("splits")) {
      const auto name = split_json.at("name").get<std::string>();
      std::vector<LabeledExample>* target = nullptr;
      Split split{};
      for (Split s : kSplits) {
        if (split_name(s) == name) {
          split = s;
          target = s == Split::kSource        ? &ds.source
                   : s == Split::kTargetTrain ? &ds.target_train
                                              : &ds.target_eval;
        }
      }
      if (target == nullptr) fail(ErrorCode::kValidation, "unknown split " + name);
      for (const json& entry : split_json.at("entries")) {
        const fs::path image_path = root / entry.at("image").get<std::string>();
        const Raster image = read_png(image_path, 3);
        if (image.width != ds.image_size || image.height != ds.image_size) {
          fail(ErrorCode::kValidation,
               "image size mismatch in " + image_path.string());
        }
        LabeledExample ex{image_from_raster(image), std::nullopt};
        const json& mask_json = entry.at("mask");
        if (split == Split::kTargetTrain && !mask_json.is_null()) {
          fail(ErrorCode::kValidation,
               "target_train entry carries a mask: " + image_path.string());
        }
        if (split != Split::kTargetTrain && mask_json.is_null()) {
          fail(ErrorCode::kValidation,
               std::string(name) + " entry lacks a mask: " + image_path.string());
        }
        if (!mask_json.is_null()) {
          const fs::path mask_path = root / mask_json.get<std::string>();
          const Raster mask = read_png(mask_path, 1);
          if (mask.width != image.width || mask.height != image.height) {
            fail(ErrorCode::kValidation,
                 "mask/image size mismatch in " + mask_path.string());
          }
          for (std::uint8_t v : mask.pixels) {
            if (v >= ds.num_classes) {
              fail(ErrorCode::kValidation,
                   "mask value " + std::to_string(v) + " >= K in " +
                       mask_path.string());
            }
          }
          ex.mask = mask_from_raster(mask);
        }
        target->push_back(std::move(ex));
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation,
         "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (ds.source.empty() || ds.target_train.empty() || ds.target_eval.empty()) {
    fail(ErrorCode::kValidation, "manifest must list source, target_train and "
                                 "target_eval entries");
  }
  return ds;
}

bool datasets_equal(const DomainPairDataset& a, const DomainPairDataset& b) {
  if (a.num_classes != b.num_classes || a.image_size != b.image_size) return false;
  for (Split split : kSplits) {
    const auto& xs = a.split(split);
    const auto& ys = b.split(split);
    if (xs.size() != ys.size()) return false;
    for (size_t i = 0; i < xs.size(); ++i) {
      if (!torch::equal(xs[i].image, ys[i].image)) return false;
      if (xs[i].mask.has_value() != ys[i].mask.has_value()) return false;
      if (xs[i].mask && !torch::equal(*xs[i].mask, *ys[i].mask)) return false;
    }
  }
  return true;
}

torch::Tensor stack_images(const std::vector<LabeledExample>& examples) {
  std::vector<torch::Tensor> images;
  images.reserve(examples.size());
  for (const auto& ex : examples) images.push_back(ex.image);
  return torch::stack(images);
}

torch::Tensor stack_masks(const std::vector<LabeledExample>& examples) {
  std::vector<torch::Tensor> masks;
  masks.reserve(examples.size());
  for (const auto& ex : examples) {
    if (!ex.mask) fail(ErrorCode::kInternal, "stack_masks: example without mask");
    masks.push_back(*ex.mask);
  }
  return torch::stack(masks);
}

torch::Tensor quantize_image(const torch::Tensor& image) {
  return image.detach().clamp(0.0, 1.0).mul(255.0f).round().div(255.0f);
}

}  // namespace tfda
