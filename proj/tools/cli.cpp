#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "tfda/checkpoint.hpp"
#include "tfda/config.hpp"
#include "tfda/datasets.hpp"
#include "tfda/error.hpp"
#include "tfda/evalkit.hpp"
#include "tfda/orchestrator.hpp"
#include "tfda/report.hpp"

namespace tfda::cli {

namespace fs = std::filesystem;

namespace {

void print_error(std::ostream& err, const std::string& code, std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  err << "error code=" << code << " message=\"" << message << "\"\n";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

RunConfig config_with_seed(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig config = load_config(path);
  if (seed) {
    config.orchestrator.seed = *seed;
    config.dataset.seed = *seed;
  }
  config.validate();
  return config;
}

void check_classes(int checkpoint_k, const DomainPairDataset& data) {
  if (checkpoint_k != data.num_classes) {
    fail(ErrorCode::kValidation, "checkpoint has K=" + std::to_string(checkpoint_k) +
                                     " but the manifest has K=" + std::to_string(data.num_classes));
  }
}

}  // namespace

std::string config_help() {
  std::ostringstream out;
  out << "Configuration keys (section.key = default  [provenance]):\n";
  for (const auto& key : config_keys()) {
    out << "  " << key.section << "." << key.name << " = " << key.default_value << "  ["
        << key.provenance << "]\n      " << key.description << "\n";
  }
  return out.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tfda: transferability-aware domain adaptation for segmentation"};
  app.require_subcommand(1);
  app.footer(config_help());

  std::string config_path, out_path, resume_path, ckpt_path, data_path, run_path;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("generate-data", "Generate the synthetic domain pair");
  gen->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_path, "Output directory")->required();
  gen->add_option("--seed", seed, "Overrides dataset.seed and orchestrator.seed");

  auto* train = app.add_subcommand("train", "Run the alternating adaptation loop");
  train->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_path, "Run directory")->required();
  train->add_option("--resume", resume_path, "Checkpoint directory to continue from")->check(CLI::ExistingDirectory);
  train->add_option("--seed", seed, "Overrides dataset.seed and orchestrator.seed");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset's target_eval split");
  evaluate->add_option("--ckpt", ckpt_path, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--data", data_path, "Dataset manifest")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", out_path, "Metric table to write")->required();

  auto* gap = app.add_subcommand("diagnose-gap", "Estimate the feature-level domain gap of a checkpoint");
  gap->add_option("--ckpt", ckpt_path, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  gap->add_option("--data", data_path, "Dataset manifest")->required()->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "Render the text report and plots of a run");
  report->add_option("--run", run_path, "Run directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", out_path, "Report file to write")->required();

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "E_USAGE", e.what());
    return 1;
  }

  try {
    if (gen->parsed()) {
      const RunConfig config = config_with_seed(config_path, seed);
      const auto manifest = save_dataset(synth_generate(config.dataset), out_path);
      std::ofstream(fs::path(out_path) / "config.json") << serialize_config(config) << "\n";
      out << manifest.string() << "\n";
    } else if (train->parsed()) {
      const RunConfig config = config_with_seed(config_path, seed);
      std::optional<fs::path> resume;
      if (!resume_path.empty()) resume = fs::path(resume_path);
      const auto artifacts = alternate_train(config, out_path, resume);
      out << artifacts.metrics_table.string() << "\n";
    } else if (evaluate->parsed()) {
      const Checkpoint cp = checkpoint_load(ckpt_path);
      const DomainPairDataset data = load_dataset(data_path);
      NetworkSpec spec;
      auto seg = load_segmenter(cp, &spec);
      check_classes(spec.num_classes, data);
      const auto cm = evaluate_segmenter(seg, stack_images(data.target_eval),
                                         stack_masks(data.target_eval), data.num_classes);
      AlternationRecord rec;
      rec.alternation = cp.alternation;
      for (const auto& v : iou_per_class(cm)) rec.class_iou.push_back(v.value_or(std::nan("")));
      rec.miou = miou(cm);
      std::int64_t diag = 0;
      for (int c = 0; c < cm.num_classes(); ++c) diag += cm.at(c, c);
      rec.target_error = 1.0 - static_cast<double>(diag) / static_cast<double>(cm.total());
      rec.source_error = std::nan("");
      rec.pseudo_coverage = std::nan("");
      rec.domain_gap = std::nan("");
      rec.domain_gap_std = std::nan("");
      const fs::path table(out_path);
      if (table.has_parent_path()) ensure_dir(table.parent_path());
      std::ofstream file(table);
      file << metrics_table({rec}, data.num_classes);
      if (!file) fail(ErrorCode::kIo, "cannot write " + table.string());
      out << "miou " << rec.miou << "\n";
    } else if (gap->parsed()) {
      const Checkpoint cp = checkpoint_load(ckpt_path);
      const DomainPairDataset data = load_dataset(data_path);
      NetworkSpec spec;
      auto seg = load_segmenter(cp, &spec);
      check_classes(spec.num_classes, data);
      const RunConfig config = parse_config(cp.config_json);
      const auto xs = stack_images(data.source);
      const auto ys = stack_masks(data.source);
      GapOptions opts;
      opts.holdout_fraction = config.eval.holdout_fraction;
      opts.seeds = config.eval.gap_seeds;
      opts.iterations = config.eval.gap_iterations;
      opts.seed = config.orchestrator.seed;
      const auto estimate = domain_gap_estimate(pooled_features(seg, xs),
                                                pooled_features(seg, stack_images(data.target_train)), opts);
      auto error_of = [&](const ConfusionMatrix& cm) {
        std::int64_t diag = 0;
        for (int c = 0; c < cm.num_classes(); ++c) diag += cm.at(c, c);
        return 1.0 - static_cast<double>(diag) / static_cast<double>(cm.total());
      };
      const double eps_s = error_of(evaluate_segmenter(seg, xs, ys, data.num_classes));
      const double eps_t = error_of(evaluate_segmenter(seg, stack_images(data.target_eval),
                                                       stack_masks(data.target_eval), data.num_classes));
      char line[128];
      std::snprintf(line, sizeof(line), "d_hat %.6f std %.6f classifier_error %.6f\n", estimate.d_hat,
                    estimate.d_hat_std, estimate.classifier_error);
      out << line << bound_report(eps_s, estimate, eps_t) << "\n";
    } else if (report->parsed()) {
      out << write_report(run_path, out_path).string() << "\n";
    }
  } catch (const Error& e) {
    print_error(err, std::string(to_string(e.code())), e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    print_error(err, "E_INTERNAL", e.what());
    return 1;
  }
  return 0;
}

}  // namespace tfda::cli
