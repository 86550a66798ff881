#include "tfda/orchestrator.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>

#include "json.hpp"
#include "tfda/batching.hpp"
#include "tfda/error.hpp"
#include "tfda/image_io.hpp"
#include "tfda/report.hpp"

namespace tfda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Phase : std::uint64_t {
  kInit = 1,
  kBaseline = 2,
  kTranslation = 3,
  kFeature = 4,
  kReinit = 5,
  kGap = 6,
};

std::string alternation_dir(int k) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "k%d", k);
  return buf;
}

class RunLog {
 public:
  RunLog(const fs::path& path, bool append)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) fail(ErrorCode::kIo, "cannot open run log " + path.string());
  }

  void write(const json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) fail(ErrorCode::kIo, "cannot append to run log (disk full?)");
  }

 private:
  std::ofstream out_;
};

json bundle_json(const LossBundle& bundle) {
  json out = json::object();
  for (const auto& [name, value] : bundle.terms) out[name] = value;
  out["lambda_s"] = bundle.lambda_s;
  out["lambda_t"] = bundle.lambda_t;
  return out;
}

struct EvalInputs {
  const torch::Tensor& source_images;  // images the segmenter was supervised on
  const torch::Tensor& source_labels;
  const torch::Tensor& target_images;  // unlabelled target training images
  const torch::Tensor& eval_images;
  const torch::Tensor& eval_labels;
};

AlternationRecord evaluate_alternation(Segmenter& seg, const EvalInputs& in, int num_classes,
                                       const EvalConfig& eval, std::uint64_t gap_seed, int k) {
  AlternationRecord rec;
  rec.alternation = k;
  const auto cm = evaluate_segmenter(seg, in.eval_images, in.eval_labels, num_classes);
  for (const auto& v : iou_per_class(cm)) {
    rec.class_iou.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
  }
  rec.miou = miou(cm);
  auto error_of = [&](const ConfusionMatrix& m) {
    std::int64_t diag = 0;
    for (int c = 0; c < m.num_classes(); ++c) diag += m.at(c, c);
    return 1.0 - static_cast<double>(diag) / static_cast<double>(std::max<std::int64_t>(1, m.total()));
  };
  rec.target_error = error_of(cm);
  rec.source_error =
      error_of(evaluate_segmenter(seg, in.source_images, in.source_labels, num_classes));
  GapOptions opts;
  opts.holdout_fraction = eval.holdout_fraction;
  opts.seeds = eval.gap_seeds;
  opts.iterations = eval.gap_iterations;
  opts.seed = gap_seed;
  const auto gap = domain_gap_estimate(pooled_features(seg, in.source_images),
                                       pooled_features(seg, in.target_images), opts);
  rec.domain_gap = gap.d_hat;
  rec.domain_gap_std = gap.d_hat_std;
  return rec;
}

json record_json(const AlternationRecord& r) {
  json ious = json::array();
  for (double v : r.class_iou) ious.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return {{"alternation", r.alternation},     {"miou", r.miou},
          {"class_iou", ious},                {"pseudo_coverage", r.pseudo_coverage},
          {"domain_gap", r.domain_gap},       {"domain_gap_std", r.domain_gap_std},
          {"source_error", r.source_error},   {"target_error", r.target_error}};
}

void save_translated(const torch::Tensor& images, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string());
  const auto bytes = images.clamp(0.0, 1.0).mul(255.0f).round().to(torch::kUInt8)
                         .permute({0, 2, 3, 1}).contiguous();
  const int64_t h = images.size(2), w = images.size(3);
  for (int64_t i = 0; i < images.size(0); ++i) {
    const auto* p = bytes[i].data_ptr<std::uint8_t>();
    Raster r{static_cast<int>(w), static_cast<int>(h), 3,
             std::vector<std::uint8_t>(p, p + h * w * 3)};
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05lld.png", static_cast<long long>(i));
    write_png(dir / name, r);
  }
}

Segmenter train_baseline(const RunConfig& config, const torch::Tensor& images,
                         const torch::Tensor& labels, RunLog& log) {
  const std::uint64_t seed = config.orchestrator.seed;
  torch::manual_seed(derive_seed(seed, kBaseline));
  std::mt19937_64 rng(derive_seed(seed, kBaseline, 1));
  auto seg = build_segmenter(config.networks);
  seg->train();
  const auto& hyper = config.tf;
  torch::optim::SGD opt(seg->parameters(),
                        torch::optim::SGDOptions(hyper.seg_learning_rate).momentum(hyper.seg_momentum));
  const int64_t n = images.size(0);
  const int64_t steps = (n + hyper.batch_size - 1) / hyper.batch_size;
  const int64_t total = steps * config.orchestrator.baseline_epochs;
  int64_t iteration = 0;
  for (int epoch = 0; epoch < config.orchestrator.baseline_epochs; ++epoch) {
    PairedBatches batches(n, n, hyper.batch_size, rng);
    double sum = 0.0;
    for (int64_t step = 0; step < batches.steps(); ++step) {
      const auto idx = batches.indices_a(step);
      const double lr = hyper.seg_learning_rate *
                        std::pow(1.0 - static_cast<double>(iteration) / total, hyper.seg_power);
      for (auto& group : opt.param_groups()) {
        static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
      }
      const auto logits = seg->forward(images.index_select(0, idx)).logits;
      const auto loss = seg_loss(logits, labels.index_select(0, idx), torch::Tensor(), {});
      const double value = loss.item<double>();
      check_finite(value, "baseline seg_loss");
      opt.zero_grad();
      loss.backward();
      if (hyper.seg_clip_norm > 0) torch::nn::utils::clip_grad_norm_(seg->parameters(), hyper.seg_clip_norm);
      opt.step();
      sum += value;
      ++iteration;
    }
    log.write({{"phase", "baseline"}, {"epoch", epoch}, {"seg_loss", sum / batches.steps()}});
  }
  seg->eval();
  return seg;
}

void rebuild_discriminators(PipelineState& state, std::uint64_t seed) {
  torch::manual_seed(seed);
  state.td.nets.d1 = build_discriminator(state.spec, DiscriminatorKind::kImage);
  state.td.nets.d2 = build_discriminator(state.spec, DiscriminatorKind::kImage);
  state.tf.df = build_discriminator(state.spec, DiscriminatorKind::kFeature);
}

double elapsed_seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

PipelineState PipelineState::build(const RunConfig& config, std::uint64_t init_seed) {
  torch::manual_seed(init_seed);
  PipelineState state;
  state.spec = config.networks;
  state.image_size = config.dataset.image_size;
  state.td.nets = TdNets::build(state.spec);
  state.td.lambda_s = config.td.lambda_init;
  state.td.lambda_t = config.td.lambda_init;
  state.tf = TfNets::build(state.spec, state.image_size, config.attention_norm);
  return state;
}

TransferabilityMap perceive_transferability(Segmenter& seg, Discriminator& df,
                                            const torch::Tensor& images,
                                            const std::string& provenance, int64_t chunk) {
  torch::NoGradGuard guard;
  const bool seg_training = seg->is_training();
  seg->eval();
  std::vector<torch::Tensor> outs;
  for (int64_t start = 0; start < images.size(0); start += chunk) {
    const int64_t len = std::min(chunk, images.size(0) - start);
    outs.push_back(df->forward(seg->forward(images.narrow(0, start, len)).high));
  }
  seg->train(seg_training);
  return transferability(torch::cat(outs), provenance);
}

torch::Tensor pooled_features(Segmenter& seg, const torch::Tensor& images, int64_t chunk) {
  torch::NoGradGuard guard;
  const bool training = seg->is_training();
  seg->eval();
  std::vector<torch::Tensor> outs;
  for (int64_t start = 0; start < images.size(0); start += chunk) {
    const int64_t len = std::min(chunk, images.size(0) - start);
    outs.push_back(seg->forward(images.narrow(0, start, len)).high.mean({2, 3}));
  }
  seg->train(training);
  return torch::cat(outs);
}

ConfusionMatrix evaluate_segmenter(Segmenter& seg, const torch::Tensor& images,
                                   const torch::Tensor& masks, int num_classes) {
  const auto probs = predict_probs(seg, images);
  return confusion(probs.argmax(1), masks, num_classes);
}

Checkpoint make_checkpoint(const RunConfig& config, const PipelineState& state,
                           const std::vector<AlternationRecord>& history) {
  Checkpoint cp;
  cp.config_hash = config_hash(config);
  cp.config_json = serialize_config(config);
  cp.alternation = state.alternation;
  cp.lambda_s = state.td.lambda_s;
  cp.lambda_t = state.td.lambda_t;
  collect_arrays("s2t", *state.td.nets.s2t, cp.arrays);
  collect_arrays("t2s", *state.td.nets.t2s, cp.arrays);
  collect_arrays("d1", *state.td.nets.d1, cp.arrays);
  collect_arrays("d2", *state.td.nets.d2, cp.arrays);
  collect_arrays("seg", *state.tf.seg, cp.arrays);
  collect_arrays("aug", *state.tf.aug, cp.arrays);
  collect_arrays("df", *state.tf.df, cp.arrays);
  cp.history_json = history_to_json(history);
  return cp;
}

Segmenter load_segmenter(const Checkpoint& checkpoint, NetworkSpec* spec_out) {
  const RunConfig config = parse_config(checkpoint.config_json);
  auto seg = build_segmenter(config.networks);
  restore_arrays("seg", *seg, checkpoint.arrays);
  seg->eval();
  if (spec_out != nullptr) *spec_out = config.networks;
  return seg;
}

std::string history_to_json(const std::vector<AlternationRecord>& history) {
  json out = json::array();
  for (const auto& r : history) out.push_back(record_json(r));
  return out.dump();
}

std::vector<AlternationRecord> history_from_json(const std::string& text) {
  std::vector<AlternationRecord> out;
  try {
    for (const json& j : json::parse(text)) {
      AlternationRecord r;
      r.alternation = j.at("alternation").get<int>();
      r.miou = j.at("miou").get<double>();
      for (const json& v : j.at("class_iou")) {
        r.class_iou.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
      }
      r.pseudo_coverage = j.at("pseudo_coverage").get<double>();
      r.domain_gap = j.at("domain_gap").get<double>();
      r.domain_gap_std = j.at("domain_gap_std").get<double>();
      r.source_error = j.at("source_error").get<double>();
      r.target_error = j.at("target_error").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, std::string("malformed metric history: ") + e.what());
  }
  return out;
}

std::string metrics_table(const std::vector<AlternationRecord>& history, int num_classes) {
  std::string out = "alternation\tmiou";
  for (int k = 0; k < num_classes; ++k) out += "\tiou_" + std::to_string(k);
  out += "\tpseudo_coverage\tdomain_gap\tdomain_gap_std\tsource_error\ttarget_error\n";
  auto num = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : history) {
    out += std::to_string(r.alternation) + "\t" + num(r.miou);
    for (int k = 0; k < num_classes; ++k) {
      out += "\t" + num(k < static_cast<int>(r.class_iou.size()) ? r.class_iou[k]
                                                                 : std::numeric_limits<double>::quiet_NaN());
    }
    out += "\t" + num(r.pseudo_coverage) + "\t" + num(r.domain_gap) + "\t" + num(r.domain_gap_std) +
           "\t" + num(r.source_error) + "\t" + num(r.target_error) + "\n";
  }
  return out;
}

RunArtifacts alternate_train(const RunConfig& config, const fs::path& out_dir,
                             const std::optional<fs::path>& resume) {
  config.validate();
  torch::set_num_threads(1);
  std::error_code ec;
  fs::create_directories(out_dir / "checkpoints", ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + out_dir.string() + ": " + ec.message());

  RunArtifacts artifacts;
  artifacts.out_dir = out_dir;
  artifacts.run_log = out_dir / "run_log.jsonl";
  artifacts.metrics_table = out_dir / "metrics.tsv";
  RunLog log(artifacts.run_log, resume.has_value());
  {
    std::ofstream cfg(out_dir / "config.json");
    cfg << serialize_config(config) << '\n';
    if (!cfg) fail(ErrorCode::kIo, "cannot write " + (out_dir / "config.json").string());
  }
  const std::uint64_t seed = config.orchestrator.seed;
  const auto started = std::chrono::steady_clock::now();

  DomainPairDataset dataset;
  if (config.manifest.empty()) {
    dataset = synth_generate(config.dataset);
    save_dataset(dataset, out_dir / "data");
  } else {
    dataset = load_dataset(config.manifest);
  }
  if (dataset.num_classes != config.dataset.num_classes ||
      dataset.image_size != config.dataset.image_size) {
    fail(ErrorCode::kValidation, "dataset K/image_size disagree with the configuration");
  }
  const int num_classes = dataset.num_classes;

  // Only source and target_train feed optimisers; target_eval is scored only.
  const auto xs = stack_images(dataset.source);
  const auto ys = stack_masks(dataset.source);
  const auto xt = stack_images(dataset.target_train);
  artifacts.training_splits = {Split::kSource, Split::kTargetTrain};
  const auto xe = stack_images(dataset.target_eval);
  const auto ye = stack_masks(dataset.target_eval);

  PipelineState state = PipelineState::build(config, derive_seed(seed, kInit));
  const std::string hash = config_hash(config);
  int start_k = 1;
  bool baseline_done = false;
  if (resume) {
    const Checkpoint cp = checkpoint_load(*resume);
    if (cp.config_hash != hash) {
      fail(ErrorCode::kValidation, "checkpoint " + resume->string() +
                                       " was written with a different configuration");
    }
    artifacts.history = history_from_json(cp.history_json);
    if (cp.alternation > 0) {
      restore_arrays("s2t", *state.td.nets.s2t, cp.arrays);
      restore_arrays("t2s", *state.td.nets.t2s, cp.arrays);
      restore_arrays("d1", *state.td.nets.d1, cp.arrays);
      restore_arrays("d2", *state.td.nets.d2, cp.arrays);
      restore_arrays("seg", *state.tf.seg, cp.arrays);
      restore_arrays("aug", *state.tf.aug, cp.arrays);
      restore_arrays("df", *state.tf.df, cp.arrays);
      state.td.lambda_s = cp.lambda_s;
      state.td.lambda_t = cp.lambda_t;
    }
    state.alternation = cp.alternation;
    start_k = cp.alternation + 1;
    baseline_done = true;
    for (int k = 0; k <= cp.alternation; ++k) {
      artifacts.checkpoints.push_back(resume->parent_path() / alternation_dir(k));
    }
  }

  auto write_table = [&] {
    std::ofstream out(artifacts.metrics_table);
    out << metrics_table(artifacts.history, num_classes);
    if (!out) fail(ErrorCode::kIo, "cannot write " + artifacts.metrics_table.string());
  };

  if (!baseline_done && config.orchestrator.baseline_epochs > 0) {
    auto base = train_baseline(config, xs, ys, log);
    EvalInputs in{xs, ys, xt, xe, ye};
    auto rec = evaluate_alternation(base, in, num_classes, config.eval, derive_seed(seed, kGap, 0), 0);
    rec.pseudo_coverage = pseudo_labels(predict_probs(base, xt), config.tf.beta).coverage();
    artifacts.history.push_back(rec);
    {
      json j{{"phase", "eval"}};
      j.update(record_json(rec));
      log.write(j);
    }
    Checkpoint cp;
    cp.config_hash = hash;
    cp.config_json = serialize_config(config);
    cp.alternation = 0;
    cp.lambda_s = state.td.lambda_s;
    cp.lambda_t = state.td.lambda_t;
    collect_arrays("seg", *base, cp.arrays);
    cp.history_json = history_to_json(artifacts.history);
    const auto dir = out_dir / "checkpoints" / alternation_dir(0);
    checkpoint_save(cp, dir);
    artifacts.checkpoints.push_back(dir);
    write_table();
    std::cerr << "[tfda] baseline mIoU " << rec.miou << " gap " << rec.domain_gap << " ("
              << elapsed_seconds(started) << " s)\n";
  }

  const int64_t high = state.spec.high_size(state.image_size);
  for (int k = start_k; k <= config.orchestrator.alternation_count; ++k) {
    std::string phase = "td";
    try {
      if (config.orchestrator.reinit_discriminators) {
        rebuild_discriminators(state, derive_seed(seed, kReinit, k));
      }
      // Transferability comes from the previous round's Step III discriminator.
      const std::string provenance = "step3:round=" + std::to_string(k - 1);
      auto snapshot_seg = build_segmenter(state.spec);
      copy_parameters(*state.tf.seg, *snapshot_seg);
      auto snapshot_df = build_discriminator(state.spec, DiscriminatorKind::kFeature);
      copy_parameters(*state.tf.df, *snapshot_df);
      auto perceive = [&](const torch::Tensor& images) {
        if (k == 1) return zero_transferability(images.size(0), high, high);
        return resize_to(perceive_transferability(snapshot_seg, snapshot_df, images, provenance),
                         high, high);
      };

      torch::manual_seed(derive_seed(seed, kTranslation, k));
      std::mt19937_64 td_rng(derive_seed(seed, kTranslation, 1000 + k));
      TdData td_data{xs, xt, perceive(xs), perceive(xt)};
      TdTrainer td_trainer(state.td, config.td);
      for (int epoch = 0; epoch < config.td.epochs; ++epoch) {
        const auto rec = td_trainer.train_epoch(td_data, epoch, td_rng);
        json j{{"phase", "td"}, {"alternation", k}, {"epoch", epoch}, {"lr", rec.learning_rate}};
        j.update(bundle_json(rec.losses));
        log.write(j);
      }
      std::cerr << "[tfda] k=" << k << " T_D done (" << elapsed_seconds(started) << " s)\n";

      phase = "translate";
      const auto xs_hat = quantize_image(translate_all(state.td.nets.s2t, xs));
      save_translated(xs_hat, out_dir / "translated" / alternation_dir(k));

      phase = "tf";
      torch::manual_seed(derive_seed(seed, kFeature, k));
      std::mt19937_64 tf_rng(derive_seed(seed, kFeature, 1000 + k));
      TfData tf_data{xs_hat, ys, xt, perceive(xs_hat), perceive(xt)};
      TfTrainer tf_trainer(state.tf, config.tf);
      const auto tf_rec = tf_trainer.train_round(tf_data, k, tf_rng);
      log.write({{"phase", "tf"},
                 {"round", k},
                 {"seg_loss", tf_rec.seg_loss},
                 {"aug_loss", tf_rec.aug_loss},
                 {"align_loss", tf_rec.align_loss},
                 {"pseudo_coverage", tf_rec.pseudo_coverage},
                 {"provenance", tf_data.p_source.provenance}});

      phase = "eval";
      state.alternation = k;
      EvalInputs in{xs_hat, ys, xt, xe, ye};
      auto rec = evaluate_alternation(state.tf.seg, in, num_classes, config.eval,
                                      derive_seed(seed, kGap, k), k);
      rec.pseudo_coverage = pseudo_labels(predict_probs(state.tf.seg, xt), config.tf.beta).coverage();
      artifacts.history.push_back(rec);
      {
      json j{{"phase", "eval"}};
      j.update(record_json(rec));
      log.write(j);
    }

      phase = "checkpoint";
      const auto dir = out_dir / "checkpoints" / alternation_dir(k);
      checkpoint_save(make_checkpoint(config, state, artifacts.history), dir);
      artifacts.checkpoints.push_back(dir);
      write_table();
      std::cerr << "[tfda] k=" << k << " mIoU " << rec.miou << " gap " << rec.domain_gap
                << " coverage " << rec.pseudo_coverage << " (" << elapsed_seconds(started)
                << " s)\n";
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDivergence) throw;
      const auto dir = out_dir / "checkpoints" / ("partial_" + alternation_dir(k) + "_" + phase);
      checkpoint_save(make_checkpoint(config, state, artifacts.history), dir);
      throw Error(ErrorCode::kDivergence,
                  "phase " + phase + " (alternation " + std::to_string(k) + "): " + e.what());
    }
  }

  write_table();
  write_report(out_dir, out_dir / "report.txt");
  return artifacts;
}

std::vector<AlternationRecord> evaluate_run(const RunArtifacts& artifacts,
                                            const DomainPairDataset& dataset,
                                            const EvalConfig& eval) {
  (void)eval;
  std::vector<AlternationRecord> out;
  const auto xe = stack_images(dataset.target_eval);
  const auto ye = stack_masks(dataset.target_eval);
  for (size_t i = 0; i < artifacts.checkpoints.size(); ++i) {
    const Checkpoint cp = checkpoint_load(artifacts.checkpoints[i]);
    NetworkSpec spec;
    auto seg = load_segmenter(cp, &spec);
    if (spec.num_classes != dataset.num_classes) {
      fail(ErrorCode::kValidation, "checkpoint K=" + std::to_string(spec.num_classes) +
                                       " does not match dataset K=" +
                                       std::to_string(dataset.num_classes));
    }
    AlternationRecord rec;
    for (const auto& r : artifacts.history) {
      if (r.alternation == cp.alternation) rec = r;
    }
    rec.alternation = cp.alternation;
    const auto cm = evaluate_segmenter(seg, xe, ye, dataset.num_classes);
    rec.class_iou.clear();
    for (const auto& v : iou_per_class(cm)) {
      rec.class_iou.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
    rec.miou = miou(cm);
    std::int64_t diag = 0;
    for (int c = 0; c < cm.num_classes(); ++c) diag += cm.at(c, c);
    rec.target_error = 1.0 - static_cast<double>(diag) / static_cast<double>(cm.total());
    out.push_back(rec);
  }
  return out;
}

}  // namespace tfda
