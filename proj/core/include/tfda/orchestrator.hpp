#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tfda/checkpoint.hpp"
#include "tfda/config.hpp"
#include "tfda/datasets.hpp"
#include "tfda/evalkit.hpp"
#include "tfda/feature_tf.hpp"
#include "tfda/translation.hpp"

namespace tfda {

// Metrics recorded after each alternation (k = 0 is the source-only baseline).
struct AlternationRecord {
  int alternation = 0;
  double miou = 0.0;
  std::vector<double> class_iou;  // NaN for classes absent from prediction and truth
  double pseudo_coverage = 0.0;  // confident fraction of target_train under the final segmenter
  double domain_gap = 0.0;
  double domain_gap_std = 0.0;
  double source_error = 0.0;
  double target_error = 0.0;
};

struct RunArtifacts {
  std::filesystem::path out_dir;
  std::vector<std::filesystem::path> checkpoints;  // index i holds alternation i (or baseline)
  std::vector<AlternationRecord> history;
  std::filesystem::path metrics_table;
  std::filesystem::path run_log;
  std::set<Split> training_splits;  // splits that fed any optimiser
};

// Every network of the pipeline plus the multiplier state.
struct PipelineState {
  NetworkSpec spec;
  int64_t image_size = 0;
  TdState td;
  TfNets tf;
  int alternation = 0;

  static PipelineState build(const RunConfig& config, std::uint64_t init_seed);
};

// Transferability of `images` under a (segmenter, feature discriminator)
// snapshot; [N, 1, h, w] at the discriminator's output size.
TransferabilityMap perceive_transferability(Segmenter& seg, Discriminator& df,
                                            const torch::Tensor& images,
                                            const std::string& provenance, int64_t chunk = 32);

// Global-average-pooled high-level features of the segmenter, [N, C].
torch::Tensor pooled_features(Segmenter& seg, const torch::Tensor& images, int64_t chunk = 32);

// Confusion matrix of the segmenter's argmax on labelled examples.
ConfusionMatrix evaluate_segmenter(Segmenter& seg, const torch::Tensor& images,
                                   const torch::Tensor& masks, int num_classes);

// Runs the alternating T_D / T_F loop and writes checkpoints, the run log,
// metrics.tsv and report files under out_dir. With `resume`, training
// continues after the checkpoint's alternation.
RunArtifacts alternate_train(const RunConfig& config, const std::filesystem::path& out_dir,
                             const std::optional<std::filesystem::path>& resume = std::nullopt);

Checkpoint make_checkpoint(const RunConfig& config, const PipelineState& state,
                           const std::vector<AlternationRecord>& history);

// Rebuilds the segmenter stored in a checkpoint.
Segmenter load_segmenter(const Checkpoint& checkpoint, NetworkSpec* spec_out = nullptr);

// Per-alternation metrics on target_eval, recomputed from the checkpoints.
std::vector<AlternationRecord> evaluate_run(const RunArtifacts& artifacts,
                                            const DomainPairDataset& dataset,
                                            const EvalConfig& eval = {});

std::string metrics_table(const std::vector<AlternationRecord>& history, int num_classes);

std::string history_to_json(const std::vector<AlternationRecord>& history);
std::vector<AlternationRecord> history_from_json(const std::string& text);

}  // namespace tfda
