#pragma once

#include <torch/torch.h>

#include <optional>
#include <random>
#include <string>

#include "tfda/networks.hpp"
#include "tfda/transferability.hpp"

namespace tfda {

struct TfHyper {
  double beta = 0.9;  // pseudo-label confidence threshold
  double seg_learning_rate = 0.025;
  double seg_momentum = 0.9;
  double seg_power = 0.9;
  double seg_clip_norm = 5.0;  // gradient-norm clip for segmenter updates; 0 disables
  double aug_learning_rate = 1e-4;
  double disc_learning_rate = 1e-4;
  double disc_beta1 = 0.9;
  double disc_beta2 = 0.99;
  // Weight of the adversarial alignment term in the segmenter's Step III
  // objective, and whether the supervised loss stays on as an anchor.
  double align_weight = 0.01;
  bool anchor_segmentation = true;
  int step1_epochs = 10;
  int step2_epochs = 2;
  int step3_epochs = 4;
  int batch_size = 8;

  void validate() const;
};

struct TfNets {
  Segmenter seg{nullptr};
  Augmentor aug{nullptr};
  Discriminator df{nullptr};

  static TfNets build(const NetworkSpec& spec, int64_t image_size,
                      AttentionNorm norm = AttentionNorm::kColumn);
};

// labels: int64 [B, H, W]; mask: bool [B, H, W] (true = confident).
struct PseudoLabelBatch {
  torch::Tensor labels;
  torch::Tensor mask;

  double coverage() const;
  PseudoLabelBatch select(const torch::Tensor& index) const;
};

// probs: [B, K, H, W] softmax outputs. Throws Error(kValidation) when a pixel's
// probabilities do not sum to 1 within 1e-4.
PseudoLabelBatch pseudo_labels(const torch::Tensor& probs, double beta);

// Softmax probabilities of the segmenter over a whole image set (eval, chunked).
torch::Tensor predict_probs(Segmenter& seg, const torch::Tensor& images, int64_t chunk = 32);

// Label value that excludes a pixel from the cross-entropy.
inline constexpr int64_t kIgnoreLabel = -100;

// Cross-entropy over the translated source (all pixels) plus cross-entropy
// over confident target pixels. Each term is a mean over its contributing
// pixels; the target term is 0 when no pixel is confident.
torch::Tensor seg_loss(const torch::Tensor& logits_src, const torch::Tensor& labels_src,
                       const torch::Tensor& logits_tgt, const PseudoLabelBatch& pseudo);

// E[log D(S(x))] + E[log(1 - D(A(x, z)))]
torch::Tensor augmentor_adv_loss(const torch::Tensor& d_seg, const torch::Tensor& d_aug);

// E[log(1 - D(S(x)))] + E[log D(A(x, z))]
torch::Tensor alignment_loss(const torch::Tensor& d_seg, const torch::Tensor& d_aug);

// Forward-composing variants on a mixed batch x.
torch::Tensor augmentor_adv_loss(const torch::Tensor& x, TfNets& nets, const torch::Tensor& noise,
                                 const std::optional<torch::Tensor>& weight = std::nullopt);
torch::Tensor alignment_loss(const torch::Tensor& x, TfNets& nets, const torch::Tensor& noise,
                             const std::optional<torch::Tensor>& weight = std::nullopt);

struct TfData {
  torch::Tensor source;         // translated source images [Ns, 3, H, W]
  torch::Tensor source_labels;  // [Ns, H, W]
  torch::Tensor target;         // [Nt, 3, H, W]
  // Transferability of each image at the augmentor's feature size.
  TransferabilityMap p_source;
  TransferabilityMap p_target;
};

struct TfRoundRecord {
  int round = 0;
  double seg_loss = 0.0;
  double aug_loss = 0.0;
  double align_loss = 0.0;
  double pseudo_coverage = 0.0;
};

// Step I (segmentation with pseudo labels), Step II (augmentor vs feature
// discriminator, segmenter frozen), Step III (alignment, augmentor frozen).
class TfTrainer {
 public:
  TfTrainer(TfNets& nets, const TfHyper& hyper);

  TfRoundRecord train_round(const TfData& data, int round, std::mt19937_64& rng);

  void step1(const TfData& data, const PseudoLabelBatch& pseudo, std::mt19937_64& rng,
             TfRoundRecord& record);
  void step2(const TfData& data, std::mt19937_64& rng, TfRoundRecord& record);
  void step3(const TfData& data, const PseudoLabelBatch& pseudo, std::mt19937_64& rng,
             TfRoundRecord& record);

 private:
  double seg_lr(int64_t iteration) const;
  void clip_segmenter();

  TfNets& nets_;
  TfHyper hyper_;
  int64_t seg_iterations_ = 0;
  int64_t seg_iteration_ = 0;
  std::unique_ptr<torch::optim::SGD> seg_opt_;
};

}  // namespace tfda
