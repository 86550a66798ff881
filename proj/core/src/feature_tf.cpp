#include "tfda/feature_tf.hpp"

#include <cmath>

#include "tfda/batching.hpp"
#include "tfda/error.hpp"

namespace tfda {

namespace nnf = torch::nn::functional;

namespace {

torch::Tensor log_prob(const torch::Tensor& d) {
  return torch::log(d.clamp(kProbEpsilon, 1.0 - kProbEpsilon));
}

torch::Tensor log_one_minus(const torch::Tensor& d) {
  return torch::log(1.0 - d.clamp(kProbEpsilon, 1.0 - kProbEpsilon));
}

void check_labels(const torch::Tensor& labels, int64_t classes, const char* what) {
  if (labels.numel() == 0) return;
  const auto valid = labels.masked_select(labels != kIgnoreLabel);
  if (valid.numel() == 0) return;
  if (valid.max().item<int64_t>() >= classes || valid.min().item<int64_t>() < 0) {
    fail(ErrorCode::kValidation, std::string(what) + ": label outside [0, K)");
  }
}

torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  if ((labels != kIgnoreLabel).any().item<bool>() == false) {
    return torch::zeros({}, logits.options());
  }
  return nnf::cross_entropy(logits, labels,
                            nnf::CrossEntropyFuncOptions().ignore_index(kIgnoreLabel));
}

std::optional<torch::Tensor> weight_for(const TfData& data, const torch::Tensor& is,
                                        const torch::Tensor& it) {
  if (!data.p_source.p.defined() || !data.p_target.p.defined()) return std::nullopt;
  const TransferabilityMap combined{
      torch::cat({data.p_source.p.index_select(0, is), data.p_target.p.index_select(0, it)}),
      data.p_source.provenance};
  return residual_weight(combined);
}

std::vector<torch::Tensor> params_of(torch::nn::Module& m) { return m.parameters(); }

}  // namespace

void TfHyper::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "tf." + field + ": " + why);
  };
  if (!(beta > 0 && beta < 1)) bad("beta", "must be in (0, 1)");
  if (!(seg_learning_rate > 0)) bad("seg_learning_rate", "must be > 0");
  if (!(seg_momentum >= 0 && seg_momentum < 1)) bad("seg_momentum", "must be in [0, 1)");
  if (!(seg_power > 0)) bad("seg_power", "must be > 0");
  if (!(seg_clip_norm >= 0)) bad("seg_clip_norm", "must be >= 0");
  if (!(aug_learning_rate > 0)) bad("aug_learning_rate", "must be > 0");
  if (!(disc_learning_rate > 0)) bad("disc_learning_rate", "must be > 0");
  if (!(disc_beta1 >= 0 && disc_beta1 < 1)) bad("disc_beta1", "must be in [0, 1)");
  if (!(disc_beta2 >= 0 && disc_beta2 < 1)) bad("disc_beta2", "must be in [0, 1)");
  if (!(align_weight >= 0)) bad("align_weight", "must be >= 0");
  if (step1_epochs < 0) bad("step1_epochs", "must be >= 0");
  if (step2_epochs < 0) bad("step2_epochs", "must be >= 0");
  if (step3_epochs < 0) bad("step3_epochs", "must be >= 0");
  if (batch_size < 2) bad("batch_size", "must be >= 2 (batches mix both domains)");
}

TfNets TfNets::build(const NetworkSpec& spec, int64_t image_size, AttentionNorm norm) {
  TfNets nets;
  nets.seg = build_segmenter(spec);
  nets.aug = Augmentor(spec, image_size, norm);
  nets.df = build_discriminator(spec, DiscriminatorKind::kFeature);
  return nets;
}

double PseudoLabelBatch::coverage() const {
  if (mask.numel() == 0) return 0.0;
  return mask.to(torch::kFloat64).mean().item<double>();
}

PseudoLabelBatch PseudoLabelBatch::select(const torch::Tensor& index) const {
  return {labels.index_select(0, index), mask.index_select(0, index)};
}

PseudoLabelBatch pseudo_labels(const torch::Tensor& probs, double beta) {
  if (probs.dim() != 4) fail(ErrorCode::kValidation, "pseudo_labels: probs must be [B, K, H, W]");
  const auto sums = probs.sum(1);
  if ((sums - 1.0).abs().max().item<double>() > 1e-4) {
    fail(ErrorCode::kValidation, "pseudo_labels: probabilities not normalised");
  }
  auto [max_prob, labels] = probs.max(1);
  return {labels, max_prob >= beta};
}

torch::Tensor predict_probs(Segmenter& seg, const torch::Tensor& images, int64_t chunk) {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> out;
  for (int64_t start = 0; start < images.size(0); start += chunk) {
    const int64_t len = std::min(chunk, images.size(0) - start);
    out.push_back(torch::softmax(seg->forward(images.narrow(0, start, len)).logits, 1));
  }
  return torch::cat(out);
}

torch::Tensor seg_loss(const torch::Tensor& logits_src, const torch::Tensor& labels_src,
                       const torch::Tensor& logits_tgt, const PseudoLabelBatch& pseudo) {
  const int64_t classes = logits_src.size(1);
  check_labels(labels_src, classes, "seg_loss source");
  if (pseudo.labels.defined()) check_labels(pseudo.labels, classes, "seg_loss target");
  auto loss = masked_cross_entropy(logits_src, labels_src);
  if (logits_tgt.defined() && logits_tgt.numel() > 0) {
    const auto ignored = torch::full_like(pseudo.labels, kIgnoreLabel);
    const auto target_labels = torch::where(pseudo.mask, pseudo.labels, ignored);
    loss = loss + masked_cross_entropy(logits_tgt, target_labels);
  }
  return loss;
}

torch::Tensor augmentor_adv_loss(const torch::Tensor& d_seg, const torch::Tensor& d_aug) {
  return log_prob(d_seg).mean() + log_one_minus(d_aug).mean();
}

torch::Tensor alignment_loss(const torch::Tensor& d_seg, const torch::Tensor& d_aug) {
  return log_one_minus(d_seg).mean() + log_prob(d_aug).mean();
}

torch::Tensor augmentor_adv_loss(const torch::Tensor& x, TfNets& nets, const torch::Tensor& noise,
                                 const std::optional<torch::Tensor>& weight) {
  const auto taps = nets.seg->forward(x);
  const auto augmented = nets.aug->forward(taps.low, taps.high, noise, weight);
  return augmentor_adv_loss(nets.df->forward(taps.high), nets.df->forward(augmented));
}

torch::Tensor alignment_loss(const torch::Tensor& x, TfNets& nets, const torch::Tensor& noise,
                             const std::optional<torch::Tensor>& weight) {
  const auto taps = nets.seg->forward(x);
  const auto augmented = nets.aug->forward(taps.low, taps.high, noise, weight);
  return alignment_loss(nets.df->forward(taps.high), nets.df->forward(augmented));
}

TfTrainer::TfTrainer(TfNets& nets, const TfHyper& hyper) : nets_(nets), hyper_(hyper) {
  hyper_.validate();
}

double TfTrainer::seg_lr(int64_t iteration) const {
  if (seg_iterations_ <= 0) return hyper_.seg_learning_rate;
  const double progress = std::min(1.0, static_cast<double>(iteration) / seg_iterations_);
  return hyper_.seg_learning_rate * std::pow(1.0 - progress, hyper_.seg_power);
}

void TfTrainer::clip_segmenter() {
  if (hyper_.seg_clip_norm > 0) {
    torch::nn::utils::clip_grad_norm_(nets_.seg->parameters(), hyper_.seg_clip_norm);
  }
}

TfRoundRecord TfTrainer::train_round(const TfData& data, int round, std::mt19937_64& rng) {
  const int64_t ns = data.source.size(0);
  const int64_t nt = data.target.size(0);
  const int64_t full_steps = (std::max(ns, nt) + hyper_.batch_size - 1) / hyper_.batch_size;
  const int64_t mixed_steps =
      (std::max(ns, nt) + hyper_.batch_size / 2 - 1) / (hyper_.batch_size / 2);
  seg_iterations_ = hyper_.step1_epochs * full_steps + hyper_.step3_epochs * mixed_steps;
  seg_iteration_ = 0;
  seg_opt_ = std::make_unique<torch::optim::SGD>(
      params_of(*nets_.seg),
      torch::optim::SGDOptions(hyper_.seg_learning_rate).momentum(hyper_.seg_momentum));

  TfRoundRecord record;
  record.round = round;
  nets_.seg->eval();
  const auto pseudo = pseudo_labels(predict_probs(nets_.seg, data.target), hyper_.beta);
  record.pseudo_coverage = pseudo.coverage();

  step1(data, pseudo, rng, record);
  step2(data, rng, record);
  step3(data, pseudo, rng, record);
  return record;
}

void TfTrainer::step1(const TfData& data, const PseudoLabelBatch& pseudo, std::mt19937_64& rng,
                      TfRoundRecord& record) {
  if (!seg_opt_) {
    seg_opt_ = std::make_unique<torch::optim::SGD>(
        params_of(*nets_.seg),
        torch::optim::SGDOptions(hyper_.seg_learning_rate).momentum(hyper_.seg_momentum));
  }
  nets_.seg->train();
  set_trainable(*nets_.seg, true);
  double sum = 0.0;
  int64_t count = 0;
  for (int epoch = 0; epoch < hyper_.step1_epochs; ++epoch) {
    PairedBatches batches(data.source.size(0), data.target.size(0), hyper_.batch_size, rng);
    for (int64_t step = 0; step < batches.steps(); ++step) {
      const auto is = batches.indices_a(step);
      const auto it = batches.indices_b(step);
      const auto x = torch::cat({data.source.index_select(0, is), data.target.index_select(0, it)});
      const auto logits = nets_.seg->forward(x).logits;
      const auto n = is.size(0);
      const auto loss = seg_loss(logits.narrow(0, 0, n), data.source_labels.index_select(0, is),
                                 logits.narrow(0, n, it.size(0)), pseudo.select(it));
      const double value = loss.item<double>();
      check_finite(value, "seg_loss");
      for (auto& group : seg_opt_->param_groups()) {
        static_cast<torch::optim::SGDOptions&>(group.options()).lr(seg_lr(seg_iteration_));
      }
      seg_opt_->zero_grad();
      loss.backward();
      clip_segmenter();
      seg_opt_->step();
      ++seg_iteration_;
      sum += value;
      ++count;
    }
  }
  record.seg_loss = count > 0 ? sum / count : 0.0;
}

void TfTrainer::step2(const TfData& data, std::mt19937_64& rng, TfRoundRecord& record) {
  // The segmenter is fixed: its taps are computed without gradient tracking.
  set_trainable(*nets_.seg, false);
  nets_.seg->eval();
  nets_.aug->train();
  torch::optim::Adam disc_opt(
      params_of(*nets_.df),
      torch::optim::AdamOptions(hyper_.disc_learning_rate).betas({hyper_.disc_beta1, hyper_.disc_beta2}));
  torch::optim::Adam aug_opt(
      params_of(*nets_.aug),
      torch::optim::AdamOptions(hyper_.aug_learning_rate).betas({hyper_.disc_beta1, hyper_.disc_beta2}));
  double sum = 0.0;
  int64_t count = 0;
  const int64_t half = hyper_.batch_size / 2;
  for (int epoch = 0; epoch < hyper_.step2_epochs; ++epoch) {
    PairedBatches batches(data.source.size(0), data.target.size(0), half, rng);
    for (int64_t step = 0; step < batches.steps(); ++step) {
      const auto is = batches.indices_a(step);
      const auto it = batches.indices_b(step);
      const auto x = torch::cat({data.source.index_select(0, is), data.target.index_select(0, it)});
      SegmenterOutput taps;
      {
        torch::NoGradGuard guard;
        taps = nets_.seg->forward(x);
      }
      const auto weight = weight_for(data, is, it);
      const auto noise = torch::randn(nets_.aug->noise_shape(x.size(0)));

      // D_F ascends L_f^a.
      set_trainable(*nets_.df, true);
      set_trainable(*nets_.aug, false);
      torch::Tensor augmented;
      {
        torch::NoGradGuard guard;
        augmented = nets_.aug->forward(taps.low, taps.high, noise, weight);
      }
      disc_opt.zero_grad();
      const auto disc_obj =
          augmentor_adv_loss(nets_.df->forward(taps.high), nets_.df->forward(augmented));
      check_finite(disc_obj.item<double>(), "aug_loss(D_F)");
      (-disc_obj).backward();
      disc_opt.step();

      // A_F descends L_f^a.
      set_trainable(*nets_.df, false);
      set_trainable(*nets_.aug, true);
      aug_opt.zero_grad();
      const auto loss = augmentor_adv_loss(
          nets_.df->forward(taps.high),
          nets_.df->forward(nets_.aug->forward(taps.low, taps.high, noise, weight)));
      const double value = loss.item<double>();
      check_finite(value, "aug_loss");
      loss.backward();
      aug_opt.step();
      sum += value;
      ++count;
    }
  }
  set_trainable(*nets_.df, true);
  set_trainable(*nets_.seg, true);
  record.aug_loss = count > 0 ? sum / count : 0.0;
}

void TfTrainer::step3(const TfData& data, const PseudoLabelBatch& pseudo, std::mt19937_64& rng,
                      TfRoundRecord& record) {
  if (!seg_opt_) {
    seg_opt_ = std::make_unique<torch::optim::SGD>(
        params_of(*nets_.seg),
        torch::optim::SGDOptions(hyper_.seg_learning_rate).momentum(hyper_.seg_momentum));
  }
  set_trainable(*nets_.aug, false);
  nets_.aug->eval();
  nets_.seg->train();
  torch::optim::Adam disc_opt(
      params_of(*nets_.df),
      torch::optim::AdamOptions(hyper_.disc_learning_rate).betas({hyper_.disc_beta1, hyper_.disc_beta2}));
  double sum = 0.0;
  int64_t count = 0;
  const int64_t half = hyper_.batch_size / 2;
  for (int epoch = 0; epoch < hyper_.step3_epochs; ++epoch) {
    PairedBatches batches(data.source.size(0), data.target.size(0), half, rng);
    for (int64_t step = 0; step < batches.steps(); ++step) {
      const auto is = batches.indices_a(step);
      const auto it = batches.indices_b(step);
      const auto x = torch::cat({data.source.index_select(0, is), data.target.index_select(0, it)});
      const auto weight = weight_for(data, is, it);
      const auto noise = torch::randn(nets_.aug->noise_shape(x.size(0)));
      const auto taps = nets_.seg->forward(x);
      torch::Tensor augmented;
      {
        torch::NoGradGuard guard;
        augmented = nets_.aug->forward(taps.low.detach(), taps.high.detach(), noise, weight);
      }

      // D_F ascends L_f^t.
      set_trainable(*nets_.df, true);
      disc_opt.zero_grad();
      const auto disc_obj =
          alignment_loss(nets_.df->forward(taps.high.detach()), nets_.df->forward(augmented));
      check_finite(disc_obj.item<double>(), "align_loss(D_F)");
      (-disc_obj).backward();
      disc_opt.step();

      // S descends L_f^t, optionally anchored by the supervised loss.
      set_trainable(*nets_.df, false);
      const auto align = alignment_loss(nets_.df->forward(taps.high), nets_.df->forward(augmented));
      const double value = align.item<double>();
      check_finite(value, "align_loss");
      auto objective = hyper_.align_weight * align;
      if (hyper_.anchor_segmentation) {
        const auto n = is.size(0);
        objective = objective + seg_loss(taps.logits.narrow(0, 0, n),
                                         data.source_labels.index_select(0, is),
                                         taps.logits.narrow(0, n, it.size(0)), pseudo.select(it));
      }
      for (auto& group : seg_opt_->param_groups()) {
        static_cast<torch::optim::SGDOptions&>(group.options()).lr(seg_lr(seg_iteration_));
      }
      seg_opt_->zero_grad();
      objective.backward();
      clip_segmenter();
      seg_opt_->step();
      ++seg_iteration_;
      sum += value;
      ++count;
    }
  }
  set_trainable(*nets_.df, true);
  set_trainable(*nets_.aug, true);
  record.align_loss = count > 0 ? sum / count : 0.0;
}

}  // namespace tfda
