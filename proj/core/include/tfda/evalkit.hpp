#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tfda {

// counts[a][b] = pixels with ground truth a predicted b.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return classes_; }
  std::int64_t at(int truth, int predicted) const { return counts_[truth * classes_ + predicted]; }
  std::int64_t& at(int truth, int predicted) { return counts_[truth * classes_ + predicted]; }
  std::int64_t total() const;
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int predicted) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

// Pixels whose ground truth equals ignore_label are skipped. pred and gt are
// integer label maps of identical shape.
ConfusionMatrix confusion(const torch::Tensor& pred, const torch::Tensor& gt, int num_classes,
                          std::int64_t ignore_label = 255);

// IoU per class; nullopt for classes absent from both prediction and truth.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm);

// Mean over present classes. Throws Error(kValidation) if none is present.
double miou(const ConfusionMatrix& cm);
double miou(std::span<const double> class_ious);

struct GapEstimate {
  double d_hat = 0.0;             // proxy A-distance in [0, 2]
  double classifier_error = 0.5;  // holdout error in [0, 0.5]
  double d_hat_std = 0.0;         // spread over estimator seeds
};

struct GapOptions {
  double holdout_fraction = 0.3;
  int seeds = 3;
  int iterations = 300;
  double learning_rate = 0.5;
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

// Trains a logistic domain classifier on pooled features ([N, D] each, at
// least 20 rows per domain) and reports d = 2(1 - 2 err) from its holdout
// error, averaged over options.seeds splits.
GapEstimate domain_gap_estimate(const torch::Tensor& features_s, const torch::Tensor& features_t,
                                const GapOptions& options = {});

// Single-seed estimate; the building block of domain_gap_estimate.
GapEstimate domain_gap_single(const torch::Tensor& features_s, const torch::Tensor& features_t,
                              double holdout_fraction, std::uint64_t seed,
                              const GapOptions& options = {});

// Text fragment comparing the measured target error with eps_s + d/2. The
// additive constant of the bound is not estimated.
std::string bound_report(double source_error, const GapEstimate& gap,
                         std::optional<double> target_error = std::nullopt);

}  // namespace tfda
