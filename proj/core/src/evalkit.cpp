#include "tfda/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "tfda/error.hpp"

namespace tfda {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) fail(ErrorCode::kValidation, "confusion matrix needs >= 1 class");
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int b = 0; b < classes_; ++b) s += at(truth, b);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int predicted) const {
  std::int64_t s = 0;
  for (int a = 0; a < classes_; ++a) s += at(a, predicted);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) fail(ErrorCode::kValidation, "confusion matrix class mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix confusion(const torch::Tensor& pred, const torch::Tensor& gt, int num_classes,
                          std::int64_t ignore_label) {
  if (pred.sizes() != gt.sizes()) fail(ErrorCode::kValidation, "confusion: shape mismatch");
  const auto p = pred.to(torch::kInt64).flatten();
  const auto g = gt.to(torch::kInt64).flatten();
  const auto keep = g != ignore_label;
  const auto pk = p.masked_select(keep);
  const auto gk = g.masked_select(keep);
  if (gk.numel() > 0) {
    if (gk.min().item<int64_t>() < 0 || gk.max().item<int64_t>() >= num_classes ||
        pk.min().item<int64_t>() < 0 || pk.max().item<int64_t>() >= num_classes) {
      fail(ErrorCode::kValidation, "confusion: label outside [0, K)");
    }
  }
  const auto bins = torch::bincount(gk * num_classes + pk, {}, num_classes * num_classes);
  ConfusionMatrix cm(num_classes);
  const auto acc = bins.to(torch::kInt64).contiguous();
  const auto* data = acc.data_ptr<int64_t>();
  for (int a = 0; a < num_classes; ++a) {
    for (int b = 0; b < num_classes; ++b) cm.at(a, b) = data[a * num_classes + b];
  }
  return cm;
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.num_classes());
  for (int k = 0; k < cm.num_classes(); ++k) {
    const auto inter = cm.at(k, k);
    const auto uni = cm.row_sum(k) + cm.col_sum(k) - inter;
    if (uni > 0) out[k] = static_cast<double>(inter) / static_cast<double>(uni);
  }
  return out;
}

double miou(std::span<const double> class_ious) {
  if (class_ious.empty()) fail(ErrorCode::kValidation, "miou: no classes present");
  return std::accumulate(class_ious.begin(), class_ious.end(), 0.0) /
         static_cast<double>(class_ious.size());
}

double miou(const ConfusionMatrix& cm) {
  std::vector<double> present;
  for (const auto& v : iou_per_class(cm)) {
    if (v) present.push_back(*v);
  }
  return miou(present);
}

namespace {

struct Rows {
  int64_t n = 0;
  int64_t d = 0;
  std::vector<double> x;  // row-major
};

Rows to_rows(const torch::Tensor& t) {
  if (t.dim() != 2) fail(ErrorCode::kValidation, "domain_gap_estimate: features must be [N, D]");
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  Rows r{c.size(0), c.size(1), {}};
  r.x.assign(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
  return r;
}

}  // namespace

GapEstimate domain_gap_single(const torch::Tensor& features_s, const torch::Tensor& features_t,
                              double holdout_fraction, std::uint64_t seed,
                              const GapOptions& options) {
  const Rows s = to_rows(features_s);
  const Rows t = to_rows(features_t);
  if (s.n < 20 || t.n < 20) {
    fail(ErrorCode::kValidation, "domain_gap_estimate: need >= 20 feature vectors per domain");
  }
  if (s.d != t.d) fail(ErrorCode::kValidation, "domain_gap_estimate: feature width mismatch");
  if (!(holdout_fraction > 0 && holdout_fraction < 1)) {
    fail(ErrorCode::kValidation, "domain_gap_estimate: holdout_fraction must be in (0, 1)");
  }
  const int64_t d = s.d;

  // Stratified split: the same fraction of each domain is held out.
  std::mt19937_64 rng(seed);
  std::vector<std::pair<const double*, int>> train, test;
  auto split = [&](const Rows& rows, int label) {
    std::vector<int64_t> idx(rows.n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = std::max<int64_t>(1, std::llround(rows.n * holdout_fraction));
    for (int64_t i = 0; i < rows.n; ++i) {
      auto& dst = i < n_test ? test : train;
      dst.emplace_back(rows.x.data() + idx[i] * d, label);
    }
  };
  split(s, 0);
  split(t, 1);

  // Standardise with training statistics.
  std::vector<double> mean(d, 0.0), scale(d, 0.0);
  for (const auto& [row, _] : train) {
    for (int64_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (auto& m : mean) m /= static_cast<double>(train.size());
  for (const auto& [row, _] : train) {
    for (int64_t j = 0; j < d; ++j) scale[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
  }
  for (auto& v : scale) {
    v = std::sqrt(v / static_cast<double>(train.size()));
    v = v > 1e-12 ? 1.0 / v : 0.0;
  }

  // Full-batch gradient descent on the L2-regularised logistic loss.
  std::vector<double> w(d, 0.0), grad(d);
  double b = 0.0;
  std::vector<double> z(d);
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (int iter = 0; iter < options.iterations; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (const auto& [row, label] : train) {
      double logit = b;
      for (int64_t j = 0; j < d; ++j) {
        z[j] = (row[j] - mean[j]) * scale[j];
        logit += w[j] * z[j];
      }
      const double err = 1.0 / (1.0 + std::exp(-logit)) - label;
      for (int64_t j = 0; j < d; ++j) grad[j] += err * z[j];
      grad_b += err;
    }
    for (int64_t j = 0; j < d; ++j) {
      w[j] -= options.learning_rate * (grad[j] * inv_n + options.l2 * w[j]);
    }
    b -= options.learning_rate * grad_b * inv_n;
  }

  int64_t wrong = 0;
  for (const auto& [row, label] : test) {
    double logit = b;
    for (int64_t j = 0; j < d; ++j) logit += w[j] * (row[j] - mean[j]) * scale[j];
    if ((logit > 0.0 ? 1 : 0) != label) ++wrong;
  }
  GapEstimate est;
  est.classifier_error = std::min(0.5, static_cast<double>(wrong) / static_cast<double>(test.size()));
  est.d_hat = std::clamp(2.0 * (1.0 - 2.0 * est.classifier_error), 0.0, 2.0);
  return est;
}

GapEstimate domain_gap_estimate(const torch::Tensor& features_s, const torch::Tensor& features_t,
                                const GapOptions& options) {
  const int seeds = std::max(1, options.seeds);
  std::vector<GapEstimate> runs;
  for (int i = 0; i < seeds; ++i) {
    runs.push_back(domain_gap_single(features_s, features_t, options.holdout_fraction,
                                     options.seed * 1000003ULL + static_cast<std::uint64_t>(i),
                                     options));
  }
  GapEstimate out;
  double mean_err = 0.0;
  for (const auto& r : runs) mean_err += r.classifier_error;
  mean_err /= seeds;
  out.classifier_error = mean_err;
  out.d_hat = std::clamp(2.0 * (1.0 - 2.0 * mean_err), 0.0, 2.0);
  double var = 0.0;
  for (const auto& r : runs) var += (r.d_hat - out.d_hat) * (r.d_hat - out.d_hat);
  out.d_hat_std = std::sqrt(var / seeds);
  return out;
}

std::string bound_report(double source_error, const GapEstimate& gap,
                         std::optional<double> target_error) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "source_error\t" << source_error << '\n'
      << "domain_gap_d_hat\t" << gap.d_hat << " (std " << gap.d_hat_std << ")\n"
      << "bound_without_gamma\t" << source_error + 0.5 * gap.d_hat << '\n';
  if (target_error) out << "measured_target_error\t" << *target_error << '\n';
  out << "gamma\tunestimated constant (joint optimal error), not included above\n";
  return out.str();
}

}  // namespace tfda
