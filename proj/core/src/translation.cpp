#include "tfda/translation.hpp"

#include <algorithm>
#include <cmath>

#include "tfda/batching.hpp"
#include "tfda/error.hpp"

namespace tfda {

namespace {

torch::Tensor clamp_prob(const torch::Tensor& d) {
  return d.clamp(kProbEpsilon, 1.0 - kProbEpsilon);
}

std::vector<torch::Tensor> params_of(std::initializer_list<torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (auto* m : modules) {
    for (auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

}  // namespace

void TdHyper::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "td." + field + ": " + why);
  };
  if (!(alpha > 0)) bad("alpha", "must be > 0");
  if (!(threshold > 0)) bad("threshold", "must be > 0");
  if (!(gamma >= 0)) bad("gamma", "must be >= 0");
  if (!(lambda_init >= 0)) bad("lambda_init", "must be >= 0");
  if (!(learning_rate > 0)) bad("learning_rate", "must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1)) bad("adam_beta1", "must be in [0, 1)");
  if (!(adam_beta2 >= 0 && adam_beta2 < 1)) bad("adam_beta2", "must be in [0, 1)");
  if (epochs < 0) bad("epochs", "must be >= 0");
  if (batch_size < 1) bad("batch_size", "must be >= 1");
}

int TdHyper::constant_epochs() const {
  return static_cast<int>(std::lround(epochs * 2.0 / 3.0));
}

double TdHyper::learning_rate_at(int epoch) const {
  const int constant = constant_epochs();
  const int decay = epochs - constant;
  if (epoch < constant || decay <= 0) return learning_rate;
  const double progress = static_cast<double>(epoch + 1 - constant) / (decay + 1);
  return learning_rate * std::max(0.0, 1.0 - progress);
}

TdNets TdNets::build(const NetworkSpec& spec) {
  TdNets nets;
  nets.s2t = build_translator(spec);
  nets.t2s = build_translator(spec);
  nets.d1 = build_discriminator(spec, DiscriminatorKind::kImage);
  nets.d2 = build_discriminator(spec, DiscriminatorKind::kImage);
  return nets;
}

void TdNets::train(bool on) {
  s2t->train(on);
  t2s->train(on);
  d1->train(on);
  d2->train(on);
}

torch::Tensor adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                               AdversarialForm form) {
  const auto real_term = torch::log(clamp_prob(d_real)).mean();
  const auto fake = clamp_prob(d_fake);
  const auto fake_term = form == AdversarialForm::kLiteral
                             ? (1.0 - torch::log(fake)).mean()
                             : torch::log(1.0 - fake).mean();
  return real_term + fake_term;
}

torch::Tensor adv_loss_s2t(const torch::Tensor& xs, const torch::Tensor& xt,
                           TdNets& nets, AdversarialForm form) {
  if (xs.sizes() != xt.sizes()) fail(ErrorCode::kValidation, "adv_loss_s2t: domain shape mismatch");
  return adversarial_loss(nets.d1->forward(xt), nets.d1->forward(nets.s2t->forward(xs).image), form);
}

torch::Tensor adv_loss_t2s(const torch::Tensor& xs, const torch::Tensor& xt,
                           TdNets& nets, AdversarialForm form) {
  if (xs.sizes() != xt.sizes()) fail(ErrorCode::kValidation, "adv_loss_t2s: domain shape mismatch");
  return adversarial_loss(nets.d2->forward(xs), nets.d2->forward(nets.t2s->forward(xt).image), form);
}

torch::Tensor cycle_loss(const torch::Tensor& xs, const torch::Tensor& xt, TdNets& nets) {
  const auto rec_t = nets.s2t->forward(nets.t2s->forward(xt).image).image;
  const auto rec_s = nets.t2s->forward(nets.s2t->forward(xs).image).image;
  return (rec_t - xt).abs().mean() + (rec_s - xs).abs().mean();
}

torch::Tensor gaussian_kl(const torch::Tensor& mu, const torch::Tensor& log_var) {
  if (mu.sizes() != log_var.sizes()) fail(ErrorCode::kValidation, "gaussian_kl: shape mismatch");
  return 0.5 * (mu.square() + log_var.exp() - 1.0 - log_var).sum(1, /*keepdim=*/true);
}

torch::Tensor bottleneck_loss(const torch::Tensor& mu, const torch::Tensor& log_var,
                              const TransferabilityMap& p, double threshold) {
  if (p.p.size(0) != mu.size(0) || p.p.size(2) != mu.size(2) || p.p.size(3) != mu.size(3)) {
    fail(ErrorCode::kInternal, "bottleneck_loss: transferability map not resized to latent size");
  }
  return (p.p.to(mu.dtype()) * gaussian_kl(mu, log_var)).mean() - threshold;
}

double lagrange_update(double lambda, double gamma, double constraint_loss) {
  return std::max(lambda, gamma * constraint_loss);
}

torch::Tensor compose_td_total(const torch::Tensor& adv_s2t, const torch::Tensor& adv_t2s,
                               const torch::Tensor& cycle, const torch::Tensor& lb_s,
                               const torch::Tensor& lb_t, double alpha,
                               double lambda_s, double lambda_t) {
  return adv_s2t + adv_t2s + alpha * cycle + lambda_s * lb_s + lambda_t * lb_t;
}

LossBundle TdLossTerms::bundle(double lambda_s, double lambda_t) const {
  LossBundle b;
  b.terms = {{"adv_s2t", adv_s2t.item<double>()},
             {"adv_t2s", adv_t2s.item<double>()},
             {"cycle", cycle.item<double>()},
             {"Lb_s", lb_s.item<double>()},
             {"Lb_t", lb_t.item<double>()},
             {"total", total.item<double>()}};
  b.lambda_s = lambda_s;
  b.lambda_t = lambda_t;
  return b;
}

TdLossTerms td_total_loss(const torch::Tensor& xs, const torch::Tensor& xt,
                          TdNets& nets, const TdState& state, const TdHyper& hyper,
                          const TransferabilityMap& p_s, const TransferabilityMap& p_t) {
  if (xs.sizes() != xt.sizes()) fail(ErrorCode::kValidation, "td_total_loss: domain shape mismatch");
  const auto fwd_s = nets.s2t->forward(xs);  // x̂_s
  const auto fwd_t = nets.t2s->forward(xt);  // x̂_t
  const auto rec_s = nets.t2s->forward(fwd_s.image).image;
  const auto rec_t = nets.s2t->forward(fwd_t.image).image;

  TdLossTerms terms;
  terms.adv_s2t = adversarial_loss(nets.d1->forward(xt), nets.d1->forward(fwd_s.image),
                                   hyper.adversarial_form);
  terms.adv_t2s = adversarial_loss(nets.d2->forward(xs), nets.d2->forward(fwd_t.image),
                                   hyper.adversarial_form);
  terms.cycle = (rec_t - xt).abs().mean() + (rec_s - xs).abs().mean();
  const auto ps = resize_to(p_s, fwd_s.mu.size(2), fwd_s.mu.size(3));
  const auto pt = resize_to(p_t, fwd_t.mu.size(2), fwd_t.mu.size(3));
  terms.lb_s = bottleneck_loss(fwd_s.mu, fwd_s.log_var, ps, hyper.threshold);
  terms.lb_t = bottleneck_loss(fwd_t.mu, fwd_t.log_var, pt, hyper.threshold);
  terms.total = compose_td_total(terms.adv_s2t, terms.adv_t2s, terms.cycle, terms.lb_s,
                                 terms.lb_t, hyper.alpha, state.lambda_s, state.lambda_t);
  return terms;
}

TdTrainer::TdTrainer(TdState& state, const TdHyper& hyper)
    : state_(state), hyper_(hyper) {
  hyper_.validate();
  auto options = torch::optim::AdamOptions(hyper_.learning_rate)
                     .betas({hyper_.adam_beta1, hyper_.adam_beta2});
  gen_opt_ = std::make_unique<torch::optim::Adam>(
      params_of({state_.nets.s2t.ptr().get(), state_.nets.t2s.ptr().get()}), options);
  disc_opt_ = std::make_unique<torch::optim::Adam>(
      params_of({state_.nets.d1.ptr().get(), state_.nets.d2.ptr().get()}), options);
}

TdEpochRecord TdTrainer::train_epoch(const TdData& data, int epoch, std::mt19937_64& rng) {
  auto& nets = state_.nets;
  nets.train(true);
  const double lr = hyper_.learning_rate_at(epoch);
  for (auto* opt : {gen_opt_.get(), disc_opt_.get()}) {
    for (auto& group : opt->param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
  }

  PairedBatches batches(data.source.size(0), data.target.size(0), hyper_.batch_size, rng);
  std::map<std::string, double> sums;
  for (int64_t step = 0; step < batches.steps(); ++step) {
    const auto is = batches.indices_a(step);
    const auto it = batches.indices_b(step);
    const auto xs = data.source.index_select(0, is);
    const auto xt = data.target.index_select(0, it);
    const TransferabilityMap ps{data.p_source.p.index_select(0, is), data.p_source.provenance};
    const TransferabilityMap pt{data.p_target.p.index_select(0, it), data.p_target.provenance};

    // Generator step with the discriminators frozen.
    set_trainable(*nets.d1, false);
    set_trainable(*nets.d2, false);
    gen_opt_->zero_grad();
    auto terms = td_total_loss(xs, xt, nets, state_, hyper_, ps, pt);
    const auto bundle = terms.bundle(state_.lambda_s, state_.lambda_t);
    for (const auto& [name, value] : bundle.terms) {
      check_finite(value, name);
      sums[name] += value;
    }
    terms.total.backward();
    gen_opt_->step();
    set_trainable(*nets.d1, true);
    set_trainable(*nets.d2, true);

    // Discriminator step. The discriminators always ascend the
    // log(1 - D(fake)) form; under the literal form the fake term saturates
    // once D(fake) approaches 1 and stops training them.
    torch::Tensor fake_t, fake_s;
    {
      torch::NoGradGuard guard;
      fake_t = nets.s2t->forward(xs).image;
      fake_s = nets.t2s->forward(xt).image;
    }
    disc_opt_->zero_grad();
    const auto disc_objective =
        adversarial_loss(nets.d1->forward(xt), nets.d1->forward(fake_t), AdversarialForm::kConventional) +
        adversarial_loss(nets.d2->forward(xs), nets.d2->forward(fake_s), AdversarialForm::kConventional);
    check_finite(disc_objective.item<double>(), "disc_objective");
    (-disc_objective).backward();
    disc_opt_->step();
  }

  TdEpochRecord record;
  record.epoch = epoch;
  record.learning_rate = lr;
  const double steps = static_cast<double>(std::max<int64_t>(1, batches.steps()));
  for (auto& [name, sum] : sums) record.losses.terms[name] = sum / steps;
  state_.lambda_s = lagrange_update(state_.lambda_s, hyper_.gamma, record.losses.terms["Lb_s"]);
  state_.lambda_t = lagrange_update(state_.lambda_t, hyper_.gamma, record.losses.terms["Lb_t"]);
  record.losses.lambda_s = state_.lambda_s;
  record.losses.lambda_t = state_.lambda_t;
  return record;
}

torch::Tensor translate_all(Translator& translator, const torch::Tensor& images, int64_t chunk) {
  torch::NoGradGuard guard;
  const bool was_training = translator->is_training();
  translator->eval();
  std::vector<torch::Tensor> out;
  for (int64_t start = 0; start < images.size(0); start += chunk) {
    const int64_t len = std::min(chunk, images.size(0) - start);
    out.push_back(translator->forward(images.narrow(0, start, len)).image);
  }
  translator->train(was_training);
  return torch::cat(out);
}

}  // namespace tfda
