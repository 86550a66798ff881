#pragma once

#include <torch/torch.h>

#include <map>
#include <memory>
#include <random>
#include <string>

#include "tfda/networks.hpp"
#include "tfda/transferability.hpp"

namespace tfda {

// kLiteral: E[log D(real)] + E[1 - log D(fake)].
// kConventional: E[log D(real)] + E[log(1 - D(fake))].
enum class AdversarialForm { kLiteral, kConventional };

struct TdHyper {
  double alpha = 10.0;
  double threshold = 200.0;  // T, shared by source and target constraints
  double gamma = 1e-6;
  double lambda_init = 1e-4;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int epochs = 20;  // first two thirds constant, last third linear decay
  int batch_size = 8;
  AdversarialForm adversarial_form = AdversarialForm::kLiteral;

  void validate() const;
  int constant_epochs() const;
  double learning_rate_at(int epoch) const;
};

struct TdNets {
  Translator s2t{nullptr};  // source -> target
  Translator t2s{nullptr};  // target -> source
  Discriminator d1{nullptr};  // real target vs translated source
  Discriminator d2{nullptr};  // real source vs translated target

  static TdNets build(const NetworkSpec& spec);
  void train(bool on = true);
};

struct TdState {
  TdNets nets;
  double lambda_s = 1e-4;
  double lambda_t = 1e-4;
};

// Named scalar losses from one step or epoch plus the multiplier state.
struct LossBundle {
  std::map<std::string, double> terms;
  double lambda_s = 0.0;
  double lambda_t = 0.0;

  double at(const std::string& name) const { return terms.at(name); }
};

torch::Tensor adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                               AdversarialForm form = AdversarialForm::kLiteral);

torch::Tensor adv_loss_s2t(const torch::Tensor& xs, const torch::Tensor& xt,
                           TdNets& nets,
                           AdversarialForm form = AdversarialForm::kLiteral);
torch::Tensor adv_loss_t2s(const torch::Tensor& xs, const torch::Tensor& xt,
                           TdNets& nets,
                           AdversarialForm form = AdversarialForm::kLiteral);

// mean|T_D(T_D^-1(x_t)) - x_t| + mean|T_D^-1(T_D(x_s)) - x_s|
torch::Tensor cycle_loss(const torch::Tensor& xs, const torch::Tensor& xt, TdNets& nets);

// KL(N(mu, exp(log_var)) || N(0, I)) summed over channels: [B, 1, h, w].
torch::Tensor gaussian_kl(const torch::Tensor& mu, const torch::Tensor& log_var);

// mean(P ⊙ KL) - T. P must already match mu's spatial size.
torch::Tensor bottleneck_loss(const torch::Tensor& mu, const torch::Tensor& log_var,
                              const TransferabilityMap& p, double threshold);

double lagrange_update(double lambda, double gamma, double constraint_loss);

struct TdLossTerms {
  torch::Tensor adv_s2t, adv_t2s, cycle, lb_s, lb_t, total;

  LossBundle bundle(double lambda_s, double lambda_t) const;
};

torch::Tensor compose_td_total(const torch::Tensor& adv_s2t, const torch::Tensor& adv_t2s,
                               const torch::Tensor& cycle, const torch::Tensor& lb_s,
                               const torch::Tensor& lb_t, double alpha,
                               double lambda_s, double lambda_t);

// Full objective for one source/target batch. p_s and p_t are resized to the
// latent size internally.
TdLossTerms td_total_loss(const torch::Tensor& xs, const torch::Tensor& xt,
                          TdNets& nets, const TdState& state, const TdHyper& hyper,
                          const TransferabilityMap& p_s, const TransferabilityMap& p_t);

struct TdData {
  torch::Tensor source;  // [Ns, 3, H, W]
  torch::Tensor target;  // [Nt, 3, H, W]
  TransferabilityMap p_source;  // [Ns, 1, h, w]
  TransferabilityMap p_target;  // [Nt, 1, h, w]
};

struct TdEpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  LossBundle losses;  // epoch means of adv_s2t, adv_t2s, cycle, Lb_s, Lb_t
};

// Owns the generator and discriminator optimizers for one training phase.
class TdTrainer {
 public:
  TdTrainer(TdState& state, const TdHyper& hyper);

  // One pass over the data: a generator step then a discriminator step per
  // minibatch, followed by one multiplier update from the epoch-mean
  // constraint losses. Throws Error(kDivergence) naming the offending term.
  TdEpochRecord train_epoch(const TdData& data, int epoch, std::mt19937_64& rng);

 private:
  TdState& state_;
  TdHyper hyper_;
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  std::unique_ptr<torch::optim::Adam> disc_opt_;
};

// Runs s2t over every image in eval mode, in chunks.
torch::Tensor translate_all(Translator& translator, const torch::Tensor& images,
                            int64_t chunk = 32);

}  // namespace tfda
