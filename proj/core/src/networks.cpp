#include "tfda/networks.hpp"

#include "tfda/error.hpp"

namespace tfda {

namespace nn = torch::nn;
namespace nnf = torch::nn::functional;

namespace {

constexpr double kLeakySlope = 0.2;

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1,
                int64_t dilation = 1) {
  const int64_t pad = dilation * (kernel / 2);
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel)
                        .stride(stride)
                        .padding(pad)
                        .dilation(dilation));
}

nn::LeakyReLU leaky() {
  return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope));
}

nn::Sequential conv_act(int64_t in, int64_t out, int64_t kernel,
                        int64_t stride = 1, int64_t dilation = 1) {
  return nn::Sequential(conv(in, out, kernel, stride, dilation), leaky());
}

nn::Sequential down_stage(int64_t in, int64_t out) {
  return nn::Sequential(conv(in, out, 3, 2), leaky(), conv(out, out, 3), leaky());
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return nnf::interpolate(x, nnf::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
}

}  // namespace

void NetworkSpec::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "networks." + field + ": " + why);
  };
  if (base_channels < 1) bad("base_channels", "must be positive");
  if (depth < 1 || depth > 4) bad("depth", "must be in [1, 4]");
  if (num_classes < 2) bad("num_classes", "must be >= 2");
  if (latent_channels < 1) bad("latent_channels", "must be positive");
  if (ra2b_count < 1) bad("ra2b_count", "must be >= 1");
  if (noise_channels < 1) bad("noise_channels", "must be positive");
}

int64_t NetworkSpec::channels_at(int stage) const {
  return static_cast<int64_t>(base_channels) << std::min(stage, 2);
}

// Segmenter

SegmenterImpl::SegmenterImpl(const NetworkSpec& spec) : spec_(spec) {
  spec.validate();
  stem_ = register_module("stem", conv_act(3, spec.channels_at(0), 3));
  for (int i = 1; i <= spec.depth; ++i) {
    down_.push_back(register_module("down" + std::to_string(i),
                                    down_stage(spec.channels_at(i - 1),
                                               spec.channels_at(i))));
  }
  const int64_t top = spec.high_channels();
  context_ = register_module("context", conv_act(top, top, 3, 1, 2));
  for (int i = spec.depth; i >= 1; --i) {
    up_.push_back(register_module("up" + std::to_string(i),
                                  conv_act(spec.channels_at(i),
                                           spec.channels_at(i - 1), 3)));
  }
  head_ = register_module("head", conv(spec.channels_at(0), spec.num_classes, 1));
}

SegmenterOutput SegmenterImpl::forward(const torch::Tensor& images) {
  std::vector<torch::Tensor> skips;
  auto x = stem_->forward(images);
  skips.push_back(x);
  for (auto& stage : down_) {
    x = stage->forward(x);
    skips.push_back(x);
  }
  SegmenterOutput out;
  out.low = skips[1];
  x = context_->forward(x);
  out.high = x;
  for (size_t i = 0; i < up_.size(); ++i) {
    const size_t level = down_.size() - 1 - i;
    x = up_[i]->forward(upsample2(x)) + skips[level];
  }
  out.logits = head_->forward(x);
  return out;
}

// Translator

TranslatorImpl::TranslatorImpl(const NetworkSpec& spec) : spec_(spec) {
  spec.validate();
  stem_ = register_module("stem", conv_act(3, spec.channels_at(0), 3));
  for (int i = 1; i <= spec.depth; ++i) {
    down_.push_back(register_module("down" + std::to_string(i),
                                    down_stage(spec.channels_at(i - 1),
                                               spec.channels_at(i))));
  }
  const int64_t top = spec.high_channels();
  residual_ = register_module("residual",
                              nn::Sequential(conv(top, top, 3), leaky(), conv(top, top, 3)));
  mu_head_ = register_module("mu", conv(top, spec.latent_channels, 1));
  log_var_head_ = register_module("log_var", conv(top, spec.latent_channels, 1));
  {
    torch::NoGradGuard guard;
    log_var_head_->weight.mul_(0.1);
    log_var_head_->bias.fill_(-2.0);
  }
  from_latent_ = register_module("from_latent",
                                 conv_act(spec.latent_channels, top, 1));
  for (int i = spec.depth; i >= 1; --i) {
    up_.push_back(register_module("up" + std::to_string(i),
                                  conv_act(spec.channels_at(i),
                                           spec.channels_at(i - 1), 3)));
  }
  out_ = register_module("out", conv(spec.channels_at(0), 3, 3));
}

TranslatorOutput TranslatorImpl::forward(const torch::Tensor& images) {
  const auto skip = stem_->forward(images);
  auto x = skip;
  for (auto& stage : down_) x = stage->forward(x);
  x = torch::leaky_relu(x + residual_->forward(x), kLeakySlope);

  TranslatorOutput out;
  out.mu = mu_head_->forward(x);
  out.log_var = log_var_head_->forward(x);
  auto z = out.mu;
  if (is_training()) {
    z = out.mu + torch::exp(0.5 * out.log_var) * torch::randn_like(out.mu);
  }
  x = from_latent_->forward(z);
  for (auto& stage : up_) x = stage->forward(upsample2(x));
  out.image = torch::sigmoid(out_->forward(x + skip));
  return out;
}

// Discriminator

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorKind kind, int64_t in_channels)
    : kind_(kind) {
  const std::array<int64_t, 5> strides =
      kind == DiscriminatorKind::kImage ? std::array<int64_t, 5>{2, 2, 1, 1, 1}
                                        : std::array<int64_t, 5>{1, 2, 1, 1, 1};
  int64_t in = in_channels;
  for (size_t i = 0; i < kWidths.size(); ++i) {
    layers_.push_back(register_module("conv" + std::to_string(i),
                                      conv(in, kWidths[i], 3, strides[i])));
    in = kWidths[i];
  }
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& input) {
  auto x = input;
  for (size_t i = 0; i + 1 < layers_.size(); ++i) {
    x = torch::leaky_relu(layers_[i]->forward(x), kLeakySlope);
  }
  return torch::sigmoid(layers_.back()->forward(x));
}

// Augmentor

AugmentorImpl::AugmentorImpl(const NetworkSpec& spec, int64_t image_size,
                             AttentionNorm norm)
    : spec_(spec),
      image_size_(image_size),
      pool_factor_(int64_t{1} << (spec.depth - 1)) {
  spec.validate();
  const int64_t low = spec.low_channels();
  const int64_t high = spec.high_channels();
  const int64_t side = spec.high_size(image_size);
  if (side < 1) fail(ErrorCode::kConfig, "image too small for network depth");
  noise_low_ = register_module("noise_low", conv(spec.noise_channels, low, 1));
  noise_high_ = register_module("noise_high", conv(spec.noise_channels, high, 1));
  down_ = register_module("down", conv(low, high, 3));
  fuse_ = register_module("fuse", conv(2 * high, high, 1));
  for (int i = 0; i < spec.ra2b_count; ++i) {
    blocks_.push_back(register_module("ra2b" + std::to_string(i),
                                      Ra2bBlock(high, side, side, norm)));
  }
  out_ = register_module("out", conv(high, high, 1));
}

std::vector<int64_t> AugmentorImpl::noise_shape(int64_t batch) const {
  const int64_t side = spec_.low_size(image_size_);
  return {batch, spec_.noise_channels, side, side};
}

torch::Tensor AugmentorImpl::encode(const torch::Tensor& low,
                                    const torch::Tensor& high) {
  auto pooled = pool_factor_ > 1 ? nnf::avg_pool2d(low, nnf::AvgPool2dFuncOptions(pool_factor_))
                                 : low;
  auto down = torch::leaky_relu(down_->forward(pooled), kLeakySlope);
  return torch::leaky_relu(fuse_->forward(torch::cat({down, high}, 1)), kLeakySlope);
}

torch::Tensor AugmentorImpl::plain_path(const torch::Tensor& low,
                                        const torch::Tensor& high) {
  return out_->forward(encode(low, high));
}

torch::Tensor AugmentorImpl::forward(const torch::Tensor& low,
                                     const torch::Tensor& high,
                                     const torch::Tensor& noise,
                                     const std::optional<torch::Tensor>& weight) {
  const auto noisy_low = low + noise_low_->forward(noise);
  auto pooled_noise = pool_factor_ > 1
                          ? nnf::avg_pool2d(noise, nnf::AvgPool2dFuncOptions(pool_factor_))
                          : noise;
  const auto noisy_high = high + noise_high_->forward(pooled_noise);
  auto x = encode(noisy_low, noisy_high);
  for (auto& block : blocks_) x = block->forward(x, weight);
  return out_->forward(x);
}

Segmenter build_segmenter(const NetworkSpec& spec) { return Segmenter(spec); }

Translator build_translator(const NetworkSpec& spec) { return Translator(spec); }

Discriminator build_discriminator(const NetworkSpec& spec, DiscriminatorKind kind) {
  spec.validate();
  const int64_t in = kind == DiscriminatorKind::kImage ? 3 : spec.high_channels();
  return Discriminator(kind, in);
}

Augmentor build_augmentor(const NetworkSpec& spec, int64_t image_size) {
  return Augmentor(spec, image_size);
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.numel();
  return total;
}

void copy_parameters(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard guard;
  const auto from = src.named_parameters();
  auto to = dst.named_parameters();
  if (from.size() != to.size()) {
    fail(ErrorCode::kInternal, "copy_parameters: architecture mismatch");
  }
  for (auto& item : to) {
    item.value().copy_(from[item.key()]);
  }
}

void set_trainable(torch::nn::Module& module, bool trainable) {
  for (auto& p : module.parameters()) p.set_requires_grad(trainable);
}

}  // namespace tfda
