#include "tfda/config.hpp"

#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "tfda/error.hpp"

namespace tfda {

using nlohmann::json;

namespace {

struct Key {
  const char* section;
  const char* name;
  const char* provenance;
  const char* description;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
void assign(T& field, const json& v, const char* section, const char* name) {
  try {
    field = v.get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kConfig, std::string(section) + "." + name + ": wrong value type");
  }
}

#define TFDA_KEY(section, name, member, provenance, description)                          \
  Key {                                                                                    \
    section, name, provenance, description,                                                \
        [](const RunConfig& c) { return json(c.member); },                                 \
        [](RunConfig& c, const json& v) { assign(c.member, v, section, name); }            \
  }

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = {
      TFDA_KEY("dataset", "manifest", manifest, "artifact",
               "dataset manifest path; empty generates a synthetic set under <out>/data"),
      TFDA_KEY("dataset", "image_size", dataset.image_size, "artifact", "square image side in pixels (>= 16)"),
      TFDA_KEY("dataset", "num_classes", dataset.num_classes, "artifact", "number of classes K (>= 2)"),
      TFDA_KEY("dataset", "num_source", dataset.num_source, "artifact", "labelled source images"),
      TFDA_KEY("dataset", "num_target", dataset.num_target, "artifact", "unlabelled target training images"),
      TFDA_KEY("dataset", "num_target_eval", dataset.num_target_eval, "artifact",
               "held-out labelled target images for evaluation"),
      TFDA_KEY("dataset", "lesion_scale", dataset.lesion_scale, "artifact",
               "lesion radius multiplier (class balance knob)"),
      TFDA_KEY("dataset", "color_shift", dataset.shift.color_shift, "artifact", "target colour shift in [0, 1]"),
      TFDA_KEY("dataset", "texture_noise_sigma", dataset.shift.texture_noise_sigma, "artifact",
               "target pixel noise sigma"),
      TFDA_KEY("dataset", "shape_deform", dataset.shift.shape_deform, "artifact",
               "target lesion shape deformation in [0, 1]"),
      TFDA_KEY("dataset", "seed", dataset.seed, "artifact", "generator seed"),

      TFDA_KEY("networks", "base_channels", networks.base_channels, "artifact", "stem width"),
      TFDA_KEY("networks", "depth", networks.depth, "artifact", "stride-2 encoder stages"),
      TFDA_KEY("networks", "latent_channels", networks.latent_channels, "artifact",
               "translator bottleneck channels"),
      TFDA_KEY("networks", "ra2b_count", networks.ra2b_count, "paper", "RA2B blocks in the augmentor (16)"),
      TFDA_KEY("networks", "noise_channels", networks.noise_channels, "artifact", "augmentor noise channels"),
      Key{"networks", "attention_norm", "artifact",
          "attention softmax axis: column (as published, M^T applied) or row",
          [](const RunConfig& c) {
            return json(c.attention_norm == AttentionNorm::kColumn ? "column" : "row");
          },
          [](RunConfig& c, const json& v) {
            std::string s;
            assign(s, v, "networks", "attention_norm");
            if (s == "column") c.attention_norm = AttentionNorm::kColumn;
            else if (s == "row") c.attention_norm = AttentionNorm::kRow;
            else fail(ErrorCode::kConfig, "networks.attention_norm: expected column|row");
          }},

      TFDA_KEY("td", "alpha", td.alpha, "paper", "cycle-consistency weight (10)"),
      TFDA_KEY("td", "threshold", td.threshold, "paper", "bottleneck threshold T (200)"),
      TFDA_KEY("td", "gamma", td.gamma, "paper", "multiplier update step (1e-6)"),
      TFDA_KEY("td", "lambda_init", td.lambda_init, "paper", "initial lambda_s and lambda_t (1e-4)"),
      TFDA_KEY("td", "learning_rate", td.learning_rate, "artifact",
               "translator/discriminator Adam learning rate (paper 2.5e-4)"),
      TFDA_KEY("td", "adam_beta1", td.adam_beta1, "artifact", "Adam beta1"),
      TFDA_KEY("td", "adam_beta2", td.adam_beta2, "artifact", "Adam beta2"),
      TFDA_KEY("td", "epochs", td.epochs, "paper-scaled",
               "epochs per alternation; 2:1 constant:linear-decay split (paper: 10 + 5)"),
      TFDA_KEY("td", "batch_size", td.batch_size, "artifact", "minibatch size per domain"),
      Key{"td", "adversarial_form", "paper",
          "literal: log D(real) + 1 - log D(fake); conventional: log D(real) + log(1 - D(fake))",
          [](const RunConfig& c) {
            return json(c.td.adversarial_form == AdversarialForm::kLiteral ? "literal" : "conventional");
          },
          [](RunConfig& c, const json& v) {
            std::string s;
            assign(s, v, "td", "adversarial_form");
            if (s == "literal") c.td.adversarial_form = AdversarialForm::kLiteral;
            else if (s == "conventional") c.td.adversarial_form = AdversarialForm::kConventional;
            else fail(ErrorCode::kConfig, "td.adversarial_form: expected literal|conventional");
          }},

      TFDA_KEY("tf", "beta", tf.beta, "paper", "pseudo-label confidence threshold (0.9)"),
      TFDA_KEY("tf", "seg_learning_rate", tf.seg_learning_rate, "artifact",
               "segmenter SGD learning rate (paper 2e-4 for a pretrained backbone)"),
      TFDA_KEY("tf", "seg_momentum", tf.seg_momentum, "artifact", "segmenter SGD momentum"),
      TFDA_KEY("tf", "seg_power", tf.seg_power, "paper", "polynomial decay power (0.9)"),
      TFDA_KEY("tf", "seg_clip_norm", tf.seg_clip_norm, "artifact",
               "gradient-norm clip for segmenter updates; 0 disables"),
      TFDA_KEY("tf", "aug_learning_rate", tf.aug_learning_rate, "artifact", "augmentor Adam learning rate"),
      TFDA_KEY("tf", "disc_learning_rate", tf.disc_learning_rate, "paper", "feature discriminator Adam lr (1e-4)"),
      TFDA_KEY("tf", "disc_beta1", tf.disc_beta1, "paper", "feature discriminator Adam beta1 (0.9)"),
      TFDA_KEY("tf", "disc_beta2", tf.disc_beta2, "paper", "feature discriminator Adam beta2 (0.99)"),
      TFDA_KEY("tf", "align_weight", tf.align_weight, "artifact", "weight of the Step III alignment term"),
      TFDA_KEY("tf", "anchor_segmentation", tf.anchor_segmentation, "artifact",
               "keep the segmentation loss on during Step III"),
      TFDA_KEY("tf", "step1_epochs", tf.step1_epochs, "artifact", "Step I epochs per round"),
      TFDA_KEY("tf", "step2_epochs", tf.step2_epochs, "artifact", "Step II epochs per round"),
      TFDA_KEY("tf", "step3_epochs", tf.step3_epochs, "artifact", "Step III epochs per round"),
      TFDA_KEY("tf", "batch_size", tf.batch_size, "artifact", "minibatch size (half source, half target)"),

      TFDA_KEY("orchestrator", "alternation_count", orchestrator.alternation_count, "paper",
               "T_D/T_F alternations (3)"),
      TFDA_KEY("orchestrator", "baseline_epochs", orchestrator.baseline_epochs, "artifact",
               "source-only reference epochs recorded as k = 0; 0 disables"),
      TFDA_KEY("orchestrator", "reinit_discriminators", orchestrator.reinit_discriminators, "artifact",
               "re-initialise D1, D2 and D_F at every alternation"),
      TFDA_KEY("orchestrator", "seed", orchestrator.seed, "artifact", "training seed (overridden by --seed)"),

      TFDA_KEY("eval", "holdout_fraction", eval.holdout_fraction, "artifact",
               "holdout share for the domain classifier"),
      TFDA_KEY("eval", "gap_seeds", eval.gap_seeds, "artifact", "domain-gap estimator repetitions"),
      TFDA_KEY("eval", "gap_iterations", eval.gap_iterations, "artifact",
               "gradient steps of the domain classifier"),
  };
  return keys;
}

#undef TFDA_KEY

constexpr std::array<const char*, 6> kSections{"dataset", "networks", "td", "tf", "orchestrator", "eval"};

json to_json(const RunConfig& config) {
  json out = json::object();
  for (const char* section : kSections) out[section] = json::object();
  for (const auto& key : registry()) out[key.section][key.name] = key.get(config);
  return out;
}

}  // namespace

void RunConfig::validate() const {
  dataset.validate();
  networks.validate();
  if (networks.num_classes != dataset.num_classes) {
    fail(ErrorCode::kConfig, "networks.num_classes must equal dataset.num_classes");
  }
  if ((dataset.image_size >> networks.depth) < 2) {
    fail(ErrorCode::kConfig, "networks.depth too large for dataset.image_size");
  }
  if (dataset.image_size % (1 << networks.depth) != 0) {
    fail(ErrorCode::kConfig, "dataset.image_size must be divisible by 2^networks.depth");
  }
  td.validate();
  tf.validate();
  if (orchestrator.alternation_count < 1) {
    fail(ErrorCode::kConfig, "orchestrator.alternation_count: must be >= 1");
  }
  if (orchestrator.baseline_epochs < 0) {
    fail(ErrorCode::kConfig, "orchestrator.baseline_epochs: must be >= 0");
  }
  if (!(eval.holdout_fraction > 0 && eval.holdout_fraction < 1)) {
    fail(ErrorCode::kConfig, "eval.holdout_fraction: must be in (0, 1)");
  }
  if (eval.gap_seeds < 1) fail(ErrorCode::kConfig, "eval.gap_seeds: must be >= 1");
  if (eval.gap_iterations < 1) fail(ErrorCode::kConfig, "eval.gap_iterations: must be >= 1");
}

std::vector<ConfigKeyInfo> config_keys() {
  const json defaults = to_json(RunConfig{});
  std::vector<ConfigKeyInfo> out;
  for (const auto& key : registry()) {
    out.push_back({key.section, key.name, defaults[key.section][key.name].dump(), key.provenance,
                   key.description});
  }
  return out;
}

RunConfig parse_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorCode::kConfig, "config root must be an object");
  std::map<std::string, std::map<std::string, const Key*>> index;
  for (const auto& key : registry()) index[key.section][key.name] = &key;

  RunConfig config;
  for (const auto& [section, body] : doc.items()) {
    auto sec = index.find(section);
    if (sec == index.end()) fail(ErrorCode::kConfig, "unknown config section '" + section + "'");
    if (!body.is_object()) fail(ErrorCode::kConfig, "config section '" + section + "' must be an object");
    for (const auto& [name, value] : body.items()) {
      auto key = sec->second.find(name);
      if (key == sec->second.end()) {
        fail(ErrorCode::kConfig, "unknown config key '" + section + "." + name + "'");
      }
      key->second->set(config, value);
    }
  }
  config.networks.num_classes = config.dataset.num_classes;
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string serialize_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) {
  const std::string canonical = to_json(config).dump();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(canonical.data()),
                         static_cast<uInt>(canonical.size()));
  const auto adler = adler32(1L, reinterpret_cast<const Bytef*>(canonical.data()),
                             static_cast<uInt>(canonical.size()));
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%08lx%08lx", static_cast<unsigned long>(crc),
                static_cast<unsigned long>(adler));
  return buf;
}

}  // namespace tfda
