// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/gradcheck.h"

#include <algorithm>
#include <cmath>

namespace cvf {

bool GradcheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.rel_error);
  return m;
}

ModelConfig tiny_model_config(MaskVariant variant) {
  ModelConfig c;
  c.mask.n_blocks = 2;
  c.mask.hidden = 8;
  c.mask.n_heads = 2;
  c.mask.conv_kernel = 3;
  c.mask.d_emb = 4;
  c.mask.n_fft = 16;
  c.mask.variant = variant;
  c.asr.n_fft = 16;
  c.asr.hop = 4;
  c.asr.frames_per_token = 2;
  c.hop = 4;
  c.chunk_size_s = 20.0 / kDefaultSampleRate;
  return c;
}

MixtureExample tiny_example(uint64_t seed) {
  Rng rng(seed);
  MixtureExample ex;
  ex.clean_target.samples.resize(40);
  ex.noisy.samples.resize(40);
  for (std::size_t i = 0; i < 40; ++i) {
    const double s = 0.3 * std::sin(0.7 * static_cast<double>(i)) + 0.1 * rng.normal();
    ex.clean_target.samples[i] = static_cast<float>(s);
    ex.noisy.samples[i] = static_cast<float>(s + 0.2 * rng.normal());
  }
  ex.reference_utterance = ex.clean_target;
  for (int k = 0; k < 5; ++k) ex.tokens.push_back(static_cast<int>(rng.below(kTokenCount)));
  return ex;
}

ExampleEmbeddings random_embeddings(int d_emb, uint64_t seed) {
  Rng rng(seed);
  ExampleEmbeddings e;
  for (SpeakerEmbedding* v : {&e.ref, &e.noisy}) {
    v->values.resize(d_emb);
    for (int i = 0; i < d_emb; ++i) v->values(i) = rng.normal();
    v->values.normalize();
  }
  return e;
}

GradcheckReport check_model_gradients(Model& model, const MixtureExample& ex,
                                      const ExampleEmbeddings& emb, const TrainConfig& cfg,
                                      const std::string& suite, const GradcheckOptions& opt) {
  model.zero_grad();
  joint_step(model, ex, emb, cfg);
  StepOptions eval;
  eval.accumulate = false;
  GradcheckReport report;
  for (Param* p : model.trainable()) {
    const MatrixD analytic = p->grad;
    MatrixD numeric(analytic.rows(), analytic.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      float& v = p->value.data()[i];
      const float orig = v;
      const float up = static_cast<float>(orig + opt.step);
      const float down = static_cast<float>(orig - opt.step);
      v = up;
      const double lp = joint_step(model, ex, emb, cfg, eval).total_loss;
      v = down;
      const double lm = joint_step(model, ex, emb, cfg, eval).total_loss;
      v = orig;
      numeric.data()[i] = (lp - lm) / (static_cast<double>(up) - static_cast<double>(down));
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), kGradNormFloor});
    const double err = (analytic - numeric).norm() / denom;
    report.entries.push_back({suite, p->name, static_cast<int>(p->value.size()), err,
                              err < opt.tolerance});
  }
  return report;
}

GradcheckReport run_gradcheck(uint64_t seed, const GradcheckOptions& opt) {
  struct Suite {
    const char* name;
    MaskVariant variant;
    LossVariant loss;
  };
  const Suite suites[] = {{"conformer/si_snr", MaskVariant::kConformer, LossVariant::kSiSnr},
                          {"conformer/mse", MaskVariant::kConformer, LossVariant::kMse},
                          {"recurrent/si_snr", MaskVariant::kRecurrent, LossVariant::kSiSnr}};
  GradcheckReport all;
  uint64_t stream = 0;
  for (const Suite& s : suites) {
    const ModelConfig mc = tiny_model_config(s.variant);
    Model model = init_model(mc, derive_seed(seed, stream++));
    // Head pre-activations are bounded by |x|_2 |w_b|_2 < 3 here, so a bias
    // of +-4 keeps every one of them clear of the ReLU corner.
    for (Eigen::Index b = 0; b < model.mask().params().head_b.value.cols(); ++b)
      model.mask().params().head_b.value(0, b) = b % 2 == 0 ? 4.0f : -4.0f;
    const MixtureExample ex = tiny_example(derive_seed(seed, stream++));
    const ExampleEmbeddings emb = random_embeddings(mc.mask.d_emb, derive_seed(seed, stream++));
    TrainConfig cfg;
    cfg.threshold_db = 1000.0;  // always take the enhanced branch
    cfg.joint = true;
    cfg.loss_variant = s.loss;
    const GradcheckReport r = check_model_gradients(model, ex, emb, cfg, s.name, opt);
    all.entries.insert(all.entries.end(), r.entries.begin(), r.entries.end());
  }
  return all;
}

}  // namespace cvf
