// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Mask estimator. The features [F | e] are projected to the model width,
// optionally offset by a sinusoidal position code, and passed through a stack
// of conformer blocks:
//
//   x1 = x + 1/2 FFN(x)
//   x2 = x1 + MHSA(x1)
//   x3 = x2 + Conv(x2)
//   y  = LayerNorm(x3 + 1/2 FFN(x3))
//
// FFN, MHSA and Conv each start with their own layer norm (pre-norm). An
// affine head maps the model width to n_fft/2+1 bins and a ReLU makes the mask
// non-negative. The recurrent variant swaps the conformer stack for
// bidirectional LSTM layers with the same projection and head.

#ifndef CONVOIFILTER_MASK_NET_H_
#define CONVOIFILTER_MASK_NET_H_

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "convoifilter/dsp.h"
#include "convoifilter/nn.h"
#include "convoifilter/speaker_encoder.h"
#include "json.hpp"

namespace cvf {

enum class MaskVariant { kConformer, kRecurrent };

struct MaskNetConfig {
  int n_blocks = 2;
  int hidden = 64;
  int n_heads = 4;
  int conv_kernel = 7;
  int d_emb = 64;
  int n_fft = 512;
  int ffn_expansion = 4;
  double dropout_rate = 0.1;
  bool positional_encoding = true;
  MaskVariant variant = MaskVariant::kConformer;

  int bins() const { return n_fft / 2 + 1; }
  int input_dim() const { return bins() + d_emb; }
};

void validate(const MaskNetConfig& cfg);
nlohmann::ordered_json config_to_json(const MaskNetConfig& cfg);
MaskNetConfig mask_config_from_json(const nlohmann::json& j);

using FeatureMatrix = MatrixD;

// Row t is [F_t | e]; the same embedding is broadcast to every frame.
FeatureMatrix build_features(const Stft& s, const SpeakerEmbedding& e);
FeatureMatrix build_features(const MatrixD& magnitude, const SpeakerEmbedding& e);
// As above, checking bin count and d_emb against the config.
FeatureMatrix build_features(const Stft& s, const SpeakerEmbedding& e,
                             const MaskNetConfig& cfg);

struct FfnParams {
  Param ln_g, ln_b, w1, b1, w2, b2;
};
struct AttentionParams {
  Param ln_g, ln_b, wq, bq, wk, bk, wv, bv, wo, bo;
};
struct ConvModuleParams {
  Param ln_g, ln_b, pw1_w, pw1_b, dw_w, dw_b, norm_g, norm_b, pw2_w, pw2_b;
};
struct ConformerBlockParams {
  FfnParams ffn1;
  AttentionParams att;
  ConvModuleParams conv;
  FfnParams ffn2;
  Param final_g, final_b;
};
struct LstmDirectionParams {
  Param w_ih, w_hh, b;  // gate order i, f, g, o
};
struct RecurrentLayerParams {
  LstmDirectionParams fwd, bwd;
};

struct MaskNetParams {
  Param in_w, in_b;
  std::vector<ConformerBlockParams> blocks;
  std::vector<RecurrentLayerParams> layers;
  Param head_w, head_b;

  ParamRefs refs();
  std::vector<const Param*> refs() const;
};

// Zero-valued parameters of the right shapes (layer-norm scales at 1).
MaskNetParams make_mask_params(const MaskNetConfig& cfg);
// Deterministic seeded initialisation (uniform fan-in for weights, zero
// biases, unit layer-norm scales).
MaskNetParams init_params(const MaskNetConfig& cfg, uint64_t seed);

// One conformer block in inference mode (no dropout), for structural checks.
MatrixD conformer_block_forward(const ConformerBlockParams& p, const MatrixD& x,
                                int n_heads);

struct MaskNetCache;  // activations saved by a training-mode forward

class MaskNet {
 public:
  MaskNet(MaskNetConfig cfg, MaskNetParams params);

  const MaskNetConfig& config() const { return cfg_; }
  MaskNetParams& params() { return params_; }
  const MaskNetParams& params() const { return params_; }

  // Inference: dropout off, deterministic.
  Mask forward(const FeatureMatrix& g_hat) const;

  // Returns the post-ReLU mask in double. With a non-null cache the
  // activations needed by backward() are stored there; dropout is active
  // only when dropout_rng is non-null.
  MatrixD forward_train(const FeatureMatrix& g_hat, MaskNetCache* cache,
                        Rng* dropout_rng) const;

  // Accumulates parameter gradients from dL/dM and returns dL/dG_hat.
  // Throws StateError when the cache is empty.
  MatrixD backward(const MatrixD& d_mask, MaskNetCache& cache);

 private:
  MaskNetConfig cfg_;
  MaskNetParams params_;
};

struct MaskNetCache {
  MaskNetCache();
  ~MaskNetCache();
  MaskNetCache(MaskNetCache&&) noexcept;
  MaskNetCache& operator=(MaskNetCache&&) noexcept;

  struct Impl;
  std::unique_ptr<Impl> impl;
};

// Versioned checkpoint with the config block and every mask-net tensor.
void save_checkpoint(const MaskNet& net, const std::filesystem::path& path);
MaskNet load_checkpoint(const std::filesystem::path& path);

}  // namespace cvf

#endif  // CONVOIFILTER_MASK_NET_H_
