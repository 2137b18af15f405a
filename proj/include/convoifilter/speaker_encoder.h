// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CONVOIFILTER_SPEAKER_ENCODER_H_
#define CONVOIFILTER_SPEAKER_ENCODER_H_

#include <cstdint>

#include "convoifilter/dsp.h"
#include "convoifilter/nn.h"

namespace cvf {

struct SpeakerEmbedding {
  Eigen::RowVectorXd values;

  int dim() const { return static_cast<int>(values.size()); }
};

inline constexpr double kMinEncodeSeconds = 0.5;

// Frozen fingerprint encoder: log energy in d_emb triangular bands spanning
// 0..Nyquist, energies taken relative to their total, then mean-removed and
// L2-normalised. Invariant to any power-of-two gain bit-for-bit, and to other
// gains up to rounding.
SpeakerEmbedding encode(const Waveform& w, int d_emb);

// Cross-extraction network: Linear(2d -> d) -> Swish -> Linear(d -> d) over
// [e_ref | e_noisy].
struct FusionParams {
  Param w1, b1, w2, b2;

  ParamRefs refs() { return {&w1, &b1, &w2, &b2}; }
  int d_emb() const { return static_cast<int>(w2.value.cols()); }
};

FusionParams make_fusion_params(int d_emb);
void init_fusion(FusionParams& p, Rng& rng);

struct FusionCache {
  MatrixD input;   // 1 x 2d
  MatrixD hidden;  // pre-activation, 1 x d
  MatrixD act;     // 1 x d
  bool passthrough = false;
};

// With cross_extraction off the result is e_ref, unchanged, whatever e_noisy
// holds.
SpeakerEmbedding fuse(const SpeakerEmbedding& e_ref,
                      const SpeakerEmbedding& e_noisy, const FusionParams& p,
                      bool cross_extraction, FusionCache* cache = nullptr);

// Accumulates parameter gradients; d_ref / d_noisy may be null.
void fuse_backward(const Eigen::RowVectorXd& d_out, const FusionCache& cache,
                   FusionParams& p, Eigen::RowVectorXd* d_ref,
                   Eigen::RowVectorXd* d_noisy);

}  // namespace cvf

#endif  // CONVOIFILTER_SPEAKER_ENCODER_H_
