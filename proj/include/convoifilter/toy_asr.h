// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Toy differentiable recogniser. The magnitude spectrogram is cut into fixed
// windows of frames_per_token frames, each window is mean-pooled over time,
// L2-normalised and classified by one affine layer into n_tokens logits.
// The loss is the mean cross-entropy over windows.

#ifndef CONVOIFILTER_TOY_ASR_H_
#define CONVOIFILTER_TOY_ASR_H_

#include <span>
#include <vector>

#include "convoifilter/dsp.h"
#include "convoifilter/nn.h"
#include "json.hpp"

namespace cvf {

struct ToyAsrConfig {
  int n_tokens = 8;
  int frames_per_token = 16;
  int n_fft = 512;
  int hop = 128;

  int bins() const { return n_fft / 2 + 1; }
};

void validate(const ToyAsrConfig& cfg);
nlohmann::ordered_json config_to_json(const ToyAsrConfig& cfg);
ToyAsrConfig asr_config_from_json(const nlohmann::json& j);

struct ToyAsrParams {
  Param w, b;  // bins x n_tokens, 1 x n_tokens

  ParamRefs refs() { return {&w, &b}; }
  std::vector<const Param*> refs() const { return {&w, &b}; }
};

ToyAsrParams make_toy_asr_params(const ToyAsrConfig& cfg);
void init_toy_asr(ToyAsrParams& p, Rng& rng);

// Number of complete token windows in a spectrogram with this many frames.
int token_windows(int frames, const ToyAsrConfig& cfg);

inline constexpr double kPoolNormEps = 1e-8;

struct ToyAsrCache {
  MatrixD pooled;           // windows x bins, before normalisation
  Eigen::VectorXd norms;    // per-window L2 norm
  MatrixD normalized;       // windows x bins
};

// Logits (windows x n_tokens) from a magnitude spectrogram.
MatrixD toy_asr_logits(const MatrixD& magnitude, const ToyAsrParams& p,
                       const ToyAsrConfig& cfg, ToyAsrCache* cache = nullptr);
MatrixD toy_asr_logits(const Stft& s, const ToyAsrParams& p, const ToyAsrConfig& cfg);
MatrixD toy_asr_logits(const Waveform& w, const ToyAsrParams& p, const ToyAsrConfig& cfg);

// Mean cross-entropy; writes dL/dlogits when d_logits is non-null. Throws
// InvalidInput when labels.size() != logits.rows() or a label is out of
// range.
double toy_asr_loss(const MatrixD& logits, const std::vector<int>& labels,
                    MatrixD* d_logits = nullptr);

// Propagates dL/dlogits back to the magnitude, accumulating parameter
// gradients.
MatrixD toy_asr_backward(const MatrixD& d_logits, const ToyAsrCache& cache,
                         ToyAsrParams& p, const ToyAsrConfig& cfg, int frames);

// Audio in, loss out. When d_audio is non-null it receives dL/daudio;
// parameter gradients are accumulated (scaled by grad_scale) when
// accumulate is set.
double toy_asr_audio_loss(std::span<const double> audio,
                          const std::vector<int>& labels, ToyAsrParams& p,
                          const ToyAsrConfig& cfg, std::vector<double>* d_audio,
                          bool accumulate, double grad_scale = 1.0);

std::vector<int> toy_asr_decode(const MatrixD& logits);

}  // namespace cvf

#endif  // CONVOIFILTER_TOY_ASR_H_
