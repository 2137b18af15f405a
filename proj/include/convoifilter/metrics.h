// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CONVOIFILTER_METRICS_H_
#define CONVOIFILTER_METRICS_H_

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "convoifilter/dsp.h"

namespace cvf {

// Scores are clamped to this magnitude so perfect reconstructions stay finite.
inline constexpr double kScoreClampDb = 60.0;

// Scale-invariant SNR in dB. Both signals are made zero-mean; the estimate is
// projected onto the target and the residual is treated as noise.
double si_snr(const Waveform& estimate, const Waveform& target);
double si_snr(std::span<const double> estimate, std::span<const double> target);

// As si_snr, also writing d(si_snr)/d(estimate) into grad (zero when clamped).
double si_snr_with_grad(std::span<const double> estimate,
                        std::span<const double> target,
                        std::span<double> grad);

// Plain energy-ratio SDR, 10 log10(|s|^2 / |s - est|^2), clamped.
double sdr(const Waveform& estimate, const Waveform& target);
double sdr(std::span<const double> estimate, std::span<const double> target);

// Mean squared difference over all magnitude entries.
double mse_spectral_loss(const MatrixF& estimate_mag, const MatrixF& target_mag);

inline constexpr double kIrmEpsilon = 1e-8;
inline constexpr double kIrmClipMax = 10.0;

// clean / (noisy + eps), clipped to [0, kIrmClipMax].
Mask ideal_ratio_mask(const Stft& clean, const Stft& noisy);

struct ItemScore {
  std::string id;
  double si_snr_db = 0.0;
  double sdr_db = 0.0;
};

// Aggregate fields are always the arithmetic mean of the items.
class ScoreReport {
 public:
  void add(ItemScore item);
  const std::vector<ItemScore>& items() const { return items_; }
  double si_snr_db() const;
  double sdr_db() const;

  // One JSON object per line: {"id","si_snr_db","sdr_db"} per item, then
  // {"aggregate":true,"count","si_snr_db","sdr_db"}.
  void write_jsonl(std::ostream& out) const;
  static ScoreReport read_jsonl(std::istream& in);

 private:
  std::vector<ItemScore> items_;
};

}  // namespace cvf

#endif  // CONVOIFILTER_METRICS_H_
