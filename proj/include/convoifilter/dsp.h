// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Windowed STFT analysis/synthesis, masking and spectrogram export.
//
// Framing convention: the signal is reflect-padded by n_fft/2 on both ends and
// analysed with a periodic Hann window, giving 1 + len / hop frames. Synthesis
// is windowed overlap-add normalised by the summed squared window, floored at
// 1e-11, and trimmed back to the original length.

#ifndef CONVOIFILTER_DSP_H_
#define CONVOIFILTER_DSP_H_

#include <Eigen/Core>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace cvf {

namespace detail {
class RealFft;
}

using MatrixF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixD =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ComplexMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic,
                                    Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kDefaultSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Throws InvalidInput on a non-positive rate or any NaN/Inf sample.
void check_waveform(const Waveform& w);

// Rows are time frames, columns are frequency bins 0..n_fft/2.
struct Stft {
  MatrixF magnitude;
  MatrixF phase;  // radians in (-pi, pi]
  int n_fft = 0;
  int hop = 0;
  int64_t original_len = 0;
  int sample_rate = kDefaultSampleRate;

  int frames() const { return static_cast<int>(magnitude.rows()); }
  int bins() const { return static_cast<int>(magnitude.cols()); }
};

// Non-negative spectral gain. Construction rejects negative or non-finite
// entries.
class Mask {
 public:
  explicit Mask(MatrixF values);

  const MatrixF& values() const { return values_; }
  int rows() const { return static_cast<int>(values_.rows()); }
  int cols() const { return static_cast<int>(values_.cols()); }

 private:
  MatrixF values_;
};

Stft stft(const Waveform& w, int n_fft, int hop);
Waveform istft(const Stft& s);
Stft apply_mask(const Stft& s, const Mask& m);

// Grayscale PNG of the log magnitude (80 dB range below the peak), width =
// frames, height = bins, low frequencies at the bottom.
void export_spectrogram_image(const Stft& s, const std::filesystem::path& path);

// Double-precision STFT with the same framing as stft()/istft(), plus the
// adjoint of each linear map. Gradients with respect to a complex spectrum
// are packed as dL/dRe + i dL/dIm.
class StftEngine {
 public:
  StftEngine(int n_fft, int hop);

  int n_fft() const { return n_fft_; }
  int hop() const { return hop_; }
  int bins() const { return n_fft_ / 2 + 1; }
  int frames_for(int64_t len) const {
    return 1 + static_cast<int>(len / hop_);
  }
  const std::vector<double>& window() const { return window_; }

  ComplexMatrix analyze(std::span<const double> x) const;
  std::vector<double> analyze_adjoint(const ComplexMatrix& grad,
                                      int64_t len) const;

  std::vector<double> synthesize(const ComplexMatrix& spec, int64_t len) const;
  ComplexMatrix synthesize_adjoint(std::span<const double> grad,
                                   int frames) const;

  // Magnitude/phase synthesis, and the gradient of that map with respect to
  // the magnitude (phase held fixed).
  std::vector<double> synthesize_polar(const MatrixD& magnitude,
                                       const MatrixF& phase,
                                       int64_t len) const;
  MatrixD synthesize_polar_adjoint(std::span<const double> grad,
                                   const MatrixF& phase) const;

 private:
  std::vector<double> window_sum(int frames) const;

  int n_fft_;
  int hop_;
  std::vector<double> window_;
  std::shared_ptr<const detail::RealFft> fft_;
};

std::vector<double> to_double(std::span<const float> x);
std::vector<float> to_float(std::span<const double> x);

}  // namespace cvf

#endif  // CONVOIFILTER_DSP_H_
