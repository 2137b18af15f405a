// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/dsp.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "convoifilter/errors.h"
#include "fft.h"

namespace cvf {
namespace {

constexpr double kWindowSumFloor = 1e-11;

// Reflect index into [0, n) without repeating the edge sample.
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

float wrap_phase(double p) {
  constexpr float kPi = static_cast<float>(std::numbers::pi);
  const float f = static_cast<float>(p);
  return f <= -kPi ? kPi : f;
}

// Bin weight of the one-sided spectrum inside the full Hermitian sum.
double hermitian_weight(int b, int n_fft) {
  return (b == 0 || 2 * b == n_fft) ? 1.0 : 2.0;
}

}  // namespace

void check_waveform(const Waveform& w) {
  if (w.sample_rate <= 0) throw InvalidInput("sample rate must be positive");
  for (float v : w.samples)
    if (!std::isfinite(v)) throw InvalidInput("waveform contains NaN or Inf");
}

Mask::Mask(MatrixF values) : values_(std::move(values)) {
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const float v = values_.data()[i];
    if (!std::isfinite(v) || v < 0.0f)
      throw InvalidInput("mask entries must be finite and non-negative");
  }
}

std::vector<double> to_double(std::span<const float> x) {
  return std::vector<double>(x.begin(), x.end());
}

std::vector<float> to_float(std::span<const double> x) {
  std::vector<float> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
  return out;
}

StftEngine::StftEngine(int n_fft, int hop) : n_fft_(n_fft), hop_(hop) {
  if (n_fft <= 0 || n_fft % 2 != 0)
    throw InvalidInput("n_fft must be positive and even");
  if (hop <= 0 || hop > n_fft) throw InvalidInput("hop must be in (0, n_fft]");
  window_.resize(n_fft);
  for (int k = 0; k < n_fft; ++k)
    window_[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * k / n_fft);
  fft_ = detail::real_fft(n_fft);
}

ComplexMatrix StftEngine::analyze(std::span<const double> x) const {
  if (x.empty()) throw InvalidInput("cannot analyse an empty signal");
  const int64_t len = static_cast<int64_t>(x.size());
  const int frames = frames_for(len);
  const int pad = n_fft_ / 2;
  ComplexMatrix out(frames, bins());
  std::vector<double> frame(n_fft_);
  for (int t = 0; t < frames; ++t) {
    const int64_t start = static_cast<int64_t>(t) * hop_ - pad;
    for (int k = 0; k < n_fft_; ++k)
      frame[k] = window_[k] * x[reflect_index(start + k, len)];
    fft_->forward(frame.data(), out.row(t).data());
  }
  return out;
}

std::vector<double> StftEngine::analyze_adjoint(const ComplexMatrix& grad,
                                                int64_t len) const {
  const int pad = n_fft_ / 2;
  std::vector<double> out(len, 0.0);
  std::vector<std::complex<double>> z(bins());
  std::vector<double> frame(n_fft_);
  for (int t = 0; t < grad.rows(); ++t) {
    for (int b = 0; b < bins(); ++b)
      z[b] = grad(t, b) / hermitian_weight(b, n_fft_);
    fft_->inverse(z.data(), frame.data());
    const int64_t start = static_cast<int64_t>(t) * hop_ - pad;
    for (int k = 0; k < n_fft_; ++k)
      out[reflect_index(start + k, len)] += window_[k] * frame[k];
  }
  return out;
}

std::vector<double> StftEngine::window_sum(int frames) const {
  const int64_t total = static_cast<int64_t>(hop_) * (frames - 1) + n_fft_;
  std::vector<double> wsum(total, 0.0);
  for (int t = 0; t < frames; ++t)
    for (int k = 0; k < n_fft_; ++k)
      wsum[static_cast<int64_t>(t) * hop_ + k] += window_[k] * window_[k];
  return wsum;
}

std::vector<double> StftEngine::synthesize(const ComplexMatrix& spec,
                                           int64_t len) const {
  const int frames = static_cast<int>(spec.rows());
  if (spec.cols() != bins()) throw InvalidInput("spectrum has wrong bin count");
  const int pad = n_fft_ / 2;
  const std::vector<double> wsum = window_sum(frames);
  std::vector<double> buf(wsum.size(), 0.0);
  std::vector<double> frame(n_fft_);
  const double inv_n = 1.0 / n_fft_;
  for (int t = 0; t < frames; ++t) {
    fft_->inverse(spec.row(t).data(), frame.data());
    const int64_t start = static_cast<int64_t>(t) * hop_;
    for (int k = 0; k < n_fft_; ++k)
      buf[start + k] += window_[k] * frame[k] * inv_n;
  }
  std::vector<double> out(len, 0.0);
  for (int64_t n = 0; n < len; ++n) {
    const int64_t i = n + pad;
    if (i < static_cast<int64_t>(buf.size()))
      out[n] = buf[i] / std::max(wsum[i], kWindowSumFloor);
  }
  return out;
}

ComplexMatrix StftEngine::synthesize_adjoint(std::span<const double> grad,
                                             int frames) const {
  const int pad = n_fft_ / 2;
  const std::vector<double> wsum = window_sum(frames);
  std::vector<double> gbuf(wsum.size(), 0.0);
  for (std::size_t n = 0; n < grad.size(); ++n) {
    const std::size_t i = n + pad;
    if (i < gbuf.size()) gbuf[i] = grad[n] / std::max(wsum[i], kWindowSumFloor);
  }
  ComplexMatrix out(frames, bins());
  std::vector<double> frame(n_fft_);
  const double inv_n = 1.0 / n_fft_;
  for (int t = 0; t < frames; ++t) {
    const int64_t start = static_cast<int64_t>(t) * hop_;
    for (int k = 0; k < n_fft_; ++k) frame[k] = gbuf[start + k] * window_[k];
    fft_->forward(frame.data(), out.row(t).data());
    for (int b = 0; b < bins(); ++b)
      out(t, b) *= hermitian_weight(b, n_fft_) * inv_n;
  }
  return out;
}

std::vector<double> StftEngine::synthesize_polar(const MatrixD& magnitude,
                                                 const MatrixF& phase,
                                                 int64_t len) const {
  if (magnitude.rows() != phase.rows() || magnitude.cols() != phase.cols())
    throw InvalidInput("magnitude and phase shapes differ");
  ComplexMatrix spec(magnitude.rows(), magnitude.cols());
  for (Eigen::Index t = 0; t < spec.rows(); ++t)
    for (Eigen::Index b = 0; b < spec.cols(); ++b)
      spec(t, b) = std::polar(magnitude(t, b), static_cast<double>(phase(t, b)));
  return synthesize(spec, len);
}

MatrixD StftEngine::synthesize_polar_adjoint(std::span<const double> grad,
                                             const MatrixF& phase) const {
  const ComplexMatrix g = synthesize_adjoint(grad, static_cast<int>(phase.rows()));
  MatrixD out(phase.rows(), phase.cols());
  for (Eigen::Index t = 0; t < out.rows(); ++t)
    for (Eigen::Index b = 0; b < out.cols(); ++b) {
      const double p = phase(t, b);
      out(t, b) = g(t, b).real() * std::cos(p) + g(t, b).imag() * std::sin(p);
    }
  return out;
}

Stft stft(const Waveform& w, int n_fft, int hop) {
  if (w.empty()) throw InvalidInput("stft of an empty waveform");
  check_waveform(w);
  const StftEngine engine(n_fft, hop);
  const ComplexMatrix spec = engine.analyze(to_double(w.samples));
  Stft s;
  s.n_fft = n_fft;
  s.hop = hop;
  s.original_len = static_cast<int64_t>(w.size());
  s.sample_rate = w.sample_rate;
  s.magnitude.resize(spec.rows(), spec.cols());
  s.phase.resize(spec.rows(), spec.cols());
  for (Eigen::Index t = 0; t < spec.rows(); ++t)
    for (Eigen::Index b = 0; b < spec.cols(); ++b) {
      s.magnitude(t, b) = static_cast<float>(std::abs(spec(t, b)));
      s.phase(t, b) = wrap_phase(std::arg(spec(t, b)));
    }
  return s;
}

Waveform istft(const Stft& s) {
  if (s.magnitude.rows() != s.phase.rows() ||
      s.magnitude.cols() != s.phase.cols())
    throw InvalidInput("istft: magnitude and phase shapes differ");
  if (s.bins() != s.n_fft / 2 + 1)
    throw InvalidInput("istft: bin count does not match n_fft");
  const StftEngine engine(s.n_fft, s.hop);
  const std::vector<double> y =
      engine.synthesize_polar(s.magnitude.cast<double>(), s.phase, s.original_len);
  return Waveform{to_float(y), s.sample_rate};
}

Stft apply_mask(const Stft& s, const Mask& m) {
  if (m.rows() != s.frames() || m.cols() != s.bins())
    throw InvalidInput("apply_mask: mask shape does not match spectrogram");
  Stft out = s;
  out.magnitude = s.magnitude.cwiseProduct(m.values());
  return out;
}

void export_spectrogram_image(const Stft& s, const std::filesystem::path& path) {
  const int width = s.frames();
  const int height = s.bins();
  if (width == 0 || height == 0) throw InvalidInput("empty spectrogram");
  const float peak = s.magnitude.maxCoeff();
  std::vector<unsigned char> pixels(static_cast<std::size_t>(width) * height, 0);
  if (peak > 0.0f) {
    constexpr double kRangeDb = 80.0;
    const double peak_db = 20.0 * std::log10(static_cast<double>(peak));
    for (int b = 0; b < height; ++b) {
      const int row = height - 1 - b;
      for (int t = 0; t < width; ++t) {
        const double mag = s.magnitude(t, b);
        const double db = mag > 0.0 ? 20.0 * std::log10(mag) : -1e9;
        const double level = std::clamp((db - peak_db + kRangeDb) / kRangeDb, 0.0, 1.0);
        pixels[static_cast<std::size_t>(row) * width + t] =
            static_cast<unsigned char>(std::lround(level * 255.0));
      }
    }
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(),
                               width, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write " + path.string() + ": " + msg);
  }
}

}  // namespace cvf
