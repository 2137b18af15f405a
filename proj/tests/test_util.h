// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CONVOIFILTER_TESTS_TEST_UTIL_H_
#define CONVOIFILTER_TESTS_TEST_UTIL_H_

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "convoifilter/dsp.h"
#include "convoifilter/rng.h"

namespace cvf::testing {

inline Waveform random_wave(std::size_t n, uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (float& v : w.samples) v = static_cast<float>(scale * rng.uniform(-1.0, 1.0));
  return w;
}

inline Waveform sine(std::size_t n, double hz, double amp = 0.5, double phase = 0.0,
                     int rate = kDefaultSampleRate) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = static_cast<float>(
        amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate + phase));
  return w;
}

// Direct O(n^2) DFT magnitude of x[0..n) times a periodic Hann window.
inline std::vector<double> hann_dft_magnitude(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t / n);
      acc += w * x[t] * std::polar(1.0, -2.0 * std::numbers::pi * k * t / n);
    }
    mag[k] = std::abs(acc);
  }
  return mag;
}

// Energy of w in [lo_hz, hi_hz) from an independent direct DFT of the whole
// buffer.
inline double band_energy(const Waveform& w, double lo_hz, double hi_hz) {
  const std::size_t n = w.size();
  double e = 0.0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) * w.sample_rate / n;
    if (f < lo_hz || f >= hi_hz) continue;
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t)
      acc += static_cast<double>(w.samples[t]) * std::polar(1.0, -2.0 * std::numbers::pi * k * t / n);
    e += std::norm(acc);
  }
  return e;
}

inline double rms(const std::vector<float>& x) {
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return x.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(x.size()));
}

inline double power(const std::vector<float>& x) {
  const double r = rms(x);
  return r * r;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cvf_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

}  // namespace cvf::testing

#endif  // CONVOIFILTER_TESTS_TEST_UTIL_H_
