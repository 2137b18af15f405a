// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CONVOIFILTER_SRC_FFT_H_
#define CONVOIFILTER_SRC_FFT_H_

#include <complex>
#include <memory>

namespace cvf::detail {

// Real-input FFT of fixed size n backed by FFTW (double precision).
// Instances are immutable once built and safe to share across threads.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  // out[b] = sum_k in[k] exp(-2 pi i b k / n), b in [0, n/2].
  void forward(const double* in, std::complex<double>* out) const;
  // out[k] = sum over the full Hermitian extension of in; no 1/n factor.
  // Imaginary parts of the DC and Nyquist bins are ignored.
  void inverse(const std::complex<double>* in, double* out) const;

 private:
  int n_;
  void* forward_plan_;
  void* inverse_plan_;
};

// Cached per-size instance.
std::shared_ptr<const RealFft> real_fft(int n);

}  // namespace cvf::detail

#endif  // CONVOIFILTER_SRC_FFT_H_
