// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "fft.h"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <vector>

#include "convoifilter/errors.h"

namespace cvf::detail {
namespace {

// FFTW planning is not thread safe; execution with the new-array interface is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

RealFft::RealFft(int n) : n_(n) {
  if (n <= 0) throw InvalidInput("fft size must be positive");
  std::vector<double> re(n);
  std::vector<std::complex<double>> cx(n / 2 + 1);
  auto* cx_ptr = reinterpret_cast<fftw_complex*>(cx.data());
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  std::lock_guard<std::mutex> lock(planner_mutex());
  forward_plan_ = fftw_plan_dft_r2c_1d(n, re.data(), cx_ptr, flags);
  inverse_plan_ = fftw_plan_dft_c2r_1d(n, cx_ptr, re.data(), flags);
  if (!forward_plan_ || !inverse_plan_) throw Error("fftw planning failed");
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
}

void RealFft::forward(const double* in, std::complex<double>* out) const {
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_),
                       const_cast<double*>(in),
                       reinterpret_cast<fftw_complex*>(out));
}

void RealFft::inverse(const std::complex<double>* in, double* out) const {
  // c2r overwrites its input.
  std::vector<std::complex<double>> scratch(in, in + bins());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_),
                       reinterpret_cast<fftw_complex*>(scratch.data()), out);
}

std::shared_ptr<const RealFft> real_fft(int n) {
  static std::mutex cache_mutex;
  static std::map<int, std::shared_ptr<const RealFft>> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto fft = std::make_shared<const RealFft>(n);
  cache.emplace(n, fft);
  return fft;
}

}  // namespace cvf::detail
