// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/toy_asr.h"

#include <algorithm>
#include <cmath>

#include "convoifilter/errors.h"

namespace cvf {

void validate(const ToyAsrConfig& c) {
  if (c.n_tokens < 2) throw ConfigError("asr: n_tokens must be >= 2");
  if (c.frames_per_token < 1) throw ConfigError("asr: frames_per_token must be >= 1");
  if (c.n_fft <= 0 || c.n_fft % 2 != 0) throw ConfigError("asr: n_fft must be even");
  if (c.hop <= 0 || c.hop > c.n_fft) throw ConfigError("asr: hop must lie in (0, n_fft]");
}

nlohmann::ordered_json config_to_json(const ToyAsrConfig& c) {
  nlohmann::ordered_json j;
  j["n_tokens"] = c.n_tokens;
  j["frames_per_token"] = c.frames_per_token;
  j["n_fft"] = c.n_fft;
  j["hop"] = c.hop;
  return j;
}

ToyAsrConfig asr_config_from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items())
    if (key != "n_tokens" && key != "frames_per_token" && key != "n_fft" && key != "hop")
      throw ConfigError("asr config: unknown key '" + key + "'");
  ToyAsrConfig c;
  try {
    c.n_tokens = j.value("n_tokens", c.n_tokens);
    c.frames_per_token = j.value("frames_per_token", c.frames_per_token);
    c.n_fft = j.value("n_fft", c.n_fft);
    c.hop = j.value("hop", c.hop);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("asr config: ") + e.what());
  }
  validate(c);
  return c;
}

ToyAsrParams make_toy_asr_params(const ToyAsrConfig& cfg) {
  validate(cfg);
  ToyAsrParams p;
  p.w = Param("asr.w", cfg.bins(), cfg.n_tokens);
  p.b = Param("asr.b", 1, cfg.n_tokens);
  return p;
}

void init_toy_asr(ToyAsrParams& p, Rng& rng) {
  init_uniform_fan_in(p.w, rng);
  fill(p.b, 0.0f);
}

int token_windows(int frames, const ToyAsrConfig& cfg) {
  return frames / cfg.frames_per_token;
}

MatrixD toy_asr_logits(const MatrixD& magnitude, const ToyAsrParams& p,
                       const ToyAsrConfig& cfg, ToyAsrCache* cache) {
  if (magnitude.cols() != cfg.bins())
    throw InvalidInput("asr: spectrogram has " + std::to_string(magnitude.cols()) +
                       " bins, expected " + std::to_string(cfg.bins()));
  const int windows = token_windows(static_cast<int>(magnitude.rows()), cfg);
  const int f = cfg.frames_per_token;
  MatrixD pooled(windows, magnitude.cols());
  for (int w = 0; w < windows; ++w)
    pooled.row(w) = magnitude.middleRows(static_cast<Eigen::Index>(w) * f, f).colwise().sum() / f;
  Eigen::VectorXd norms = pooled.rowwise().norm();
  MatrixD normalized = pooled;
  for (int w = 0; w < windows; ++w) normalized.row(w) /= norms(w) + kPoolNormEps;
  MatrixD logits = linear(normalized, p.w, p.b);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->norms = std::move(norms);
    cache->normalized = std::move(normalized);
  }
  return logits;
}

MatrixD toy_asr_logits(const Stft& s, const ToyAsrParams& p, const ToyAsrConfig& cfg) {
  return toy_asr_logits(MatrixD(s.magnitude.cast<double>()), p, cfg);
}

MatrixD toy_asr_logits(const Waveform& w, const ToyAsrParams& p, const ToyAsrConfig& cfg) {
  const StftEngine engine(cfg.n_fft, cfg.hop);
  check_waveform(w);
  const ComplexMatrix x = engine.analyze(to_double(w.samples));
  return toy_asr_logits(MatrixD(x.cwiseAbs()), p, cfg);
}

double toy_asr_loss(const MatrixD& logits, const std::vector<int>& labels, MatrixD* d_logits) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw InvalidInput("asr: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(logits.rows()) + " token windows");
  if (logits.rows() == 0) throw InvalidInput("asr: no token windows");
  const Eigen::Index k = logits.cols();
  double total = 0.0;
  if (d_logits) d_logits->resize(logits.rows(), k);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k) throw InvalidInput("asr: label out of range");
    const double mx = logits.row(r).maxCoeff();
    const Eigen::RowVectorXd ex = (logits.row(r).array() - mx).exp();
    const double z = ex.sum();
    total += std::log(z) + mx - logits(r, y);
    if (d_logits) {
      d_logits->row(r) = ex / z;
      (*d_logits)(r, y) -= 1.0;
    }
  }
  const double n = static_cast<double>(logits.rows());
  if (d_logits) *d_logits /= n;
  return total / n;
}

MatrixD toy_asr_backward(const MatrixD& d_logits, const ToyAsrCache& cache,
                         ToyAsrParams& p, const ToyAsrConfig& cfg, int frames) {
  const MatrixD dq = linear_backward(cache.normalized, d_logits, p.w, p.b);
  const int f = cfg.frames_per_token;
  MatrixD d_mag = MatrixD::Zero(frames, cache.pooled.cols());
  for (Eigen::Index w = 0; w < dq.rows(); ++w) {
    const double n = cache.norms(w);
    const double ne = n + kPoolNormEps;
    Eigen::RowVectorXd dp = dq.row(w) / ne;
    if (n > 0.0) dp -= cache.pooled.row(w) * (cache.pooled.row(w).dot(dq.row(w)) / (n * ne * ne));
    d_mag.middleRows(w * f, f).rowwise() = dp / f;
  }
  return d_mag;
}

double toy_asr_audio_loss(std::span<const double> audio, const std::vector<int>& labels,
                          ToyAsrParams& p, const ToyAsrConfig& cfg,
                          std::vector<double>* d_audio, bool accumulate, double grad_scale) {
  const StftEngine engine(cfg.n_fft, cfg.hop);
  const ComplexMatrix x = engine.analyze(audio);
  const MatrixD mag = x.cwiseAbs();
  ToyAsrCache cache;
  const MatrixD logits = toy_asr_logits(mag, p, cfg, &cache);
  if (!d_audio && !accumulate) return toy_asr_loss(logits, labels);
  MatrixD d_logits;
  const double loss = toy_asr_loss(logits, labels, &d_logits);
  d_logits *= grad_scale;
  ToyAsrParams scratch;
  ToyAsrParams* target = &p;
  if (!accumulate) {
    scratch = p;
    scratch.w.zero_grad();
    scratch.b.zero_grad();
    target = &scratch;
  }
  const MatrixD d_mag = toy_asr_backward(d_logits, cache, *target, cfg, static_cast<int>(mag.rows()));
  if (d_audio) {
    ComplexMatrix dx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double a = mag.data()[i];
      dx.data()[i] = a > 0.0 ? x.data()[i] * (d_mag.data()[i] / a) : std::complex<double>(0.0, 0.0);
    }
    *d_audio = engine.analyze_adjoint(dx, static_cast<int64_t>(audio.size()));
  }
  return loss;
}

std::vector<int> toy_asr_decode(const MatrixD& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index arg = 0;
    logits.row(r).maxCoeff(&arg);
    out[static_cast<std::size_t>(r)] = static_cast<int>(arg);
  }
  return out;
}

}  // namespace cvf
