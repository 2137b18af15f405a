// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/metrics.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

#include "convoifilter/errors.h"
#include "json.hpp"

namespace cvf {
namespace {

constexpr double kTiny = 1e-300;

double clamp_db(double db) {
  if (std::isnan(db)) return -kScoreClampDb;
  return std::clamp(db, -kScoreClampDb, kScoreClampDb);
}

double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

void check_pair(std::size_t a, std::size_t b) {
  if (a != b) throw InvalidInput("metric inputs differ in length");
  if (a == 0) throw InvalidInput("metric inputs are empty");
}

}  // namespace

double si_snr_with_grad(std::span<const double> estimate,
                        std::span<const double> target,
                        std::span<double> grad) {
  check_pair(estimate.size(), target.size());
  const std::size_t n = estimate.size();
  const double me = mean(estimate), mt = mean(target);
  double dot = 0.0, tt = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = estimate[i] - me, t = target[i] - mt;
    dot += s * t;
    tt += t * t;
    ss += s * s;
  }
  if (!(tt > 0.0)) throw InvalidInput("si_snr: target has zero energy");
  const double proj = dot * dot / tt;       // |s_target|^2
  const double noise = std::max(ss - proj, 0.0);  // |e_noise|^2
  const double raw = 10.0 * std::log10(std::max(proj, kTiny) / std::max(noise, kTiny));
  const double value = clamp_db(raw);
  if (grad.empty()) return value;
  if (grad.size() != n) throw InvalidInput("si_snr: gradient buffer size");
  if (raw >= kScoreClampDb || raw <= -kScoreClampDb || dot == 0.0 || noise <= 0.0) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return value;
  }
  // d/ds [10 log10(proj) - 10 log10(noise)] = c (2 t / dot - 2 e / noise),
  // then projected onto zero-mean signals.
  const double c = 10.0 / std::numbers::ln10;
  const double alpha = dot / tt;
  double gmean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = estimate[i] - me, t = target[i] - mt;
    const double e = s - alpha * t;
    grad[i] = c * (2.0 * t / dot - 2.0 * e / noise);
    gmean += grad[i];
  }
  gmean /= static_cast<double>(n);
  for (double& g : grad) g -= gmean;
  return value;
}

double si_snr(std::span<const double> estimate, std::span<const double> target) {
  return si_snr_with_grad(estimate, target, {});
}

double si_snr(const Waveform& estimate, const Waveform& target) {
  return si_snr(to_double(estimate.samples), to_double(target.samples));
}

double sdr(std::span<const double> estimate, std::span<const double> target) {
  check_pair(estimate.size(), target.size());
  double ss = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    ss += target[i] * target[i];
    const double d = target[i] - estimate[i];
    ee += d * d;
  }
  if (!(ss > 0.0)) throw InvalidInput("sdr: target has zero energy");
  return clamp_db(10.0 * std::log10(ss / std::max(ee, kTiny)));
}

double sdr(const Waveform& estimate, const Waveform& target) {
  return sdr(to_double(estimate.samples), to_double(target.samples));
}

double mse_spectral_loss(const MatrixF& estimate_mag, const MatrixF& target_mag) {
  if (estimate_mag.rows() != target_mag.rows() ||
      estimate_mag.cols() != target_mag.cols())
    throw InvalidInput("mse_spectral_loss: shape mismatch");
  if (estimate_mag.size() == 0) throw InvalidInput("mse_spectral_loss: empty input");
  return (estimate_mag.cast<double>() - target_mag.cast<double>()).squaredNorm() /
         static_cast<double>(estimate_mag.size());
}

Mask ideal_ratio_mask(const Stft& clean, const Stft& noisy) {
  if (clean.frames() != noisy.frames() || clean.bins() != noisy.bins())
    throw InvalidInput("ideal_ratio_mask: shape mismatch");
  MatrixF m(clean.frames(), clean.bins());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double r = clean.magnitude.data()[i] /
                     (static_cast<double>(noisy.magnitude.data()[i]) + kIrmEpsilon);
    m.data()[i] = static_cast<float>(std::clamp(r, 0.0, kIrmClipMax));
  }
  return Mask(std::move(m));
}

void ScoreReport::add(ItemScore item) { items_.push_back(std::move(item)); }

double ScoreReport::si_snr_db() const {
  if (items_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& it : items_) s += it.si_snr_db;
  return s / static_cast<double>(items_.size());
}

double ScoreReport::sdr_db() const {
  if (items_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& it : items_) s += it.sdr_db;
  return s / static_cast<double>(items_.size());
}

void ScoreReport::write_jsonl(std::ostream& out) const {
  for (const auto& it : items_) {
    nlohmann::ordered_json j;
    j["id"] = it.id;
    j["si_snr_db"] = it.si_snr_db;
    j["sdr_db"] = it.sdr_db;
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json agg;
  agg["aggregate"] = true;
  agg["count"] = items_.size();
  agg["si_snr_db"] = si_snr_db();
  agg["sdr_db"] = sdr_db();
  out << agg.dump() << '\n';
}

ScoreReport ScoreReport::read_jsonl(std::istream& in) {
  ScoreReport report;
  std::string line;
  bool saw_aggregate = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("score report: ") + e.what());
    }
    if (j.value("aggregate", false)) {
      saw_aggregate = true;
      continue;
    }
    report.add({j.at("id").get<std::string>(), j.at("si_snr_db").get<double>(),
                j.at("sdr_db").get<double>()});
  }
  if (!saw_aggregate) throw FormatError("score report: missing aggregate record");
  return report;
}

}  // namespace cvf
