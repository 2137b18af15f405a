// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/speaker_encoder.h"

#include <cmath>

#include "convoifilter/errors.h"

namespace cvf {
namespace {

constexpr int kEncoderFft = 512;
constexpr int kEncoderHop = 128;
constexpr double kLogFloor = 1e-6;

}  // namespace

SpeakerEmbedding encode(const Waveform& w, int d_emb) {
  if (d_emb <= 0) throw InvalidInput("encode: d_emb must be positive");
  check_waveform(w);
  if (w.duration_s() < kMinEncodeSeconds)
    throw InvalidInput("encode: input shorter than 0.5 s");
  const StftEngine engine(kEncoderFft, kEncoderHop);
  const ComplexMatrix spec = engine.analyze(to_double(w.samples));
  const int bins = engine.bins();
  Eigen::VectorXd power = Eigen::VectorXd::Zero(bins);
  for (Eigen::Index t = 0; t < spec.rows(); ++t)
    for (int b = 0; b < bins; ++b) power(b) += std::norm(spec(t, b));

  // Triangles with centres (i+1) * nyq / (d+1), feet on the neighbouring
  // centres; expressed in bin units.
  const double spacing = static_cast<double>(bins - 1) / (d_emb + 1);
  Eigen::VectorXd band = Eigen::VectorXd::Zero(d_emb);
  for (int i = 0; i < d_emb; ++i) {
    const double centre = spacing * (i + 1);
    for (int b = 0; b < bins; ++b) {
      const double wgt = 1.0 - std::abs(b - centre) / spacing;
      if (wgt > 0.0) band(i) += wgt * power(b);
    }
  }
  const double total = band.sum();
  if (!(total > 0.0)) throw InvalidInput("encode: silent input");
  Eigen::RowVectorXd v(d_emb);
  for (int i = 0; i < d_emb; ++i) v(i) = std::log(band(i) / total + kLogFloor);
  v.array() -= v.mean();
  const double norm = v.norm();
  if (!(norm > 0.0)) throw InvalidInput("encode: flat band profile");
  return SpeakerEmbedding{v / norm};
}

FusionParams make_fusion_params(int d_emb) {
  if (d_emb <= 0) throw InvalidInput("fusion: d_emb must be positive");
  FusionParams p;
  p.w1 = Param("fusion.w1", 2 * d_emb, d_emb);
  p.b1 = Param("fusion.b1", 1, d_emb);
  p.w2 = Param("fusion.w2", d_emb, d_emb);
  p.b2 = Param("fusion.b2", 1, d_emb);
  return p;
}

void init_fusion(FusionParams& p, Rng& rng) {
  init_uniform_fan_in(p.w1, rng);
  init_uniform_fan_in(p.w2, rng);
  fill(p.b1, 0.0f);
  fill(p.b2, 0.0f);
}

SpeakerEmbedding fuse(const SpeakerEmbedding& e_ref, const SpeakerEmbedding& e_noisy,
                      const FusionParams& p, bool cross_extraction,
                      FusionCache* cache) {
  if (!cross_extraction) {
    if (cache) cache->passthrough = true;
    return e_ref;
  }
  const int d = p.d_emb();
  if (e_ref.dim() != d || e_noisy.dim() != d)
    throw InvalidInput("fuse: embedding dimension mismatch");
  MatrixD input(1, 2 * d);
  input.leftCols(d) = e_ref.values;
  input.rightCols(d) = e_noisy.values;
  MatrixD hidden = linear(input, p.w1, p.b1);
  MatrixD act = swish(hidden);
  MatrixD out = linear(act, p.w2, p.b2);
  if (cache) {
    cache->passthrough = false;
    cache->input = std::move(input);
    cache->hidden = std::move(hidden);
    cache->act = std::move(act);
  }
  return SpeakerEmbedding{out.row(0)};
}

void fuse_backward(const Eigen::RowVectorXd& d_out, const FusionCache& cache,
                   FusionParams& p, Eigen::RowVectorXd* d_ref,
                   Eigen::RowVectorXd* d_noisy) {
  if (cache.passthrough) {
    if (d_ref) *d_ref = d_out;
    if (d_noisy) d_noisy->setZero(d_out.size());
    return;
  }
  if (cache.input.size() == 0) throw StateError("fuse_backward: missing cache");
  const int d = p.d_emb();
  MatrixD dy(1, d);
  dy.row(0) = d_out;
  const MatrixD d_act = linear_backward(cache.act, dy, p.w2, p.b2);
  const MatrixD d_hidden = swish_backward(cache.hidden, d_act);
  const MatrixD d_in = linear_backward(cache.input, d_hidden, p.w1, p.b1);
  if (d_ref) *d_ref = d_in.row(0).head(d);
  if (d_noisy) *d_noisy = d_in.row(0).tail(d);
}

}  // namespace cvf
