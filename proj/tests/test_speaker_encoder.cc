// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>

#include "convoifilter/errors.h"
#include "convoifilter/mixer.h"
#include "convoifilter/speaker_encoder.h"
#include "doctest.h"
#include "test_util.h"

using namespace cvf;
using namespace cvf::testing;

TEST_CASE("same speaker embeddings agree, disjoint speakers do not") {
  const auto specs = synthetic_speaker_specs(SyntheticCatalogConfig{});
  const SpeakerEmbedding a = encode(synth_speaker_utterance(specs[1], 1.5, 1), 64);
  const SpeakerEmbedding b = encode(synth_speaker_utterance(specs[1], 1.5, 2), 64);
  const SpeakerEmbedding c = encode(synth_speaker_utterance(specs[5], 1.5, 3), 64);
  CHECK(a.dim() == 64);
  CHECK(a.values.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine(a.values, b.values) > 0.9);
  CHECK(cosine(a.values, c.values) < 0.2);
}

TEST_CASE("encode removes gain exactly") {
  const Waveform w = random_wave(12000, 1);
  Waveform half = w;
  for (float& v : half.samples) v *= 0.5f;
  CHECK(encode(w, 16).values == encode(half, 16).values);
  CHECK(encode(w, 16).values == encode(w, 16).values);
}

TEST_CASE("encode rejects short input") {
  CHECK_THROWS_AS(encode(random_wave(7999, 1), 16), InvalidInput);
  CHECK_NOTHROW(encode(random_wave(8000, 1), 16));
}

TEST_CASE("fuse without cross-extraction passes e_ref through") {
  Rng rng(2);
  FusionParams p = make_fusion_params(4);
  init_fusion(p, rng);
  const SpeakerEmbedding ref{Eigen::RowVectorXd::Random(4)};
  const SpeakerEmbedding noisy{Eigen::RowVectorXd::Random(4)};
  CHECK(fuse(ref, noisy, p, false).values == ref.values);
  CHECK(fuse(ref, SpeakerEmbedding{Eigen::RowVectorXd::Zero(9)}, p, false).values == ref.values);
}

TEST_CASE("zero parameters give the bias") {
  FusionParams p = make_fusion_params(4);
  const SpeakerEmbedding ref{Eigen::RowVectorXd::Random(4)};
  CHECK(fuse(ref, ref, p, true).values.isZero(0.0));
  p.b2.value << 1.0f, 2.0f, 3.0f, 4.0f;
  CHECK(fuse(ref, ref, p, true).values == Eigen::RowVector4d(1, 2, 3, 4));
  CHECK_THROWS_AS(fuse(ref, SpeakerEmbedding{Eigen::RowVectorXd::Zero(3)}, p, true), InvalidInput);
}

TEST_CASE("fuse gradients match central differences") {
  Rng rng(3);
  FusionParams p = make_fusion_params(4);
  init_fusion(p, rng);
  for (Param* q : p.refs())
    for (Eigen::Index i = 0; i < q->value.size(); ++i) q->value.data()[i] += static_cast<float>(0.1 * rng.normal());
  const SpeakerEmbedding ref{Eigen::RowVector4d(0.3, -0.5, 0.7, 0.1)};
  const SpeakerEmbedding noisy{Eigen::RowVector4d(-0.2, 0.4, 0.6, -0.9)};
  const Eigen::RowVector4d probe(0.7, -1.3, 0.4, 2.0);
  auto loss = [&](const SpeakerEmbedding& r, const SpeakerEmbedding& n) {
    return fuse(r, n, p, true).values.dot(probe);
  };
  FusionCache cache;
  fuse(ref, noisy, p, true, &cache);
  for (Param* q : p.refs()) q->zero_grad();
  Eigen::RowVectorXd d_ref, d_noisy;
  fuse_backward(probe, cache, p, &d_ref, &d_noisy);
  const double h = 1e-3;
  for (Param* q : p.refs())
    for (Eigen::Index i = 0; i < q->value.size(); ++i) {
      float& v = q->value.data()[i];
      const float orig = v;
      const float up = static_cast<float>(orig + h), down = static_cast<float>(orig - h);
      v = up;
      const double lp = loss(ref, noisy);
      v = down;
      const double lm = loss(ref, noisy);
      v = orig;
      const double fd = (lp - lm) / (static_cast<double>(up) - down);
      const double a = q->grad.data()[i];
      CHECK(std::abs(a - fd) <= 1e-3 * std::max({std::abs(a), std::abs(fd), 1e-6}));
    }
  for (int i = 0; i < 4; ++i) {
    SpeakerEmbedding rp = ref, rm = ref, np = noisy, nm = noisy;
    rp.values(i) += h;
    rm.values(i) -= h;
    np.values(i) += h;
    nm.values(i) -= h;
    CHECK(d_ref(i) == doctest::Approx((loss(rp, noisy) - loss(rm, noisy)) / (2 * h)).epsilon(1e-3));
    CHECK(d_noisy(i) == doctest::Approx((loss(ref, np) - loss(ref, nm)) / (2 * h)).epsilon(1e-3));
  }
}
