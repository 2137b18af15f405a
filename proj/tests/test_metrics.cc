// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <sstream>

#include "convoifilter/errors.h"
#include "convoifilter/metrics.h"
#include "convoifilter/mixer.h"
#include "doctest.h"
#include "test_util.h"

using namespace cvf;
using namespace cvf::testing;

TEST_CASE("si_snr of a perfect estimate is clamped at 60 dB") {
  const Waveform w = random_wave(1000, 1);
  CHECK(si_snr(w, w) == 60.0);
  CHECK(sdr(w, w) == 60.0);
}

TEST_CASE("si_snr is invariant to estimate scale") {
  const Waveform t = random_wave(2000, 2);
  const Waveform e = random_wave(2000, 3);
  const double base = si_snr(e, t);
  for (float a : {0.1f, 0.7f, 3.0f, 25.0f}) {
    Waveform s = e;
    for (float& v : s.samples) v *= a;
    CHECK(std::abs(si_snr(s, t) - base) < 1e-6);
  }
}

TEST_CASE("orthogonal noise of equal power gives 0 dB") {
  const std::size_t n = 16000;
  const Waveform t = sine(n, 250.0, 1.0);
  const Waveform c = sine(n, 250.0, 1.0, std::numbers::pi / 2);
  Waveform e = t;
  for (std::size_t i = 0; i < n; ++i) e.samples[i] += c.samples[i];
  CHECK(std::abs(si_snr(e, t)) < 1e-3);
}

TEST_CASE("si_snr is symmetric under a joint sign flip") {
  Waveform t = random_wave(500, 4), e = random_wave(500, 5);
  const double a = si_snr(e, t);
  for (float& v : t.samples) v = -v;
  for (float& v : e.samples) v = -v;
  CHECK(si_snr(e, t) == doctest::Approx(a).epsilon(1e-12));
}

TEST_CASE("si_snr gradient matches central differences") {
  Rng rng(6);
  std::vector<double> t(64), e(64), g(64);
  for (std::size_t i = 0; i < 64; ++i) {
    t[i] = rng.normal();
    e[i] = t[i] + 0.5 * rng.normal();
  }
  si_snr_with_grad(e, t, g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 64; i += 7) {
    std::vector<double> p = e, m = e;
    p[i] += h;
    m[i] -= h;
    const double fd = (si_snr(p, t) - si_snr(m, t)) / (2 * h);
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("sdr reference values") {
  const Waveform t = random_wave(4000, 7);
  CHECK(sdr(Waveform{std::vector<float>(4000, 0.0f)}, t) == doctest::Approx(0.0).epsilon(1e-9));
  // Noise with an exact 10 dB power ratio.
  Waveform n = random_wave(4000, 8);
  const double scale = std::sqrt(power(t.samples) / power(n.samples) / 10.0);
  Waveform e = t;
  for (std::size_t i = 0; i < e.size(); ++i) e.samples[i] += static_cast<float>(scale * n.samples[i]);
  CHECK(std::abs(sdr(e, t) - 10.0) < 0.1);
  // A unit-gain copy agrees in both metrics.
  CHECK(std::abs(sdr(t, t) - si_snr(t, t)) < 1e-6);
}

TEST_CASE("metric errors") {
  CHECK_THROWS_AS(si_snr(random_wave(10, 1), random_wave(11, 1)), InvalidInput);
  CHECK_THROWS_AS(si_snr(random_wave(10, 1), Waveform{std::vector<float>(10, 0.25f)}), InvalidInput);
  CHECK_THROWS_AS(sdr(random_wave(10, 1), Waveform{std::vector<float>(10, 0.0f)}), InvalidInput);
  CHECK_THROWS_AS(mse_spectral_loss(MatrixF::Zero(2, 3), MatrixF::Zero(3, 2)), InvalidInput);
}

TEST_CASE("mse spectral loss") {
  CHECK(mse_spectral_loss(MatrixF::Ones(4, 5), MatrixF::Ones(4, 5)) == 0.0);
  CHECK(mse_spectral_loss(MatrixF::Ones(4, 5), MatrixF::Zero(4, 5)) == 1.0);
  Rng rng(9);
  MatrixF a(7, 9), b(7, 9);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = static_cast<float>(rng.uniform());
    b.data()[i] = static_cast<float>(rng.uniform());
  }
  double sum = 0.0;
  int count = 0;
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 9; ++c) {
      const double d = static_cast<double>(a(r, c)) - b(r, c);
      sum += d * d;
      ++count;
    }
  CHECK(mse_spectral_loss(a, b) == doctest::Approx(sum / count).epsilon(1e-12));
}

TEST_CASE("ideal ratio mask") {
  const Stft s = stft(random_wave(4000, 10), 512, 128);
  const Mask same = ideal_ratio_mask(s, s);
  for (Eigen::Index i = 0; i < same.values().size(); ++i)
    CHECK(same.values().data()[i] == doctest::Approx(1.0).epsilon(1e-5));
  Stft zero = s;
  zero.magnitude.setZero();
  CHECK(ideal_ratio_mask(zero, s).values().maxCoeff() == 0.0f);
  const Stft other = stft(random_wave(4000, 11), 512, 128);
  const Mask m = ideal_ratio_mask(other, s);
  CHECK(m.values().maxCoeff() <= kIrmClipMax);
  const double masked = (m.values().array() * s.magnitude.array()).square().sum();
  CHECK(masked <= kIrmClipMax * kIrmClipMax * s.magnitude.array().square().sum());
  Stft bad = s;
  bad.magnitude = MatrixF::Zero(2, 2);
  bad.phase = MatrixF::Zero(2, 2);
  CHECK_THROWS_AS(ideal_ratio_mask(bad, s), InvalidInput);
}

TEST_CASE("IRM on a disjoint-band mixture improves SI-SNR by at least 20 dB") {
  SyntheticSpeakerSpec lo{"lo", 400.0, 3900.0, 4.0, 2};
  SyntheticSpeakerSpec hi{"hi", 5000.0, 7800.0, 5.0, 3};
  const Waveform t = synth_speaker_utterance(lo, 1.0, 1);
  const Waveform i = scale_to_snr(synth_speaker_utterance(hi, 1.0, 2), t, 0.0);
  Waveform mix = t;
  for (std::size_t k = 0; k < mix.size(); ++k) mix.samples[k] += i.samples[k];
  const Stft sm = stft(mix, 512, 128);
  const Waveform y = istft(apply_mask(sm, ideal_ratio_mask(stft(t, 512, 128), sm)));
  CHECK(si_snr(y, t) - si_snr(mix, t) >= 20.0);
}

TEST_CASE("score report aggregates are item means and survive JSONL") {
  ScoreReport r;
  r.add({"a", 10.0, 12.0});
  r.add({"b", 4.0, -2.0});
  r.add({"c", 1.0, 5.0});
  CHECK(r.si_snr_db() == doctest::Approx(5.0));
  CHECK(r.sdr_db() == doctest::Approx(5.0));
  std::stringstream ss;
  r.write_jsonl(ss);
  std::string line;
  int lines = 0;
  std::string last;
  while (std::getline(ss, line)) {
    ++lines;
    last = line;
  }
  CHECK(lines == 4);
  CHECK(last.find("\"aggregate\":true") != std::string::npos);
  std::stringstream again;
  r.write_jsonl(again);
  const ScoreReport back = ScoreReport::read_jsonl(again);
  REQUIRE(back.items().size() == 3);
  CHECK(back.items()[1].id == "b");
  CHECK(back.si_snr_db() == r.si_snr_db());
}
