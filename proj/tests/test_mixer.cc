// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <set>

#include "convoifilter/errors.h"
#include "convoifilter/metrics.h"
#include "convoifilter/mixer.h"
#include "doctest.h"
#include "test_util.h"

using namespace cvf;
using namespace cvf::testing;

namespace {

const Catalog& small_catalog() {
  static const Catalog cat = [] {
    SyntheticCatalogConfig c;
    c.utterances_per_speaker = 3;
    return make_synthetic_catalog(c);
  }();
  return cat;
}

// Power in 32 equal-width bands, summed over frames.
Eigen::RowVectorXd band_profile(const Waveform& w) {
  const Stft s = stft(w, 512, 128);
  Eigen::RowVectorXd p = Eigen::RowVectorXd::Zero(32);
  for (int t = 0; t < s.frames(); ++t)
    for (int b = 0; b < 256; ++b) p(b / 8) += static_cast<double>(s.magnitude(t, b)) * s.magnitude(t, b);
  return p;
}

MixtureRecipe single_interferer(double snr) {
  MixtureRecipe r;
  r.seed = 1;
  r.target_id = "spk00";
  r.target_utterance = 0;
  r.reference_utterance = 1;
  r.interferers.push_back({"spk03", 1, snr, 12345});
  r.noise_id = "noise00";
  r.noise_snr_db = 10.0;
  return r;
}

}  // namespace

TEST_CASE("recipes are a deterministic function of the seed") {
  const auto a = recipe_to_json(draw_recipe(42, small_catalog()));
  const auto b = recipe_to_json(draw_recipe(42, small_catalog()));
  CHECK(a == b);
  CHECK(a != recipe_to_json(draw_recipe(43, small_catalog())));
}

TEST_CASE("recipe draw frequencies over 10000 seeds") {
  int noise = 0, rir = 0;
  int counts[4] = {0, 0, 0, 0};
  for (uint64_t s = 0; s < 10000; ++s) {
    const MixtureRecipe r = draw_recipe(derive_seed(99, s), small_catalog());
    noise += r.has_noise;
    rir += r.has_rir;
    counts[r.n_interferers()]++;
    std::set<std::string> ids;
    for (const auto& i : r.interferers) {
      CHECK_FALSE(i.speaker_id == r.target_id);
      ids.insert(i.speaker_id);
      CHECK((i.snr_db >= 1.0 && i.snr_db <= 20.0));
    }
    CHECK(ids.size() == r.interferers.size());
    CHECK((r.noise_snr_db >= 1.0 && r.noise_snr_db <= 20.0));
    CHECK(r.has_rir == r.rir_id.has_value());
    CHECK(r.reference_utterance != r.target_utterance);
  }
  CHECK(std::abs(noise / 10000.0 - 0.8) < 0.02);
  CHECK(std::abs(rir / 10000.0 - 0.3) < 0.02);
  for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) < 0.02);
}

TEST_CASE("draw_recipe rejects thin catalogs") {
  Catalog one;
  one.speakers.push_back(small_catalog().speakers[0]);
  one.noises = small_catalog().noises;
  CHECK_THROWS_AS(draw_recipe(1, one), ConfigError);
  Catalog no_noise = small_catalog();
  no_noise.noises.clear();
  CHECK_THROWS_AS(draw_recipe(1, no_noise), ConfigError);
}

TEST_CASE("recipe JSON round trip and validation") {
  const MixtureRecipe r = draw_recipe(7, small_catalog());
  CHECK(recipe_to_json(recipe_from_json(recipe_to_json(r))) == recipe_to_json(r));
  MixtureRecipe bad = single_interferer(25.0);
  CHECK_THROWS_AS(validate_recipe(bad), ConfigError);
  bad = single_interferer(5.0);
  bad.has_rir = true;
  CHECK_THROWS_AS(validate_recipe(bad), ConfigError);
  bad = single_interferer(5.0);
  bad.interferers.resize(4, bad.interferers[0]);
  CHECK_THROWS_AS(validate_recipe(bad), ConfigError);
}

TEST_CASE("scale_to_snr") {
  const Waveform ref = random_wave(4000, 1);
  Waveform same = random_wave(4000, 2);
  const double k = std::sqrt(power(ref.samples) / power(same.samples));
  for (float& v : same.samples) v = static_cast<float>(v * k);
  const Waveform s0 = scale_to_snr(same, ref, 0.0);
  for (std::size_t i = 0; i < 4000; i += 97)
    CHECK(s0.samples[i] == doctest::Approx(same.samples[i]).epsilon(1e-5));
  const Waveform sig = random_wave(4000, 3, 0.01);
  const double p_ref = power(ref.samples);
  CHECK(power(scale_to_snr(sig, ref, 20.0).samples) == doctest::Approx(p_ref / 100).epsilon(1e-5));
  CHECK(p_ref / power(scale_to_snr(sig, ref, 1.0).samples) == doctest::Approx(std::pow(10.0, 0.1)).epsilon(1e-4));
  CHECK_THROWS_AS(scale_to_snr(Waveform{std::vector<float>(10, 0.0f)}, ref, 5.0), InvalidInput);
}

TEST_CASE("convolve_rir") {
  const Waveform x = random_wave(3000, 4);
  Waveform delta{std::vector<float>(50, 0.0f)};
  delta.samples[0] = 1.0f;
  const Waveform same = convolve_rir(x, delta);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(same.samples[i] - x.samples[i]) < 1e-6);

  Waveform delayed{std::vector<float>(200, 0.0f)};
  delayed.samples[100] = 1.0f;
  const Waveform y = convolve_rir(x, delayed);
  int best = -1;
  double best_v = -1e300;
  for (int lag = 0; lag < 200; ++lag) {
    double c = 0.0;
    for (std::size_t i = static_cast<std::size_t>(lag); i < x.size(); ++i)
      c += static_cast<double>(y.samples[i]) * x.samples[i - static_cast<std::size_t>(lag)];
    if (c > best_v) {
      best_v = c;
      best = lag;
    }
  }
  CHECK(best == 100);

  const Waveform rir = random_wave(300, 5);
  CHECK(power(convolve_rir(x, rir).samples) / power(x.samples) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK_THROWS_AS(convolve_rir(random_wave(10, 1), random_wave(20, 1)), InvalidInput);
}

TEST_CASE("realize") {
  MixtureRecipe empty = single_interferer(5.0);
  empty.interferers.clear();
  const MixtureExample e = realize(empty, small_catalog());
  CHECK(e.noisy.samples == e.clean_target.samples);
  CHECK(e.reference_utterance.samples != e.clean_target.samples);
  CHECK(e.tokens.size() == 12);

  for (double snr : {1.0, 5.0, 10.0, 20.0}) {
    const MixtureExample m = realize(single_interferer(snr), small_catalog());
    CHECK(std::abs(si_snr(m.noisy, m.clean_target) - snr) <= 0.5);
  }
  const MixtureRecipe r = draw_recipe(1234, small_catalog());
  CHECK(realize(r, small_catalog()).noisy.samples == realize(r, small_catalog()).noisy.samples);

  MixtureRecipe missing = single_interferer(5.0);
  missing.target_id = "nobody";
  CHECK_THROWS_AS(realize(missing, small_catalog()), ConfigError);
}

TEST_CASE("realized buffers stay within [-1, 1]") {
  const auto corpus = generate_corpus(small_catalog(), 40, 5);
  for (const auto& ex : corpus) {
    CHECK(ex.noisy.size() == ex.clean_target.size());
    for (float v : ex.noisy.samples) CHECK((std::isfinite(v) && v >= -1.0f && v <= 1.0f));
  }
}

TEST_CASE("synthetic speakers stay in band and keep their profile") {
  const auto specs = synthetic_speaker_specs(SyntheticCatalogConfig{});
  REQUIRE(specs.size() == 8);
  for (std::size_t i = 1; i < specs.size(); ++i) CHECK(specs[i].band_low_hz >= specs[i - 1].band_high_hz);
  const auto& s = specs[2];
  const Waveform a = synth_speaker_utterance(s, 1.0, 1);
  const Waveform b = synth_speaker_utterance(s, 1.0, 2);
  CHECK(a.size() == 16000);
  const double total = band_energy(a, 0.0, 8001.0);
  const double inside = band_energy(a, s.band_low_hz, s.band_high_hz);
  CHECK((total - inside) / total < 0.05);
  CHECK(cosine(band_profile(a), band_profile(b)) > 0.9);
  const Waveform c = synth_speaker_utterance(specs[6], 1.0, 3);
  CHECK(cosine(band_profile(a), band_profile(c)) < 0.1);
  SyntheticSpeakerSpec bad = s;
  bad.band_high_hz = 9000.0;
  CHECK_THROWS_AS(synth_speaker_utterance(bad, 1.0, 1), ConfigError);
}

TEST_CASE("corpus write and read back") {
  const auto dir = temp_dir("corpus");
  const auto corpus = generate_corpus(small_catalog(), 3, 11);
  write_corpus(dir, corpus);
  const auto entries = read_corpus_manifest(dir / "manifest.jsonl");
  REQUIRE(entries.size() == 3);
  const MixtureExample back = load_corpus_example(entries[1]);
  CHECK(back.noisy.samples == corpus[1].noisy.samples);
  CHECK(back.clean_target.samples == corpus[1].clean_target.samples);
  CHECK(back.tokens == corpus[1].tokens);
}
