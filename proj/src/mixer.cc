// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/mixer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "convoifilter/errors.h"
#include "convoifilter/rng.h"
#include "convoifilter/wav_io.h"
#include "fft.h"

namespace cvf {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double mean_square(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

double mean_square(std::span<const float> x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

double snr_gain(double p_signal, double p_reference, double snr_db) {
  if (!(p_signal > 0.0) || !(p_reference > 0.0))
    throw InvalidInput("scale_to_snr: zero-energy input");
  return std::sqrt(p_reference / (p_signal * std::pow(10.0, snr_db / 10.0)));
}

// Crop (longer source) or loop (shorter source) to exactly len samples.
std::vector<double> fit_length(const Waveform& src, std::size_t len,
                               uint64_t offset) {
  if (src.empty()) throw ConfigError("catalog entry has no samples");
  std::vector<double> out(len);
  const std::size_t n = src.size();
  std::size_t start;
  if (n > len) {
    start = static_cast<std::size_t>(offset % (n - len + 1));
  } else {
    start = static_cast<std::size_t>(offset % n);
  }
  for (std::size_t i = 0; i < len; ++i) out[i] = src.samples[(start + i) % n];
  return out;
}

std::vector<double> fft_convolve(std::span<const double> x,
                                 std::span<const double> h) {
  const std::size_t full = x.size() + h.size() - 1;
  int n = 1;
  while (static_cast<std::size_t>(n) < full) n <<= 1;
  const auto fft = detail::real_fft(n);
  std::vector<double> xa(n, 0.0), ha(n, 0.0);
  std::copy(x.begin(), x.end(), xa.begin());
  std::copy(h.begin(), h.end(), ha.begin());
  std::vector<std::complex<double>> xf(fft->bins()), hf(fft->bins());
  fft->forward(xa.data(), xf.data());
  fft->forward(ha.data(), hf.data());
  for (int b = 0; b < fft->bins(); ++b) xf[b] *= hf[b];
  std::vector<double> y(n);
  fft->inverse(xf.data(), y.data());
  y.resize(full);
  for (double& v : y) v /= n;
  return y;
}

template <typename T>
const T& find_by_id(const std::vector<T>& items, const std::string& id,
                    const char* what) {
  for (const auto& it : items)
    if (it.id == id) return it;
  throw ConfigError(std::string("catalog has no ") + what + " '" + id + "'");
}

Waveform make_noise(int kind, double duration_s, int sample_rate, uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(std::lround(duration_s * sample_rate));
  std::vector<double> x(n, 0.0);
  switch (kind % 4) {
    case 0:  // white
      for (auto& v : x) v = rng.normal();
      break;
    case 1: {  // pink, Kellet's economy filter
      double b0 = 0, b1 = 0, b2 = 0;
      for (auto& v : x) {
        const double w = rng.normal();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        v = b0 + b1 + b2 + w * 0.1848;
      }
      break;
    }
    case 2: {  // brown, leaky integrator
      double acc = 0.0;
      for (auto& v : x) {
        acc = 0.995 * acc + rng.normal();
        v = acc;
      }
      break;
    }
    default: {  // mains hum with hiss
      const double f0 = rng.uniform(50.0, 120.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        x[i] = std::sin(kTwoPi * f0 * t) + 0.5 * std::sin(kTwoPi * 2 * f0 * t) +
               0.25 * std::sin(kTwoPi * 3 * f0 * t) + 0.1 * rng.normal();
      }
      break;
    }
  }
  const double rms = std::sqrt(mean_square(x));
  for (auto& v : x) v *= 0.05 / rms;
  return Waveform{to_float(x), sample_rate};
}

Waveform make_rir(int sample_rate, uint64_t seed) {
  Rng rng(seed);
  const double t60 = rng.uniform(0.15, 0.4);
  const double drr_db = rng.uniform(6.0, 12.0);
  const std::size_t len = static_cast<std::size_t>(0.2 * sample_rate);
  const std::size_t onset = static_cast<std::size_t>(0.002 * sample_rate);
  std::vector<double> h(len, 0.0);
  double tail = 0.0;
  for (std::size_t i = onset; i < len; ++i) {
    const double decay = std::exp(-6.9077552789821 * static_cast<double>(i) /
                                  (t60 * sample_rate));
    h[i] = rng.normal() * decay;
    tail += h[i] * h[i];
  }
  const double g = std::sqrt(std::pow(10.0, -drr_db / 10.0) / tail);
  for (std::size_t i = onset; i < len; ++i) h[i] *= g;
  h[0] = 1.0;
  return Waveform{to_float(h), sample_rate};
}

}  // namespace

const CatalogSpeaker& Catalog::speaker(const std::string& id) const {
  return find_by_id(speakers, id, "speaker");
}
const NamedWave& Catalog::noise(const std::string& id) const {
  return find_by_id(noises, id, "noise");
}
const NamedWave& Catalog::rir(const std::string& id) const {
  return find_by_id(rirs, id, "rir");
}

void validate_recipe(const MixtureRecipe& r) {
  if (r.n_interferers() < 0 || r.n_interferers() > 3)
    throw ConfigError("recipe: interferer count outside [0, 3]");
  auto check_snr = [](double s) {
    if (!(s >= 1.0 && s <= 20.0)) throw ConfigError("recipe: SNR outside [1, 20] dB");
  };
  for (const auto& it : r.interferers) {
    check_snr(it.snr_db);
    if (it.speaker_id == r.target_id)
      throw ConfigError("recipe: interferer equals the target speaker");
  }
  if (r.has_noise) check_snr(r.noise_snr_db);
  if (r.has_rir != r.rir_id.has_value())
    throw ConfigError("recipe: rir_id must be present iff has_rir");
}

nlohmann::ordered_json recipe_to_json(const MixtureRecipe& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["target_id"] = r.target_id;
  j["target_utterance"] = r.target_utterance;
  j["reference_utterance"] = r.reference_utterance;
  j["n_interferers"] = r.n_interferers();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& it : r.interferers) {
    nlohmann::ordered_json e;
    e["speaker_id"] = it.speaker_id;
    e["utterance"] = it.utterance;
    e["snr_db"] = it.snr_db;
    e["offset"] = it.offset;
    arr.push_back(e);
  }
  j["interferers"] = arr;
  j["has_noise"] = r.has_noise;
  j["noise_id"] = r.noise_id;
  j["noise_snr_db"] = r.noise_snr_db;
  j["noise_offset"] = r.noise_offset;
  j["has_rir"] = r.has_rir;
  j["rir_id"] = r.rir_id ? nlohmann::ordered_json(*r.rir_id) : nlohmann::ordered_json();
  return j;
}

MixtureRecipe recipe_from_json(const nlohmann::json& j) {
  MixtureRecipe r;
  try {
    r.seed = j.at("seed").get<uint64_t>();
    r.target_id = j.at("target_id").get<std::string>();
    r.target_utterance = j.at("target_utterance").get<int>();
    r.reference_utterance = j.at("reference_utterance").get<int>();
    for (const auto& e : j.at("interferers"))
      r.interferers.push_back({e.at("speaker_id").get<std::string>(),
                               e.at("utterance").get<int>(),
                               e.at("snr_db").get<double>(),
                               e.at("offset").get<uint64_t>()});
    if (j.at("n_interferers").get<int>() != r.n_interferers())
      throw FormatError("recipe: n_interferers disagrees with interferer list");
    r.has_noise = j.at("has_noise").get<bool>();
    r.noise_id = j.at("noise_id").get<std::string>();
    r.noise_snr_db = j.at("noise_snr_db").get<double>();
    r.noise_offset = j.at("noise_offset").get<uint64_t>();
    r.has_rir = j.at("has_rir").get<bool>();
    if (!j.at("rir_id").is_null()) r.rir_id = j.at("rir_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("recipe: ") + e.what());
  }
  validate_recipe(r);
  return r;
}

MixtureRecipe draw_recipe(uint64_t seed, const Catalog& catalog,
                          const RecipeConstraints& c) {
  const int n_spk = static_cast<int>(catalog.speakers.size());
  if (n_spk < 2) throw ConfigError("catalog needs at least 2 speakers");
  if (catalog.noises.empty()) throw ConfigError("catalog needs at least 1 noise clip");
  if (c.min_interferers < 0 || c.max_interferers > 3 ||
      c.min_interferers > c.max_interferers)
    throw ConfigError("interferer range must lie within [0, 3]");

  Rng rng(seed);
  MixtureRecipe r;
  r.seed = seed;
  const CatalogSpeaker& target = catalog.speakers[rng.below(n_spk)];
  const int n_utt = static_cast<int>(target.utterances.size());
  if (n_utt < 2)
    throw ConfigError("speaker '" + target.id + "' needs at least 2 utterances");
  r.target_id = target.id;
  r.target_utterance = static_cast<int>(rng.below(n_utt));
  r.reference_utterance =
      (r.target_utterance + 1 + static_cast<int>(rng.below(n_utt - 1))) % n_utt;

  const int hi = std::min(c.max_interferers, n_spk - 1);
  const int lo = std::min(c.min_interferers, hi);
  const int count = lo + static_cast<int>(rng.below(hi - lo + 1));
  std::vector<const CatalogSpeaker*> pool;
  for (const auto& s : catalog.speakers)
    if (s.id != target.id) pool.push_back(&s);
  for (int i = 0; i < count; ++i) {
    const std::size_t pick = rng.below(pool.size());
    const CatalogSpeaker* spk = pool[pick];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    if (spk->utterances.empty())
      throw ConfigError("speaker '" + spk->id + "' has no utterances");
    InterfererDraw d;
    d.speaker_id = spk->id;
    d.utterance = static_cast<int>(rng.below(spk->utterances.size()));
    d.snr_db = rng.uniform(c.snr_min_db, c.snr_max_db);
    d.offset = rng.next_u64();
    r.interferers.push_back(d);
  }

  r.has_noise = rng.bernoulli(c.p_noise);
  r.noise_id = catalog.noises[rng.below(catalog.noises.size())].id;
  r.noise_snr_db = rng.uniform(c.snr_min_db, c.snr_max_db);
  r.noise_offset = rng.next_u64();

  const bool rir_draw = rng.bernoulli(c.p_rir);
  if (!catalog.rirs.empty()) {
    const std::string rir = catalog.rirs[rng.below(catalog.rirs.size())].id;
    if (rir_draw) {
      r.has_rir = true;
      r.rir_id = rir;
    }
  }
  return r;
}

Waveform scale_to_snr(const Waveform& signal, const Waveform& reference,
                      double snr_db) {
  const double g = snr_gain(mean_square(std::span<const float>(signal.samples)),
                            mean_square(std::span<const float>(reference.samples)),
                            snr_db);
  Waveform out = signal;
  for (auto& v : out.samples) v = static_cast<float>(v * g);
  return out;
}

Waveform convolve_rir(const Waveform& signal, const Waveform& rir) {
  if (rir.empty()) throw InvalidInput("convolve_rir: empty impulse response");
  if (signal.empty()) throw InvalidInput("convolve_rir: empty signal");
  if (rir.size() > signal.size())
    throw InvalidInput("convolve_rir: impulse response longer than signal");
  const std::vector<double> x = to_double(signal.samples);
  std::vector<double> y = fft_convolve(x, to_double(rir.samples));
  y.resize(x.size());
  const double p_in = mean_square(x), p_out = mean_square(y);
  if (!(p_out > 0.0)) throw InvalidInput("convolve_rir: output has zero energy");
  const double g = std::sqrt(p_in / p_out);
  for (auto& v : y) v *= g;
  return Waveform{to_float(y), signal.sample_rate};
}

MixtureExample realize(const MixtureRecipe& recipe, const Catalog& catalog) {
  validate_recipe(recipe);
  const CatalogSpeaker& spk = catalog.speaker(recipe.target_id);
  auto utterance = [](const CatalogSpeaker& s, int idx) -> const Utterance& {
    if (idx < 0 || idx >= static_cast<int>(s.utterances.size()))
      throw ConfigError("catalog speaker '" + s.id + "' has no utterance " +
                        std::to_string(idx));
    return s.utterances[idx];
  };
  const Utterance& target = utterance(spk, recipe.target_utterance);
  const Utterance& reference = utterance(spk, recipe.reference_utterance);
  const std::size_t len = target.audio.size();
  const double p_target = mean_square(std::span<const float>(target.audio.samples));

  std::vector<double> mix;
  if (recipe.has_rir) {
    mix = to_double(convolve_rir(target.audio, catalog.rir(*recipe.rir_id).audio).samples);
  } else {
    mix = to_double(target.audio.samples);
  }
  auto add_scaled = [&](const Waveform& src, uint64_t offset, double snr_db) {
    const std::vector<double> x = fit_length(src, len, offset);
    const double g = snr_gain(mean_square(x), p_target, snr_db);
    for (std::size_t i = 0; i < len; ++i) mix[i] += g * x[i];
  };
  for (const auto& it : recipe.interferers) {
    const CatalogSpeaker& other = catalog.speaker(it.speaker_id);
    add_scaled(utterance(other, it.utterance).audio, it.offset, it.snr_db);
  }
  if (recipe.has_noise)
    add_scaled(catalog.noise(recipe.noise_id).audio, recipe.noise_offset,
               recipe.noise_snr_db);

  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  if (peak > 1.0)
    for (auto& v : mix) v /= peak;
  for (auto& v : mix) v = std::clamp(v, -1.0, 1.0);

  MixtureExample ex;
  ex.noisy = Waveform{to_float(mix), target.audio.sample_rate};
  ex.clean_target = target.audio;
  ex.reference_utterance = reference.audio;
  ex.tokens = target.tokens;
  ex.recipe = recipe;
  return ex;
}

void validate_speaker_spec(const SyntheticSpeakerSpec& spec, int sample_rate) {
  if (!(spec.band_low_hz > 0.0 && spec.band_low_hz < spec.band_high_hz &&
        spec.band_high_hz < sample_rate / 2.0))
    throw ConfigError("speaker '" + spec.speaker_id +
                      "': band must satisfy 0 < low < high < Nyquist");
  if (spec.harmonic_count < 1) throw ConfigError("harmonic_count must be >= 1");
  if (spec.modulation_rate_hz < 0.0) throw ConfigError("modulation rate must be >= 0");
}

Utterance synth_token_utterance(const SyntheticSpeakerSpec& spec,
                                const std::vector<int>& tokens, uint64_t seed,
                                int sample_rate, int token_samples) {
  validate_speaker_spec(spec, sample_rate);
  if (token_samples <= 0) throw InvalidInput("token_samples must be positive");
  const double guard = 2.0 * sample_rate / 512.0;
  const double lo = spec.band_low_hz + guard;
  const double hi = spec.band_high_hz - guard;
  if (hi <= lo) throw ConfigError("speaker '" + spec.speaker_id + "': band too narrow");
  const double width = (hi - lo) / kTokenCount;
  const int h = spec.harmonic_count;

  Rng rng(seed);
  const double level = rng.uniform(0.08, 0.12) / std::sqrt(static_cast<double>(h));
  const double mod_phase = rng.uniform(0.0, kTwoPi);
  const int ramp = std::max(1, static_cast<int>(0.01 * sample_rate));

  std::vector<double> x(tokens.size() * static_cast<std::size_t>(token_samples), 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int k = tokens[i];
    if (k < 0 || k >= kTokenCount) throw InvalidInput("token id out of range");
    std::vector<double> freq(h), phase(h);
    for (int j = 0; j < h; ++j) {
      const double jitter = rng.uniform(-0.15, 0.15);
      freq[j] = lo + width * (k + (j + 0.5 + jitter) / h);
      phase[j] = rng.uniform(0.0, kTwoPi);
    }
    const std::size_t base = i * static_cast<std::size_t>(token_samples);
    for (int n = 0; n < token_samples; ++n) {
      const double t = static_cast<double>(base + n) / sample_rate;
      double env = 1.0;
      if (n < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * n / ramp);
      if (token_samples - 1 - n < ramp)
        env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi *
                                                 (token_samples - 1 - n) / ramp));
      const double am = 0.8 + 0.2 * std::sin(kTwoPi * spec.modulation_rate_hz * t + mod_phase);
      double s = 0.0;
      const double tn = static_cast<double>(n) / sample_rate;
      for (int j = 0; j < h; ++j) s += std::sin(kTwoPi * freq[j] * tn + phase[j]);
      x[base + n] = level * env * am * s;
    }
  }
  return Utterance{Waveform{to_float(x), sample_rate}, tokens};
}

Waveform synth_speaker_utterance(const SyntheticSpeakerSpec& spec,
                                 double duration_s, uint64_t seed,
                                 int sample_rate) {
  if (!(duration_s > 0.0)) throw InvalidInput("duration must be positive");
  const auto total = static_cast<std::size_t>(std::lround(duration_s * sample_rate));
  if (total == 0) throw InvalidInput("duration shorter than one sample");
  const std::size_t count = (total + kTokenSamples - 1) / kTokenSamples;
  Rng rng(derive_seed(seed, 0));
  std::vector<int> tokens(count);
  for (auto& t : tokens) t = static_cast<int>(rng.below(kTokenCount));
  Utterance u = synth_token_utterance(spec, tokens, seed, sample_rate);
  u.audio.samples.resize(total);
  return u.audio;
}

nlohmann::ordered_json synthetic_config_to_json(const SyntheticCatalogConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["sample_rate"] = c.sample_rate;
  j["n_speakers"] = c.n_speakers;
  j["utterances_per_speaker"] = c.utterances_per_speaker;
  j["tokens_per_utterance"] = c.tokens_per_utterance;
  j["band_low_hz"] = c.band_low_hz;
  j["band_high_hz"] = c.band_high_hz;
  j["n_noises"] = c.n_noises;
  j["noise_duration_s"] = c.noise_duration_s;
  j["n_rirs"] = c.n_rirs;
  return j;
}

SyntheticCatalogConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticCatalogConfig c;
  static const char* kKeys[] = {"seed", "sample_rate", "n_speakers",
                                "utterances_per_speaker", "tokens_per_utterance",
                                "band_low_hz", "band_high_hz", "n_noises",
                                "noise_duration_s", "n_rirs"};
  for (const auto& [key, _] : j.items())
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
      throw ConfigError("synthetic catalog: unknown key '" + key + "'");
  try {
    c.seed = j.value("seed", c.seed);
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.n_speakers = j.value("n_speakers", c.n_speakers);
    c.utterances_per_speaker = j.value("utterances_per_speaker", c.utterances_per_speaker);
    c.tokens_per_utterance = j.value("tokens_per_utterance", c.tokens_per_utterance);
    c.band_low_hz = j.value("band_low_hz", c.band_low_hz);
    c.band_high_hz = j.value("band_high_hz", c.band_high_hz);
    c.n_noises = j.value("n_noises", c.n_noises);
    c.noise_duration_s = j.value("noise_duration_s", c.noise_duration_s);
    c.n_rirs = j.value("n_rirs", c.n_rirs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic catalog: ") + e.what());
  }
  return c;
}

std::vector<SyntheticSpeakerSpec> synthetic_speaker_specs(
    const SyntheticCatalogConfig& config) {
  if (config.n_speakers < 2) throw ConfigError("need at least 2 synthetic speakers");
  std::vector<SyntheticSpeakerSpec> specs;
  const double slot = (config.band_high_hz - config.band_low_hz) / config.n_speakers;
  Rng rng(derive_seed(config.seed, 1));
  for (int i = 0; i < config.n_speakers; ++i) {
    SyntheticSpeakerSpec s;
    char id[16];
    std::snprintf(id, sizeof(id), "spk%02d", i);
    s.speaker_id = id;
    s.band_low_hz = config.band_low_hz + slot * i;
    s.band_high_hz = s.band_low_hz + 0.92 * slot;
    s.modulation_rate_hz = rng.uniform(3.0, 7.0);
    s.harmonic_count = 2 + i % 2;
    validate_speaker_spec(s, config.sample_rate);
    specs.push_back(s);
  }
  return specs;
}

Catalog make_synthetic_catalog(const SyntheticCatalogConfig& config) {
  if (config.utterances_per_speaker < 2)
    throw ConfigError("need at least 2 utterances per speaker");
  if (config.tokens_per_utterance < 1) throw ConfigError("need at least 1 token");
  Catalog cat;
  cat.sample_rate = config.sample_rate;
  const auto specs = synthetic_speaker_specs(config);
  for (std::size_t s = 0; s < specs.size(); ++s) {
    CatalogSpeaker spk;
    spk.id = specs[s].speaker_id;
    for (int u = 0; u < config.utterances_per_speaker; ++u) {
      const uint64_t seed = derive_seed(config.seed, 1000 + s * 1000 + u);
      Rng rng(derive_seed(seed, 0));
      std::vector<int> tokens(config.tokens_per_utterance);
      for (auto& t : tokens) t = static_cast<int>(rng.below(kTokenCount));
      spk.utterances.push_back(
          synth_token_utterance(specs[s], tokens, seed, config.sample_rate));
    }
    cat.speakers.push_back(std::move(spk));
  }
  for (int i = 0; i < config.n_noises; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "noise%02d", i);
    cat.noises.push_back({id, make_noise(i, config.noise_duration_s, config.sample_rate,
                                         derive_seed(config.seed, 2000 + i))});
  }
  for (int i = 0; i < config.n_rirs; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "rir%02d", i);
    cat.rirs.push_back({id, make_rir(config.sample_rate, derive_seed(config.seed, 3000 + i))});
  }
  return cat;
}

Catalog load_catalog_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  Catalog cat;
  bool rate_set = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const std::string role = j.value("role", "");
    Waveform w = read_wav(resolve(j.at("path").get<std::string>()));
    if (!rate_set) {
      cat.sample_rate = w.sample_rate;
      rate_set = true;
    } else if (w.sample_rate != cat.sample_rate) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": sample rate differs from the rest of the catalog");
    }
    if (role == "target") {
      const std::string id = j.at("speaker").get<std::string>();
      std::vector<int> tokens = j.value("tokens", std::vector<int>{});
      auto it = std::find_if(cat.speakers.begin(), cat.speakers.end(),
                             [&](const CatalogSpeaker& s) { return s.id == id; });
      if (it == cat.speakers.end()) {
        cat.speakers.push_back({id, {}});
        it = cat.speakers.end() - 1;
      }
      it->utterances.push_back({std::move(w), std::move(tokens)});
    } else if (role == "noise") {
      cat.noises.push_back({j.at("id").get<std::string>(), std::move(w)});
    } else if (role == "rir") {
      cat.rirs.push_back({j.at("id").get<std::string>(), std::move(w)});
    } else {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": unknown role '" + role + "'");
    }
  }
  return cat;
}

void write_corpus(const std::filesystem::path& dir,
                  const std::vector<MixtureExample>& examples) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  std::ofstream recipes(dir / "recipes.jsonl", std::ios::trunc);
  if (!manifest || !recipes) throw IoError("cannot write corpus in " + dir.string());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    char id[32];
    std::snprintf(id, sizeof(id), "ex%05zu", i);
    const std::string base = id;
    write_wav(dir / (base + "_noisy.wav"), ex.noisy);
    write_wav(dir / (base + "_clean.wav"), ex.clean_target);
    write_wav(dir / (base + "_reference.wav"), ex.reference_utterance);
    nlohmann::ordered_json j;
    j["id"] = base;
    j["noisy"] = base + "_noisy.wav";
    j["clean"] = base + "_clean.wav";
    j["reference"] = base + "_reference.wav";
    j["target_id"] = ex.recipe.target_id;
    j["tokens"] = ex.tokens;
    manifest << j.dump() << '\n';
    recipes << recipe_to_json(ex.recipe).dump() << '\n';
  }
}

std::vector<CorpusEntry> read_corpus_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<CorpusEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusEntry e;
      e.id = j.at("id").get<std::string>();
      e.noisy = base / j.at("noisy").get<std::string>();
      e.clean = base / j.at("clean").get<std::string>();
      e.reference = base / j.at("reference").get<std::string>();
      e.target_id = j.value("target_id", "");
      e.tokens = j.value("tokens", std::vector<int>{});
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return out;
}

MixtureExample load_corpus_example(const CorpusEntry& entry) {
  MixtureExample ex;
  ex.noisy = read_wav(entry.noisy);
  ex.clean_target = read_wav(entry.clean);
  ex.reference_utterance = read_wav(entry.reference);
  ex.tokens = entry.tokens;
  ex.recipe.target_id = entry.target_id;
  if (ex.noisy.size() != ex.clean_target.size())
    throw FormatError(entry.id + ": noisy and clean lengths differ");
  if (ex.noisy.sample_rate != ex.clean_target.sample_rate ||
      ex.noisy.sample_rate != ex.reference_utterance.sample_rate)
    throw FormatError(entry.id + ": sample rates differ");
  return ex;
}

std::vector<MixtureExample> generate_corpus(const Catalog& catalog, int count,
                                            uint64_t seed,
                                            const RecipeConstraints& constraints) {
  std::vector<MixtureExample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(realize(draw_recipe(derive_seed(seed, i), catalog, constraints), catalog));
  return out;
}

}  // namespace cvf
