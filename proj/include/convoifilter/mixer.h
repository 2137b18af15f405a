// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Seeded synthesis of cocktail-party mixtures: a target utterance plus 0-3
// interfering talkers, optional ambient noise and an optional room impulse
// response, every interference source level set against the dry target.
//
// Recipes are drawn from a catalog and fully describe one example, so
// realize(recipe, catalog) is a pure function.

#ifndef CONVOIFILTER_MIXER_H_
#define CONVOIFILTER_MIXER_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "convoifilter/dsp.h"
#include "json.hpp"

namespace cvf {

// Token inventory of the synthetic speech used by the toy recogniser.
inline constexpr int kTokenCount = 8;
inline constexpr int kTokenSamples = 2048;  // 16 hops of 128 samples

struct Utterance {
  Waveform audio;
  std::vector<int> tokens;  // may be empty for file-based audio
};

struct NamedWave {
  std::string id;
  Waveform audio;
};

struct CatalogSpeaker {
  std::string id;
  std::vector<Utterance> utterances;
};

struct Catalog {
  int sample_rate = kDefaultSampleRate;
  std::vector<CatalogSpeaker> speakers;
  std::vector<NamedWave> noises;
  std::vector<NamedWave> rirs;

  const CatalogSpeaker& speaker(const std::string& id) const;
  const NamedWave& noise(const std::string& id) const;
  const NamedWave& rir(const std::string& id) const;
};

struct InterfererDraw {
  std::string speaker_id;
  int utterance = 0;
  double snr_db = 0.0;
  uint64_t offset = 0;
};

struct MixtureRecipe {
  uint64_t seed = 0;
  std::string target_id;
  int target_utterance = 0;
  int reference_utterance = 0;
  std::vector<InterfererDraw> interferers;
  bool has_noise = false;
  std::string noise_id;
  double noise_snr_db = 0.0;
  uint64_t noise_offset = 0;
  bool has_rir = false;
  std::optional<std::string> rir_id;

  int n_interferers() const { return static_cast<int>(interferers.size()); }
};

// Throws ConfigError when an invariant (counts, SNR range, rir_id iff
// has_rir) does not hold.
void validate_recipe(const MixtureRecipe& r);

nlohmann::ordered_json recipe_to_json(const MixtureRecipe& r);
MixtureRecipe recipe_from_json(const nlohmann::json& j);

struct MixtureExample {
  Waveform noisy;
  Waveform clean_target;
  Waveform reference_utterance;
  std::vector<int> tokens;  // labels of clean_target
  MixtureRecipe recipe;
};

struct RecipeConstraints {
  int min_interferers = 0;
  int max_interferers = 3;
  double p_noise = 0.8;
  double p_rir = 0.3;
  double snr_min_db = 1.0;
  double snr_max_db = 20.0;
};

// Interferer count is uniform over [min, max] (capped by the number of
// non-target speakers); every SNR is drawn independently and uniformly.
MixtureRecipe draw_recipe(uint64_t seed, const Catalog& catalog,
                          const RecipeConstraints& constraints = {});

// alpha * signal such that 10 log10(P_reference / P_scaled) = snr_db, with P
// the mean square over the full buffer.
Waveform scale_to_snr(const Waveform& signal, const Waveform& reference,
                      double snr_db);

// Linear convolution truncated to the signal length and rescaled to the
// input RMS.
Waveform convolve_rir(const Waveform& signal, const Waveform& rir);

MixtureExample realize(const MixtureRecipe& recipe, const Catalog& catalog);

struct SyntheticSpeakerSpec {
  std::string speaker_id;
  double band_low_hz = 0.0;
  double band_high_hz = 0.0;
  double modulation_rate_hz = 4.0;
  int harmonic_count = 2;
};

void validate_speaker_spec(const SyntheticSpeakerSpec& spec, int sample_rate);

// Token sequence rendered as amplitude-modulated partial groups. Token k
// occupies the k-th of kTokenCount equal sub-bands of the speaker's band
// (inset by a guard of two bins at each edge); each token lasts
// token_samples.
Utterance synth_token_utterance(const SyntheticSpeakerSpec& spec,
                                const std::vector<int>& tokens, uint64_t seed,
                                int sample_rate = kDefaultSampleRate,
                                int token_samples = kTokenSamples);

// Random tokens covering duration_s, truncated to round(duration_s * rate)
// samples.
Waveform synth_speaker_utterance(const SyntheticSpeakerSpec& spec,
                                 double duration_s, uint64_t seed,
                                 int sample_rate = kDefaultSampleRate);

struct SyntheticCatalogConfig {
  uint64_t seed = 1;
  int sample_rate = kDefaultSampleRate;
  int n_speakers = 8;
  int utterances_per_speaker = 6;
  int tokens_per_utterance = 12;
  double band_low_hz = 300.0;
  double band_high_hz = 7700.0;
  int n_noises = 4;
  double noise_duration_s = 3.0;
  int n_rirs = 4;
};

nlohmann::ordered_json synthetic_config_to_json(const SyntheticCatalogConfig& c);
SyntheticCatalogConfig synthetic_config_from_json(const nlohmann::json& j);

// Speakers tile [band_low_hz, band_high_hz] with disjoint bands.
std::vector<SyntheticSpeakerSpec> synthetic_speaker_specs(
    const SyntheticCatalogConfig& config);
Catalog make_synthetic_catalog(const SyntheticCatalogConfig& config);

// Catalog manifest: one JSON object per line,
//   {"role":"target","speaker":ID,"path":P[,"tokens":[...]]}
//   {"role":"noise","id":ID,"path":P}
//   {"role":"rir","id":ID,"path":P}
// Relative paths resolve against the manifest's directory.
Catalog load_catalog_manifest(const std::filesystem::path& path);

// On-disk corpus: <dir>/<id>_{noisy,clean,reference}.wav (float32), plus
// manifest.jsonl (one entry per example) and recipes.jsonl (one recipe per
// line, same order).
struct CorpusEntry {
  std::string id;
  std::filesystem::path noisy;
  std::filesystem::path clean;
  std::filesystem::path reference;
  std::string target_id;
  std::vector<int> tokens;
};

void write_corpus(const std::filesystem::path& dir,
                  const std::vector<MixtureExample>& examples);
std::vector<CorpusEntry> read_corpus_manifest(const std::filesystem::path& path);
MixtureExample load_corpus_example(const CorpusEntry& entry);

// Corpus generation: example i uses recipe seed derive_seed(seed, i).
std::vector<MixtureExample> generate_corpus(
    const Catalog& catalog, int count, uint64_t seed,
    const RecipeConstraints& constraints = {});

}  // namespace cvf

#endif  // CONVOIFILTER_MIXER_H_
