// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Chunked enhancement and joint enhancement/recogniser fine-tuning.
//
// Training step for one example:
//   chunks = split(noisy, chunk_size)        zero-padded to whole chunks
//   out    = merge(enhance(c) for c in chunks)
//   enh_loss = -si_snr(out, clean)
//   asr_in = out if enh_loss < threshold else clean
//   loss = enh_loss + asr_loss(asr_in, tokens)
//
// In cascade mode (joint = false) the recogniser always consumes clean audio,
// so the enhancer sees only its own loss.

#ifndef CONVOIFILTER_JOINT_TUNER_H_
#define CONVOIFILTER_JOINT_TUNER_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "convoifilter/metrics.h"
#include "convoifilter/mixer.h"
#include "convoifilter/model.h"
#include "json.hpp"

namespace cvf {

struct ChunkPlan {
  double chunk_size_s = 0.0;
  int64_t chunk_samples = 0;
  int n_chunks = 0;
  int64_t pad_samples = 0;
  int64_t original_len = 0;
};

ChunkPlan plan_chunks(int64_t len, double chunk_size_s, int sample_rate);
std::pair<std::vector<Waveform>, ChunkPlan> split_chunks(const Waveform& w,
                                                         double chunk_size_s);
Waveform merge_chunks(const std::vector<Waveform>& chunks, const ChunkPlan& plan);

enum class LossVariant { kSiSnr, kMse };

struct TrainConfig {
  double threshold_db = -8.0;
  double learning_rate = 1e-3;
  int steps = 200;
  int batch_size = 8;
  uint64_t seed = 1;
  LossVariant loss_variant = LossVariant::kSiSnr;
  bool joint = false;
  bool dropout = true;
  bool log_wall_time = true;
};

void validate(const TrainConfig& cfg);
nlohmann::ordered_json config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// The enhanced branch feeds the recogniser when enh_loss < threshold_db,
// i.e. when the SI-SNR exceeds -threshold_db.
inline bool gate_passes(double enh_loss, double threshold_db) {
  return enh_loss < threshold_db;
}

// Input level applied before analysis; enhance() undoes it on the output.
inline constexpr double kAnalysisRms = 0.05;
double analysis_gain(std::span<const float> noisy);

struct ExampleEmbeddings {
  SpeakerEmbedding ref;
  SpeakerEmbedding noisy;
};
ExampleEmbeddings embed_example(const MixtureExample& ex, int d_emb);

struct StepResult {
  double enh_loss = 0.0;
  double asr_loss = 0.0;
  double total_loss = 0.0;
  double si_snr_db = 0.0;
  bool gate_passed = false;
  bool asr_on_enhanced = false;
};

struct StepOptions {
  bool oracle = false;           // ideal ratio mask in place of the model
  Rng* dropout_rng = nullptr;
  double grad_scale = 1.0;       // multiplies every accumulated gradient
  bool accumulate = true;        // write gradients into the model
};

// Runs one forward/backward pass and accumulates gradients into the model.
// Numeric failures are rethrown as NumericError.
StepResult joint_step(Model& model, const MixtureExample& ex,
                      const ExampleEmbeddings& emb, const TrainConfig& cfg,
                      const StepOptions& opt = {});
StepResult joint_step(Model& model, const MixtureExample& ex, const TrainConfig& cfg,
                      const StepOptions& opt = {});

struct StepRecord {
  int step = 0;
  double enh_loss = 0.0;
  double asr_loss = 0.0;
  double gate_rate = 0.0;
  double wall_ms = 0.0;
};
nlohmann::ordered_json to_json(const StepRecord& r, bool with_wall_time = true);

struct TrainResult {
  std::vector<StepRecord> log;
};

using CheckpointHook = std::function<void(int step, const Model& model)>;

// Adam over the batch-mean loss. Batch members are drawn with replacement
// from derive_seed(seed, step). Aborts with NumericError on a non-finite
// loss or gradient.
TrainResult train(Model& model, const std::vector<MixtureExample>& corpus,
                  const TrainConfig& cfg, std::ostream* log = nullptr,
                  const CheckpointHook& hook = {}, int checkpoint_every = 0);

// Inference: encode -> fuse -> chunked stft/mask/istft -> merge.
Waveform enhance(const Model& model, const Waveform& noisy, const Waveform& reference);
// e is the conditioning vector after fusion.
Waveform enhance_with_embedding(const Model& model, const Waveform& noisy,
                                const SpeakerEmbedding& e);
// Ideal-ratio-mask enhancement with the same framing and chunking.
Waveform enhance_oracle(const Waveform& noisy, const Waveform& clean, int n_fft,
                        int hop, double chunk_size_s);

ScoreReport score_pairs(const std::vector<Waveform>& estimates,
                        const std::vector<Waveform>& targets,
                        const std::vector<std::string>& ids);
ScoreReport evaluate(const Model& model, const std::vector<MixtureExample>& examples);
ScoreReport evaluate_unprocessed(const std::vector<MixtureExample>& examples);

// Fraction of token windows the recogniser gets wrong on each waveform.
double token_error_rate(const ToyAsrParams& asr, const ToyAsrConfig& cfg,
                        const std::vector<Waveform>& audio,
                        const std::vector<std::vector<int>>& labels);
// Recogniser applied to the model's enhanced output.
double token_error_rate(const Model& model, const std::vector<MixtureExample>& examples);

}  // namespace cvf

#endif  // CONVOIFILTER_JOINT_TUNER_H_
