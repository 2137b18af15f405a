// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/joint_tuner.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "convoifilter/errors.h"

namespace cvf {

// ---------------------------------------------------------------------------
// Chunking

ChunkPlan plan_chunks(int64_t len, double chunk_size_s, int sample_rate) {
  if (!(chunk_size_s > 0.0) || !std::isfinite(chunk_size_s))
    throw InvalidInput("chunk size must be positive");
  if (sample_rate <= 0) throw InvalidInput("sample rate must be positive");
  if (len <= 0) throw InvalidInput("cannot split an empty waveform");
  ChunkPlan p;
  p.chunk_size_s = chunk_size_s;
  p.chunk_samples = std::llround(chunk_size_s * sample_rate);
  if (p.chunk_samples <= 0) throw InvalidInput("chunk shorter than one sample");
  p.n_chunks = static_cast<int>((len + p.chunk_samples - 1) / p.chunk_samples);
  p.pad_samples = p.n_chunks * p.chunk_samples - len;
  p.original_len = len;
  return p;
}

std::pair<std::vector<Waveform>, ChunkPlan> split_chunks(const Waveform& w,
                                                         double chunk_size_s) {
  if (w.empty()) throw InvalidInput("cannot split an empty waveform");
  const ChunkPlan plan =
      plan_chunks(static_cast<int64_t>(w.size()), chunk_size_s, w.sample_rate);
  std::vector<Waveform> chunks(static_cast<std::size_t>(plan.n_chunks));
  const auto n = static_cast<std::size_t>(plan.chunk_samples);
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    chunks[c].sample_rate = w.sample_rate;
    chunks[c].samples.assign(n, 0.0f);
    const std::size_t begin = c * n;
    const std::size_t end = std::min(begin + n, w.size());
    std::copy(w.samples.begin() + static_cast<std::ptrdiff_t>(begin),
              w.samples.begin() + static_cast<std::ptrdiff_t>(end), chunks[c].samples.begin());
  }
  return {std::move(chunks), plan};
}

Waveform merge_chunks(const std::vector<Waveform>& chunks, const ChunkPlan& plan) {
  if (static_cast<int>(chunks.size()) != plan.n_chunks)
    throw InvalidInput("merge: expected " + std::to_string(plan.n_chunks) + " chunks, got " +
                       std::to_string(chunks.size()));
  if (chunks.empty()) throw InvalidInput("merge: no chunks");
  Waveform out;
  out.sample_rate = chunks.front().sample_rate;
  out.samples.reserve(static_cast<std::size_t>(plan.n_chunks * plan.chunk_samples));
  for (const Waveform& c : chunks) {
    if (static_cast<int64_t>(c.size()) != plan.chunk_samples)
      throw InvalidInput("merge: chunk length does not match the plan");
    out.samples.insert(out.samples.end(), c.samples.begin(), c.samples.end());
  }
  out.samples.resize(static_cast<std::size_t>(plan.original_len));
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

void validate(const TrainConfig& c) {
  if (!std::isfinite(c.threshold_db)) throw ConfigError("threshold_db must be finite");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (c.steps < 0) throw ConfigError("steps must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["threshold_db"] = c.threshold_db;
  j["learning_rate"] = c.learning_rate;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["loss_variant"] = c.loss_variant == LossVariant::kSiSnr ? "si_snr" : "mse";
  j["joint"] = c.joint;
  j["dropout"] = c.dropout;
  j["log_wall_time"] = c.log_wall_time;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "threshold_db") {
        c.threshold_db = value.get<double>();
      } else if (key == "learning_rate") {
        c.learning_rate = value.get<double>();
      } else if (key == "steps") {
        c.steps = value.get<int>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<int>();
      } else if (key == "seed") {
        c.seed = value.get<uint64_t>();
      } else if (key == "loss_variant") {
        const std::string v = value.get<std::string>();
        if (v == "si_snr") {
          c.loss_variant = LossVariant::kSiSnr;
        } else if (v == "mse") {
          c.loss_variant = LossVariant::kMse;
        } else {
          throw ConfigError("train config: unknown loss_variant '" + v + "'");
        }
      } else if (key == "joint") {
        c.joint = value.get<bool>();
      } else if (key == "dropout") {
        c.dropout = value.get<bool>();
      } else if (key == "log_wall_time") {
        c.log_wall_time = value.get<bool>();
      } else {
        throw ConfigError("train config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train config: " + key + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Training step

double analysis_gain(std::span<const float> noisy) {
  double acc = 0.0;
  for (float v : noisy) acc += static_cast<double>(v) * v;
  if (noisy.empty() || !(acc > 0.0)) return 1.0;
  return kAnalysisRms / std::sqrt(acc / static_cast<double>(noisy.size()));
}

ExampleEmbeddings embed_example(const MixtureExample& ex, int d_emb) {
  return {encode(ex.reference_utterance, d_emb), encode(ex.noisy, d_emb)};
}

namespace {

struct ChunkTrace {
  MatrixD mag;
  MatrixF phase;
  MatrixD mask;
  MatrixD y;
  MatrixD d_y_direct;
  MaskNetCache cache;
};

MatrixF phase_of(const ComplexMatrix& x) {
  MatrixF p(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    p.data()[i] = static_cast<float>(std::arg(x.data()[i]));
  return p;
}

std::span<const double> slice(const std::vector<double>& v, int64_t begin, int64_t n) {
  return std::span<const double>(v).subspan(static_cast<std::size_t>(begin),
                                            static_cast<std::size_t>(n));
}

}  // namespace

StepResult joint_step(Model& model, const MixtureExample& ex, const ExampleEmbeddings& emb,
                      const TrainConfig& cfg, const StepOptions& opt) {
  const ModelConfig& mc = model.config();
  if (ex.noisy.size() != ex.clean_target.size())
    throw InvalidInput("noisy and clean lengths differ");
  check_waveform(ex.noisy);
  check_waveform(ex.clean_target);
  const int64_t len = static_cast<int64_t>(ex.noisy.size());
  const ChunkPlan plan = plan_chunks(len, mc.chunk_size_s, ex.noisy.sample_rate);
  const int64_t chunk = plan.chunk_samples;
  const int64_t padded = plan.n_chunks * chunk;
  const double gain = analysis_gain(ex.noisy.samples);
  const bool mse = cfg.loss_variant == LossVariant::kMse;

  std::vector<double> noisy(static_cast<std::size_t>(padded), 0.0);
  std::vector<double> clean_scaled(static_cast<std::size_t>(padded), 0.0);
  const std::vector<double> clean = to_double(ex.clean_target.samples);
  for (int64_t i = 0; i < len; ++i) {
    noisy[static_cast<std::size_t>(i)] = gain * ex.noisy.samples[static_cast<std::size_t>(i)];
    clean_scaled[static_cast<std::size_t>(i)] = gain * clean[static_cast<std::size_t>(i)];
  }

  FusionCache fusion_cache;
  const SpeakerEmbedding e =
      fuse(emb.ref, emb.noisy, model.fusion(), mc.cross_extraction, &fusion_cache);
  const StftEngine engine(mc.mask.n_fft, mc.hop);
  const bool backprop = opt.accumulate && !opt.oracle;

  std::vector<ChunkTrace> traces(static_cast<std::size_t>(plan.n_chunks));
  std::vector<double> out(static_cast<std::size_t>(padded), 0.0);
  double mse_sum = 0.0;
  double mse_count = 0.0;
  for (int c = 0; c < plan.n_chunks; ++c) {
    ChunkTrace& tr = traces[static_cast<std::size_t>(c)];
    const ComplexMatrix x = engine.analyze(slice(noisy, c * chunk, chunk));
    tr.mag = x.cwiseAbs();
    tr.phase = phase_of(x);
    MatrixD target;
    if (opt.oracle || mse) target = engine.analyze(slice(clean_scaled, c * chunk, chunk)).cwiseAbs();
    if (opt.oracle) {
      tr.mask = target.binaryExpr(tr.mag, [](double s, double m) {
        return std::clamp(s / (m + kIrmEpsilon), 0.0, kIrmClipMax);
      });
    } else {
      tr.mask = model.mask().forward_train(build_features(tr.mag, e),
                                           backprop ? &tr.cache : nullptr, opt.dropout_rng);
    }
    tr.y = tr.mask.cwiseProduct(tr.mag);
    if (mse) {
      const MatrixD diff = tr.y - target;
      mse_sum += diff.squaredNorm();
      mse_count += static_cast<double>(diff.size());
      tr.d_y_direct = 2.0 * diff;
    }
    const std::vector<double> y = engine.synthesize_polar(tr.y, tr.phase, chunk);
    std::copy(y.begin(), y.end(), out.begin() + c * chunk);
  }
  out.resize(static_cast<std::size_t>(len));

  StepResult r;
  std::vector<double> grad(static_cast<std::size_t>(len));
  r.si_snr_db = si_snr_with_grad(out, clean, grad);
  r.gate_passed = gate_passes(-r.si_snr_db, cfg.threshold_db);
  std::vector<double> d_out(static_cast<std::size_t>(len), 0.0);
  if (mse) {
    r.enh_loss = mse_sum / mse_count;
  } else {
    r.enh_loss = -r.si_snr_db;
    for (int64_t i = 0; i < len; ++i)
      d_out[static_cast<std::size_t>(i)] = -grad[static_cast<std::size_t>(i)] * opt.grad_scale;
  }

  if (!ex.tokens.empty()) {
    if (cfg.joint && r.gate_passed) {
      r.asr_on_enhanced = true;
      std::vector<double> d_asr;
      r.asr_loss = toy_asr_audio_loss(out, ex.tokens, model.asr(), mc.asr,
                                      backprop ? &d_asr : nullptr, opt.accumulate,
                                      opt.grad_scale);
      if (backprop)
        for (std::size_t i = 0; i < d_out.size(); ++i) d_out[i] += d_asr[i];
    } else {
      r.asr_loss = toy_asr_audio_loss(clean, ex.tokens, model.asr(), mc.asr, nullptr,
                                      opt.accumulate, opt.grad_scale);
    }
  }
  r.total_loss = r.enh_loss + r.asr_loss;
  if (!std::isfinite(r.total_loss)) throw NumericError("non-finite training loss");

  if (backprop) {
    d_out.resize(static_cast<std::size_t>(padded), 0.0);
    Eigen::RowVectorXd d_e = Eigen::RowVectorXd::Zero(mc.mask.d_emb);
    const int bins = mc.mask.bins();
    for (int c = 0; c < plan.n_chunks; ++c) {
      ChunkTrace& tr = traces[static_cast<std::size_t>(c)];
      MatrixD d_y = engine.synthesize_polar_adjoint(slice(d_out, c * chunk, chunk), tr.phase);
      if (mse) d_y += tr.d_y_direct * (opt.grad_scale / mse_count);
      const MatrixD d_mask = d_y.cwiseProduct(tr.mag);
      const MatrixD d_g = model.mask().backward(d_mask, tr.cache);
      d_e += d_g.rightCols(d_g.cols() - bins).colwise().sum();
    }
    if (mc.cross_extraction) fuse_backward(d_e, fusion_cache, model.fusion(), nullptr, nullptr);
  }
  return r;
}

StepResult joint_step(Model& model, const MixtureExample& ex, const TrainConfig& cfg,
                      const StepOptions& opt) {
  return joint_step(model, ex, embed_example(ex, model.config().mask.d_emb), cfg, opt);
}

// ---------------------------------------------------------------------------
// Training loop

nlohmann::ordered_json to_json(const StepRecord& r, bool with_wall_time) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["enh_loss"] = r.enh_loss;
  j["asr_loss"] = r.asr_loss;
  j["gate_rate"] = r.gate_rate;
  if (with_wall_time) j["wall_ms"] = r.wall_ms;
  return j;
}

namespace {

bool grads_finite(const ParamRefs& params) {
  for (const Param* p : params)
    if (!p->grad.allFinite()) return false;
  return true;
}

}  // namespace

TrainResult train(Model& model, const std::vector<MixtureExample>& corpus,
                  const TrainConfig& cfg, std::ostream* log, const CheckpointHook& hook,
                  int checkpoint_every) {
  validate(cfg);
  if (corpus.empty()) throw InvalidInput("training corpus is empty");
  std::vector<ExampleEmbeddings> embeddings;
  embeddings.reserve(corpus.size());
  for (const MixtureExample& ex : corpus)
    embeddings.push_back(embed_example(ex, model.config().mask.d_emb));

  Adam adam(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  const ParamRefs params = model.trainable();
  const bool use_dropout = cfg.dropout && model.config().mask.dropout_rate > 0.0;
  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    model.zero_grad();
    Rng pick(derive_seed(cfg.seed, 2 * static_cast<uint64_t>(step)));
    Rng drop(derive_seed(cfg.seed, 2 * static_cast<uint64_t>(step) + 1));
    StepOptions opt;
    opt.grad_scale = 1.0 / cfg.batch_size;
    opt.dropout_rng = use_dropout ? &drop : nullptr;
    StepRecord rec;
    rec.step = step;
    int gated = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(pick.below(corpus.size()));
      StepResult r;
      try {
        r = joint_step(model, corpus[idx], embeddings[idx], cfg, opt);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ": " + e.what());
      }
      rec.enh_loss += r.enh_loss / cfg.batch_size;
      rec.asr_loss += r.asr_loss / cfg.batch_size;
      gated += r.gate_passed ? 1 : 0;
    }
    rec.gate_rate = static_cast<double>(gated) / cfg.batch_size;
    if (!std::isfinite(rec.enh_loss) || !std::isfinite(rec.asr_loss) || !grads_finite(params))
      throw NumericError("training diverged at step " + std::to_string(step));
    adam.step(params);
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (log) *log << to_json(rec, cfg.log_wall_time).dump() << '\n' << std::flush;
    if (hook && checkpoint_every > 0 && (step + 1) % checkpoint_every == 0) hook(step, model);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference and scoring

Waveform enhance(const Model& model, const Waveform& noisy, const Waveform& reference) {
  const int d = model.config().mask.d_emb;
  const SpeakerEmbedding e_ref = encode(reference, d);
  if (!model.config().cross_extraction)
    return enhance_with_embedding(model, noisy, e_ref);
  const SpeakerEmbedding e_noisy = encode(noisy, d);
  return enhance_with_embedding(model, noisy, fuse(e_ref, e_noisy, model.fusion(), true));
}

Waveform enhance_with_embedding(const Model& model, const Waveform& noisy,
                                const SpeakerEmbedding& e) {
  check_waveform(noisy);
  const ModelConfig& mc = model.config();
  if (e.dim() != mc.mask.d_emb) throw InvalidInput("embedding width does not match the model");
  const double gain = analysis_gain(noisy.samples);
  Waveform scaled = noisy;
  for (float& v : scaled.samples) v = static_cast<float>(v * gain);
  auto [chunks, plan] = split_chunks(scaled, mc.chunk_size_s);
  for (Waveform& c : chunks) {
    const Stft s = stft(c, mc.mask.n_fft, mc.hop);
    const Mask m = model.mask().forward(build_features(s, e));
    c = istft(apply_mask(s, m));
  }
  Waveform out = merge_chunks(chunks, plan);
  for (float& v : out.samples) v = static_cast<float>(v / gain);
  return out;
}

Waveform enhance_oracle(const Waveform& noisy, const Waveform& clean, int n_fft, int hop,
                        double chunk_size_s) {
  if (noisy.size() != clean.size()) throw InvalidInput("oracle: noisy and clean lengths differ");
  auto [noisy_chunks, plan] = split_chunks(noisy, chunk_size_s);
  auto clean_split = split_chunks(clean, chunk_size_s);
  for (std::size_t c = 0; c < noisy_chunks.size(); ++c) {
    const Stft sn = stft(noisy_chunks[c], n_fft, hop);
    const Stft sc = stft(clean_split.first[c], n_fft, hop);
    noisy_chunks[c] = istft(apply_mask(sn, ideal_ratio_mask(sc, sn)));
  }
  return merge_chunks(noisy_chunks, plan);
}

ScoreReport score_pairs(const std::vector<Waveform>& estimates,
                        const std::vector<Waveform>& targets,
                        const std::vector<std::string>& ids) {
  if (estimates.size() != targets.size() || estimates.size() != ids.size())
    throw InvalidInput("score: mismatched list sizes");
  ScoreReport report;
  for (std::size_t i = 0; i < estimates.size(); ++i)
    report.add({ids[i], si_snr(estimates[i], targets[i]), sdr(estimates[i], targets[i])});
  return report;
}

namespace {

std::string example_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ex%05zu", i);
  return buf;
}

}  // namespace

ScoreReport evaluate(const Model& model, const std::vector<MixtureExample>& examples) {
  std::vector<Waveform> est, tgt;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    est.push_back(enhance(model, examples[i].noisy, examples[i].reference_utterance));
    tgt.push_back(examples[i].clean_target);
    ids.push_back(example_id(i));
  }
  return score_pairs(est, tgt, ids);
}

ScoreReport evaluate_unprocessed(const std::vector<MixtureExample>& examples) {
  std::vector<Waveform> est, tgt;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    est.push_back(examples[i].noisy);
    tgt.push_back(examples[i].clean_target);
    ids.push_back(example_id(i));
  }
  return score_pairs(est, tgt, ids);
}

double token_error_rate(const ToyAsrParams& asr, const ToyAsrConfig& cfg,
                        const std::vector<Waveform>& audio,
                        const std::vector<std::vector<int>>& labels) {
  if (audio.size() != labels.size()) throw InvalidInput("token error rate: size mismatch");
  std::size_t errors = 0, total = 0;
  for (std::size_t i = 0; i < audio.size(); ++i) {
    if (labels[i].empty()) continue;
    const std::vector<int> hyp = toy_asr_decode(toy_asr_logits(audio[i], asr, cfg));
    if (hyp.size() != labels[i].size())
      throw InvalidInput("token error rate: label count does not match token windows");
    for (std::size_t k = 0; k < hyp.size(); ++k) errors += hyp[k] != labels[i][k] ? 1 : 0;
    total += hyp.size();
  }
  if (total == 0) throw InvalidInput("token error rate: no labelled audio");
  return static_cast<double>(errors) / static_cast<double>(total);
}

double token_error_rate(const Model& model, const std::vector<MixtureExample>& examples) {
  std::vector<Waveform> audio;
  std::vector<std::vector<int>> labels;
  for (const MixtureExample& ex : examples) {
    audio.push_back(enhance(model, ex.noisy, ex.reference_utterance));
    labels.push_back(ex.tokens);
  }
  return token_error_rate(model.asr(), model.config().asr, audio, labels);
}

}  // namespace cvf
