// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <limits>
#include <sstream>

#include "convoifilter/errors.h"
#include "convoifilter/joint_tuner.h"
#include "convoifilter/metrics.h"
#include "convoifilter/mixer.h"
#include "convoifilter/nn.h"
#include "doctest.h"
#include "test_util.h"

using namespace cvf;
using namespace cvf::testing;

namespace {

SyntheticCatalogConfig small_catalog() {
  SyntheticCatalogConfig c;
  c.n_speakers = 4;
  c.utterances_per_speaker = 3;
  c.tokens_per_utterance = 4;
  c.n_noises = 2;
  c.noise_duration_s = 1.0;
  c.n_rirs = 2;
  return c;
}

ModelConfig small_model() {
  ModelConfig c;
  c.mask.n_blocks = 1;
  c.mask.hidden = 16;
  c.mask.n_heads = 2;
  c.mask.conv_kernel = 3;
  c.mask.d_emb = 8;
  return c;
}

const Catalog& catalog() {
  static const Catalog c = make_synthetic_catalog(small_catalog());
  return c;
}

RecipeConstraints one_interferer() {
  RecipeConstraints r;
  r.min_interferers = 1;
  r.max_interferers = 1;
  return r;
}

}  // namespace

TEST_CASE("chunk plans pad the final chunk") {
  const ChunkPlan p = plan_chunks(12 * 16000, 5.0, 16000);
  CHECK(p.n_chunks == 3);
  CHECK(p.chunk_samples == 80000);
  CHECK(p.pad_samples == 48000);
  const ChunkPlan q = plan_chunks(10 * 16000, 5.0, 16000);
  CHECK(q.n_chunks == 2);
  CHECK(q.pad_samples == 0);
  const ChunkPlan single = plan_chunks(1000, 5.0, 16000);
  CHECK(single.n_chunks == 1);
  CHECK(single.pad_samples == 79000);
  CHECK_THROWS_AS(plan_chunks(0, 5.0, 16000), InvalidInput);
  CHECK_THROWS_AS(plan_chunks(100, 0.0, 16000), InvalidInput);

  const Waveform w = random_wave(static_cast<std::size_t>(13.2 * 16000), 1);
  auto [chunks, plan] = split_chunks(w, 5.0);
  CHECK(chunks.size() == 3);
  for (const Waveform& c : chunks) CHECK(c.size() == 80000);
  CHECK(merge_chunks(chunks, plan).samples == w.samples);
  chunks.pop_back();
  CHECK_THROWS_AS(merge_chunks(chunks, plan), InvalidInput);
}

TEST_CASE("split and merge are inverse over random lengths") {
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const auto len = static_cast<std::size_t>(1 + rng.below(40000));
    const double chunk_s = 0.01 + rng.uniform() * 0.5;
    const Waveform w = random_wave(len, 100 + static_cast<uint64_t>(i));
    const auto [chunks, plan] = split_chunks(w, chunk_s);
    CHECK(static_cast<int64_t>(chunks.size()) * plan.chunk_samples - plan.pad_samples ==
          static_cast<int64_t>(len));
    CHECK(plan.pad_samples < plan.chunk_samples);
    CHECK(merge_chunks(chunks, plan).samples == w.samples);
  }
}

TEST_CASE("gate is strict at the threshold") {
  CHECK(gate_passes(-8.001, -8.0));
  CHECK_FALSE(gate_passes(-7.999, -8.0));
  CHECK_FALSE(gate_passes(-8.0, -8.0));
  CHECK(gate_passes(-30.0, -8.0));
  CHECK_FALSE(gate_passes(5.0, -8.0));
}

TEST_CASE("joint step routes the recogniser by the gate") {
  Model model = init_model(small_model(), 2);
  const MixtureExample ex = realize(draw_recipe(5, catalog(), one_interferer()), catalog());
  std::vector<double> clean(ex.clean_target.samples.begin(), ex.clean_target.samples.end());
  const double clean_loss = toy_asr_audio_loss(clean, ex.tokens, model.asr(),
                                               model.config().asr, nullptr, false);
  StepOptions oracle;
  oracle.oracle = true;
  oracle.accumulate = false;

  TrainConfig joint;
  joint.joint = true;
  joint.threshold_db = 1000.0;
  const StepResult pass = joint_step(model, ex, joint, oracle);
  CHECK(pass.gate_passed);
  CHECK(pass.asr_on_enhanced);
  CHECK(pass.asr_loss != clean_loss);
  CHECK(pass.total_loss == pass.enh_loss + pass.asr_loss);
  CHECK(pass.enh_loss == -pass.si_snr_db);

  TrainConfig strict = joint;
  strict.threshold_db = -1000.0;
  const StepResult fail = joint_step(model, ex, strict, oracle);
  CHECK_FALSE(fail.gate_passed);
  CHECK_FALSE(fail.asr_on_enhanced);
  CHECK(fail.asr_loss == doctest::Approx(clean_loss).epsilon(1e-12));

  TrainConfig cascade;
  cascade.threshold_db = 1000.0;
  const StepResult casc = joint_step(model, ex, cascade, oracle);
  CHECK(casc.gate_passed);
  CHECK_FALSE(casc.asr_on_enhanced);
  CHECK(casc.asr_loss == doctest::Approx(clean_loss).epsilon(1e-12));
}

TEST_CASE("an untrained model does not pass the gate on interfered speech") {
  Model model = init_model(small_model(), 3);
  TrainConfig joint;
  joint.joint = true;
  const std::vector<MixtureExample> corpus = generate_corpus(catalog(), 8, 4, one_interferer());
  for (const MixtureExample& ex : corpus) {
    StepOptions opt;
    opt.accumulate = false;
    const StepResult r = joint_step(model, ex, joint, opt);
    CHECK(r.gate_passed == (r.si_snr_db > 8.0));
    CHECK(r.asr_on_enhanced == r.gate_passed);
  }
}

TEST_CASE("training is deterministic for one seed") {
  const std::vector<MixtureExample> corpus = generate_corpus(catalog(), 6, 9, one_interferer());
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 2;
  cfg.seed = 11;
  cfg.joint = true;
  ModelConfig mc = small_model();
  mc.mask.dropout_rate = 0.2;
  auto run = [&](std::string* log) {
    Model m = init_model(mc, 1);
    std::ostringstream out;
    train(m, corpus, cfg, &out);
    *log = out.str();
    return m;
  };
  std::string log_a, log_b;
  const Model a = run(&log_a);
  const Model b = run(&log_b);
  const auto pa = const_cast<Model&>(a).trainable();
  const auto pb = const_cast<Model&>(b).trainable();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  std::istringstream la(log_a), lb(log_b);
  std::string ra, rb;
  int lines = 0;
  while (std::getline(la, ra) && std::getline(lb, rb)) {
    auto ja = nlohmann::json::parse(ra), jb = nlohmann::json::parse(rb);
    CHECK(ja.contains("wall_ms"));
    ja.erase("wall_ms");
    jb.erase("wall_ms");
    CHECK(ja == jb);
    ++lines;
  }
  CHECK(lines == 3);
  TrainConfig other = cfg;
  other.seed = 12;
  Model c = init_model(mc, 1);
  train(c, corpus, other);
  CHECK(c.mask().params().in_w.value != a.mask().params().in_w.value);
}

TEST_CASE("training aborts on non-finite values") {
  const std::vector<MixtureExample> corpus = generate_corpus(catalog(), 2, 9, one_interferer());
  Model m = init_model(small_model(), 1);
  m.mask().params().head_w.value(0, 0) = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch_size = 1;
  try {
    train(m, corpus, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("recogniser loss and audio gradient") {
  const std::vector<int> labels = {0, 3, 7, 2, 5};
  CHECK(toy_asr_loss(MatrixD::Zero(5, 8), labels) == doctest::Approx(std::log(8.0)).epsilon(1e-14));
  CHECK_THROWS_AS(toy_asr_loss(MatrixD::Zero(4, 8), labels), InvalidInput);
  CHECK_THROWS_AS(toy_asr_loss(MatrixD::Zero(5, 8), {0, 1, 2, 3, 8}), InvalidInput);

  ToyAsrConfig cfg;
  ToyAsrParams p = make_toy_asr_params(cfg);
  Rng rng(4);
  init_toy_asr(p, rng);
  const std::vector<int> two = {1, 6};
  std::vector<double> audio(2 * kTokenSamples);
  for (double& v : audio) v = rng.uniform(-0.3, 0.3);
  std::vector<double> grad;
  toy_asr_audio_loss(audio, two, p, cfg, &grad, false);
  REQUIRE(grad.size() == audio.size());
  const double h = 1e-6;
  for (std::size_t i : {std::size_t{0}, std::size_t{100}, std::size_t{2047}, std::size_t{3000},
                        std::size_t{4095}}) {
    std::vector<double> up = audio, dn = audio;
    up[i] += h;
    dn[i] -= h;
    const double fd = (toy_asr_audio_loss(up, two, p, cfg, nullptr, false) -
                       toy_asr_audio_loss(dn, two, p, cfg, nullptr, false)) / (2 * h);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("recogniser trained on clean tokens reaches 95 percent accuracy") {
  SyntheticCatalogConfig cc = small_catalog();
  cc.tokens_per_utterance = 12;
  const Catalog cat = make_synthetic_catalog(cc);
  ToyAsrConfig cfg;
  ToyAsrParams p = make_toy_asr_params(cfg);
  Rng rng(6);
  init_toy_asr(p, rng);
  Adam adam(AdamConfig{1e-2});
  for (int step = 0; step < 100; ++step) {
    p.w.zero_grad();
    p.b.zero_grad();
    for (const CatalogSpeaker& s : cat.speakers)
      for (std::size_t k = 0; k + 1 < s.utterances.size(); ++k) {
        const Utterance& u = s.utterances[k];
        const std::vector<double> a(u.audio.samples.begin(), u.audio.samples.end());
        toy_asr_audio_loss(a, u.tokens, p, cfg, nullptr, true, 1.0 / cat.speakers.size());
      }
    adam.step(p.refs());
  }
  std::vector<Waveform> audio;
  std::vector<std::vector<int>> labels;
  for (const CatalogSpeaker& s : cat.speakers) {
    audio.push_back(s.utterances.back().audio);
    labels.push_back(s.utterances.back().tokens);
  }
  CHECK(token_error_rate(p, cfg, audio, labels) <= 0.05);
}

TEST_CASE("train config validation and round trip") {
  TrainConfig c;
  c.loss_variant = LossVariant::kMse;
  c.joint = true;
  c.steps = 17;
  const TrainConfig back = train_config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"stepz", 3}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"loss_variant", "l1"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"batch_size", 0}}), ConfigError);
}

TEST_CASE("model checkpoints and scoring") {
  const auto dir = temp_dir("model");
  ModelConfig mc = small_model();
  const Model m = init_model(mc, 5);
  save_model(m, dir / "m.ckpt");
  const Model back = load_model(dir / "m.ckpt");
  const std::vector<MixtureExample> corpus = generate_corpus(catalog(), 3, 2, one_interferer());
  for (const MixtureExample& ex : corpus) {
    const Waveform a = enhance(m, ex.noisy, ex.reference_utterance);
    CHECK(a.size() == ex.noisy.size());
    CHECK(enhance(back, ex.noisy, ex.reference_utterance).samples == a.samples);
  }
  const ScoreReport unp = evaluate_unprocessed(corpus);
  REQUIRE(unp.items().size() == 3);
  CHECK(unp.items()[0].id == "ex00000");
  CHECK(unp.items()[2].id == "ex00002");
  const ScoreReport self = score_pairs({corpus[0].clean_target}, {corpus[0].clean_target}, {"a"});
  CHECK(self.items()[0].si_snr_db == doctest::Approx(60.0));
}

TEST_CASE("gate is monotone in SI-SNR") {
  Rng rng(23);
  for (int i = 0; i < 1000; ++i) {
    const double threshold = rng.uniform(-30.0, 10.0);
    const double a = rng.uniform(-40.0, 60.0), b = rng.uniform(-40.0, 60.0);
    const double lo = std::min(a, b), hi = std::max(a, b);
    if (gate_passes(-lo, threshold)) CHECK(gate_passes(-hi, threshold));
  }
}

TEST_CASE("joint training stays finite across seeds") {
  const std::vector<MixtureExample> corpus = generate_corpus(catalog(), 16, 31, one_interferer());
  ModelConfig mc = small_model();
  mc.mask.hidden = 8;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = init_model(mc, seed);
    TrainConfig cfg;
    cfg.steps = 200;
    cfg.batch_size = 1;
    cfg.seed = seed;
    cfg.joint = true;
    cfg.learning_rate = 3e-3;
    const TrainResult r = train(m, corpus, cfg);
    REQUIRE(r.log.size() == 200);
    for (const StepRecord& s : r.log) {
      CHECK(std::isfinite(s.enh_loss));
      CHECK(std::isfinite(s.asr_loss));
    }
  }
}
