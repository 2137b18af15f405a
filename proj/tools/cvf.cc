// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// cvf: corpus generation, enhancement, training, evaluation and gradient
// checks from the command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "convoifilter/errors.h"
#include "convoifilter/gradcheck.h"
#include "convoifilter/joint_tuner.h"
#include "convoifilter/metrics.h"
#include "convoifilter/mixer.h"
#include "convoifilter/model.h"
#include "convoifilter/run_config.h"
#include "convoifilter/wav_io.h"

namespace fs = std::filesystem;
using namespace cvf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Flags shared by the commands that read a run config.
struct CommonFlags {
  std::string config;
  std::optional<uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--seed", seed, "master seed (overrides the config)");
  }

  RunConfig load() const {
    RunConfig rc = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) rc.seed = *seed;
    return rc;
  }
};

std::vector<MixtureExample> load_corpus_dir(const fs::path& dir) {
  std::vector<MixtureExample> out;
  for (const CorpusEntry& e : read_corpus_manifest(dir / "manifest.jsonl"))
    out.push_back(load_corpus_example(e));
  if (out.empty()) throw InvalidInput("corpus " + dir.string() + " is empty");
  return out;
}

void print_scores(const char* label, double si, double sd) {
  std::printf("%s si_snr_db=%.4f sdr_db=%.4f\n", label, si, sd);
}

// ---------------------------------------------------------------------------

struct MixCmd {
  CommonFlags common;
  bool synthetic = false;
  std::string catalog;
  std::optional<int> n;
  std::string out;
  std::string recipes;

  void add(CLI::App& root) {
    CLI::App* c = root.add_subcommand("mix", "generate a corpus of noisy mixtures");
    common.add(c);
    c->add_flag("--synthetic", synthetic, "use synthetic speakers (default)");
    c->add_option("--catalog", catalog, "catalog manifest (JSONL)");
    c->add_option("--n", n, "number of examples");
    c->add_option("--recipes", recipes, "re-realize the recipes in this JSONL file");
    c->add_option("--out", out, "output directory")->required();
    c->get_option("--synthetic")->excludes("--catalog");
    c->callback([this] { run(); });
  }

  void run() {
    RunConfig rc = common.load();
    if (!catalog.empty()) rc.catalog_manifest = catalog;
    if (n) rc.corpus_size = *n;
    validate(rc);
    const Catalog cat = build_catalog(rc);
    std::vector<MixtureExample> examples;
    if (!recipes.empty()) {
      std::ifstream in(recipes);
      if (!in) throw IoError("cannot read " + recipes);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
          throw FormatError(recipes + ": " + e.what());
        }
        examples.push_back(realize(recipe_from_json(j), cat));
      }
    } else {
      examples = generate_corpus(cat, rc.corpus_size, rc.stream_seed(SeedStream::kTrainCorpus),
                                 rc.constraints);
    }
    write_corpus(out, examples);
    std::ofstream cfg_out(fs::path(out) / "config.json");
    cfg_out << config_to_json(rc).dump(2) << '\n';
    if (!cfg_out) throw IoError("cannot write config.json in " + out);
    std::printf("wrote %zu examples to %s\n", examples.size(), out.c_str());
  }
};

struct EnhanceCmd {
  std::string checkpoint, noisy, reference, out, oracle, clean, spectrogram;

  void add(CLI::App& root) {
    CLI::App* c = root.add_subcommand("enhance", "extract the target speaker from a mixture");
    c->add_option("--checkpoint", checkpoint, "model checkpoint");
    c->add_option("--noisy", noisy, "noisy input WAV")->required();
    c->add_option("--reference", reference, "reference utterance of the target speaker");
    c->add_option("--out", out, "enhanced output WAV")->required();
    c->add_option("--oracle", oracle, "apply the ideal ratio mask computed from this clean WAV");
    c->add_option("--clean", clean, "clean target for scoring");
    c->add_option("--spectrogram", spectrogram, "write a PNG spectrogram of the output");
    c->callback([this] { run(); });
  }

  void run() {
    const Waveform x = read_wav(noisy);
    Waveform y;
    int n_fft = 512, hop = 128;
    double chunk_s = ModelConfig{}.chunk_size_s;
    std::optional<Model> model;
    if (!checkpoint.empty()) {
      model.emplace(load_model(checkpoint));
      n_fft = model->config().mask.n_fft;
      hop = model->config().hop;
      chunk_s = model->config().chunk_size_s;
    }
    std::string score_target = clean;
    if (!oracle.empty()) {
      const Waveform s = read_wav(oracle);
      y = enhance_oracle(x, s, n_fft, hop, chunk_s);
      if (score_target.empty()) score_target = oracle;
    } else {
      if (!model) throw ConfigError("enhance needs --checkpoint unless --oracle is given");
      if (reference.empty()) throw ConfigError("enhance needs --reference");
      y = enhance(*model, x, read_wav(reference));
    }
    write_wav(out, y);
    if (!spectrogram.empty()) export_spectrogram_image(stft(y, n_fft, hop), spectrogram);
    if (!score_target.empty()) {
      const Waveform s = read_wav(score_target);
      print_scores("input", si_snr(x, s), sdr(x, s));
      print_scores("output", si_snr(y, s), sdr(y, s));
    }
  }
};

struct TrainCmd {
  CommonFlags common;
  std::string corpus, eval_corpus, out, log, init, loss, variant;
  std::optional<int> steps, batch_size, checkpoint_every;
  std::optional<double> lr, threshold;
  bool joint = false, cascade = false, no_cross = false, evaluate_after = false;

  void add(CLI::App& root) {
    CLI::App* c = root.add_subcommand("train", "train the enhancer and toy recogniser");
    common.add(c);
    c->add_option("--corpus", corpus, "corpus directory (default: synthetic, in memory)");
    c->add_option("--eval-corpus", eval_corpus, "corpus directory scored after training");
    c->add_flag("--eval", evaluate_after, "score a synthetic eval set after training");
    c->add_option("--out", out, "output checkpoint")->required();
    c->add_option("--log", log, "per-step JSONL log (default: <out>.log.jsonl)");
    c->add_option("--init", init, "start from this checkpoint");
    c->add_option("--steps", steps);
    c->add_option("--batch-size", batch_size);
    c->add_option("--lr", lr);
    c->add_option("--threshold", threshold, "gate threshold on -SI-SNR");
    c->add_option("--loss", loss, "si_snr or mse")->check(CLI::IsMember({"si_snr", "mse"}));
    c->add_option("--variant", variant, "conformer or recurrent")
        ->check(CLI::IsMember({"conformer", "recurrent"}));
    c->add_flag("--joint", joint, "joint tuning with the gated recogniser branch");
    c->add_flag("--cascade", cascade, "enhancement-only training (default)");
    c->add_flag("--no-cross-extraction", no_cross);
    c->add_option("--checkpoint-every", checkpoint_every);
    c->get_option("--joint")->excludes("--cascade");
    c->callback([this] { run(); });
  }

  void run() {
    RunConfig rc = common.load();
    if (steps) rc.train.steps = *steps;
    if (batch_size) rc.train.batch_size = *batch_size;
    if (lr) rc.train.learning_rate = *lr;
    if (threshold) rc.train.threshold_db = *threshold;
    if (!loss.empty()) rc.train.loss_variant = loss == "mse" ? LossVariant::kMse : LossVariant::kSiSnr;
    if (joint) rc.train.joint = true;
    if (cascade) rc.train.joint = false;
    if (!variant.empty())
      rc.model.mask.variant = variant == "recurrent" ? MaskVariant::kRecurrent : MaskVariant::kConformer;
    if (no_cross) rc.model.cross_extraction = false;
    validate(rc);
    rc.train.seed = rc.stream_seed(SeedStream::kTraining);

    std::vector<MixtureExample> train_set;
    std::optional<Catalog> cat;
    if (!corpus.empty()) {
      train_set = load_corpus_dir(corpus);
    } else {
      cat.emplace(build_catalog(rc));
      train_set = generate_corpus(*cat, rc.corpus_size, rc.stream_seed(SeedStream::kTrainCorpus),
                                  rc.constraints);
    }
    Model model = init.empty() ? init_model(rc.model, rc.stream_seed(SeedStream::kModelInit))
                               : load_model(init);
    const std::string log_path = log.empty() ? out + ".log.jsonl" : log;
    std::ofstream log_out(log_path);
    if (!log_out) throw IoError("cannot write " + log_path);
    const CheckpointHook hook = [this](int step, const Model& m) {
      save_model(m, out + ".step" + std::to_string(step + 1));
    };
    train(model, train_set, rc.train, &log_out, hook, checkpoint_every.value_or(0));
    save_model(model, out);
    std::printf("saved %s after %d steps\n", out.c_str(), rc.train.steps);

    std::vector<MixtureExample> eval_set;
    if (!eval_corpus.empty()) {
      eval_set = load_corpus_dir(eval_corpus);
    } else if (evaluate_after) {
      if (!cat) cat.emplace(build_catalog(rc));
      eval_set = generate_corpus(*cat, rc.eval_size, rc.stream_seed(SeedStream::kEvalCorpus),
                                 rc.constraints);
    }
    if (!eval_set.empty()) {
      const ScoreReport before = evaluate_unprocessed(eval_set);
      const ScoreReport after = evaluate(model, eval_set);
      print_scores("unprocessed", before.si_snr_db(), before.sdr_db());
      print_scores("enhanced", after.si_snr_db(), after.sdr_db());
    }
  }
};

struct EvalCmd {
  std::string checkpoint, manifest, out;
  bool unprocessed = false, tokens = false;

  void add(CLI::App& root) {
    CLI::App* c = root.add_subcommand("eval", "score a corpus");
    c->add_option("--checkpoint", checkpoint, "model checkpoint");
    c->add_option("--manifest", manifest, "corpus manifest.jsonl")->required();
    c->add_option("--out", out, "report JSONL (default: stdout)");
    c->add_flag("--unprocessed", unprocessed, "score the noisy input itself");
    c->add_flag("--tokens", tokens, "also print the recogniser token error rate");
    c->callback([this] { run(); });
  }

  void run() {
    if (!unprocessed && checkpoint.empty())
      throw ConfigError("eval needs --checkpoint unless --unprocessed is given");
    std::vector<MixtureExample> examples;
    std::vector<std::string> ids;
    for (const CorpusEntry& e : read_corpus_manifest(manifest)) {
      examples.push_back(load_corpus_example(e));
      ids.push_back(e.id);
    }
    std::optional<Model> model;
    if (!checkpoint.empty()) model.emplace(load_model(checkpoint));
    std::vector<Waveform> est, tgt;
    for (const MixtureExample& ex : examples) {
      est.push_back(unprocessed ? ex.noisy : enhance(*model, ex.noisy, ex.reference_utterance));
      tgt.push_back(ex.clean_target);
    }
    const ScoreReport report = score_pairs(est, tgt, ids);
    if (out.empty()) {
      report.write_jsonl(std::cout);
    } else {
      std::ofstream f(out);
      if (!f) throw IoError("cannot write " + out);
      report.write_jsonl(f);
      print_scores("aggregate", report.si_snr_db(), report.sdr_db());
    }
    if (tokens && model) {
      std::vector<std::vector<int>> labels;
      for (const MixtureExample& ex : examples) labels.push_back(ex.tokens);
      std::printf("token_error_rate=%.4f\n",
                  token_error_rate(model->asr(), model->config().asr, est, labels));
    }
  }
};

struct GradcheckCmd {
  uint64_t seed = 3;
  double step = 1e-3, tol = 1e-3;
  bool verbose = false;
  bool failed = false;

  void add(CLI::App& root) {
    CLI::App* c = root.add_subcommand("gradcheck", "finite-difference gradient check");
    c->add_option("--seed", seed);
    c->add_option("--step", step);
    c->add_option("--tol", tol);
    c->add_flag("-v,--verbose", verbose, "print every tensor");
    c->callback([this] { run(); });
  }

  void run() {
    const GradcheckReport r = run_gradcheck(seed, {step, tol});
    for (const GradcheckEntry& e : r.entries)
      if (verbose || !e.passed)
        std::printf("%-4s %-18s %-26s n=%-5d rel_err=%.3e\n", e.passed ? "ok" : "FAIL",
                    e.suite.c_str(), e.tensor.c_str(), e.size, e.rel_error);
    std::printf("gradcheck: %zu tensors, max rel_err %.3e, %s\n", r.entries.size(),
                r.max_rel_error(), r.passed() ? "PASS" : "FAIL");
    failed = !r.passed();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("ConVoiFilter target-speaker extraction toolkit", "cvf");
  app.require_subcommand(1);
  MixCmd mix;
  EnhanceCmd enh;
  TrainCmd trn;
  EvalCmd evl;
  GradcheckCmd grad;
  mix.add(app);
  enh.add(app);
  trn.add(app);
  evl.add(app);
  grad.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "cvf: configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "cvf: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "cvf: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "cvf: " << e.what() << '\n';
    return kExitData;
  }
  return grad.failed ? kExitNumeric : kExitOk;
}
