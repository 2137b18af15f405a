// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Command-line run configuration. A JSON file with any subset of
//
//   {
//     "seed": 1,
//     "catalog": { synthetic catalog fields },
//     "catalog_manifest": "path/to/catalog.jsonl",
//     "constraints": { "min_interferers", "max_interferers", "p_noise",
//                      "p_rir", "snr_min_db", "snr_max_db" },
//     "corpus_size": 100,
//     "eval_size": 32,
//     "model": { "mask_net": {...}, "asr": {...}, "hop",
//                "cross_extraction", "chunk_size_s" },
//     "train": { "threshold_db", "learning_rate", "steps", "batch_size",
//                "loss_variant", "joint", "dropout", "log_wall_time" }
//   }
//
// Unknown keys are errors. Command-line flags are applied after the file and
// win over it. Per-component seeds are derived from "seed".

#ifndef CONVOIFILTER_RUN_CONFIG_H_
#define CONVOIFILTER_RUN_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <optional>

#include "convoifilter/joint_tuner.h"
#include "convoifilter/mixer.h"
#include "convoifilter/model.h"
#include "json.hpp"

namespace cvf {

enum class SeedStream : uint64_t {
  kTrainCorpus = 1,
  kEvalCorpus = 2,
  kModelInit = 3,
  kTraining = 4,
};

struct RunConfig {
  uint64_t seed = 1;
  SyntheticCatalogConfig catalog;
  std::optional<std::filesystem::path> catalog_manifest;
  RecipeConstraints constraints;
  int corpus_size = 100;
  int eval_size = 32;
  ModelConfig model;
  TrainConfig train;

  uint64_t stream_seed(SeedStream s) const {
    return derive_seed(seed, static_cast<uint64_t>(s));
  }
};

void validate(const RunConfig& cfg);
nlohmann::ordered_json config_to_json(const RunConfig& cfg);
nlohmann::ordered_json constraints_to_json(const RecipeConstraints& c);
RecipeConstraints constraints_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);
// Throws IoError when unreadable and ConfigError on bad content.
RunConfig load_run_config(const std::filesystem::path& path);

// Catalog named by the config: the manifest when given, otherwise synthetic.
Catalog build_catalog(const RunConfig& cfg);

}  // namespace cvf

#endif  // CONVOIFILTER_RUN_CONFIG_H_
