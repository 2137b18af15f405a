// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/run_config.h"

#include <cmath>
#include <fstream>

#include "convoifilter/errors.h"

namespace cvf {

void validate(const RunConfig& c) {
  if (c.corpus_size < 1) throw ConfigError("corpus_size must be >= 1");
  if (c.eval_size < 1) throw ConfigError("eval_size must be >= 1");
  const RecipeConstraints& k = c.constraints;
  if (k.min_interferers < 0 || k.max_interferers > 3 || k.min_interferers > k.max_interferers)
    throw ConfigError("interferer bounds must satisfy 0 <= min <= max <= 3");
  if (!(k.p_noise >= 0.0 && k.p_noise <= 1.0) || !(k.p_rir >= 0.0 && k.p_rir <= 1.0))
    throw ConfigError("probabilities must lie in [0, 1]");
  if (!(k.snr_min_db <= k.snr_max_db) || !std::isfinite(k.snr_min_db) ||
      !std::isfinite(k.snr_max_db))
    throw ConfigError("snr range must be finite with min <= max");
  validate(c.model);
  validate(c.train);
}

nlohmann::ordered_json constraints_to_json(const RecipeConstraints& c) {
  nlohmann::ordered_json j;
  j["min_interferers"] = c.min_interferers;
  j["max_interferers"] = c.max_interferers;
  j["p_noise"] = c.p_noise;
  j["p_rir"] = c.p_rir;
  j["snr_min_db"] = c.snr_min_db;
  j["snr_max_db"] = c.snr_max_db;
  return j;
}

RecipeConstraints constraints_from_json(const nlohmann::json& j) {
  RecipeConstraints c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "min_interferers") {
        c.min_interferers = value.get<int>();
      } else if (key == "max_interferers") {
        c.max_interferers = value.get<int>();
      } else if (key == "p_noise") {
        c.p_noise = value.get<double>();
      } else if (key == "p_rir") {
        c.p_rir = value.get<double>();
      } else if (key == "snr_min_db") {
        c.snr_min_db = value.get<double>();
      } else if (key == "snr_max_db") {
        c.snr_max_db = value.get<double>();
      } else {
        throw ConfigError("constraints: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("constraints: " + key + ": " + e.what());
    }
  }
  return c;
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["catalog"] = synthetic_config_to_json(c.catalog);
  if (c.catalog_manifest) j["catalog_manifest"] = c.catalog_manifest->string();
  j["constraints"] = constraints_to_json(c.constraints);
  j["corpus_size"] = c.corpus_size;
  j["eval_size"] = c.eval_size;
  j["model"] = config_to_json(c.model);
  nlohmann::ordered_json t = config_to_json(c.train);
  t.erase("seed");
  j["train"] = t;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "seed") {
        c.seed = value.get<uint64_t>();
      } else if (key == "catalog") {
        c.catalog = synthetic_config_from_json(value);
      } else if (key == "catalog_manifest") {
        c.catalog_manifest = value.get<std::string>();
      } else if (key == "constraints") {
        c.constraints = constraints_from_json(value);
      } else if (key == "corpus_size") {
        c.corpus_size = value.get<int>();
      } else if (key == "eval_size") {
        c.eval_size = value.get<int>();
      } else if (key == "model") {
        c.model = model_config_from_json(value);
      } else if (key == "train") {
        if (value.contains("seed"))
          throw ConfigError("train: the seed comes from the top-level \"seed\"");
        c.train = train_config_from_json(value);
      } else {
        throw ConfigError("run config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("run config: " + key + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

Catalog build_catalog(const RunConfig& cfg) {
  if (cfg.catalog_manifest) return load_catalog_manifest(*cfg.catalog_manifest);
  return make_synthetic_catalog(cfg.catalog);
}

}  // namespace cvf
