// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/model.h"

#include <cmath>

#include "convoifilter/checkpoint.h"
#include "convoifilter/errors.h"

namespace cvf {

void validate(const ModelConfig& c) {
  validate(c.mask);
  validate(c.asr);
  if (c.hop <= 0 || c.hop > c.mask.n_fft) throw ConfigError("hop must lie in (0, n_fft]");
  if (!(c.chunk_size_s > 0.0) || !std::isfinite(c.chunk_size_s))
    throw ConfigError("chunk_size_s must be positive");
}

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["mask_net"] = config_to_json(c.mask);
  j["asr"] = config_to_json(c.asr);
  j["hop"] = c.hop;
  j["cross_extraction"] = c.cross_extraction;
  j["chunk_size_s"] = c.chunk_size_s;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "mask_net") {
        c.mask = mask_config_from_json(value);
      } else if (key == "asr") {
        c.asr = asr_config_from_json(value);
      } else if (key == "hop") {
        c.hop = value.get<int>();
      } else if (key == "cross_extraction") {
        c.cross_extraction = value.get<bool>();
      } else if (key == "chunk_size_s") {
        c.chunk_size_s = value.get<double>();
      } else {
        throw ConfigError("model config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model config: " + key + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

Model::Model(ModelConfig cfg, MaskNet mask, FusionParams fusion, ToyAsrParams asr)
    : cfg_(std::move(cfg)), mask_(std::move(mask)), fusion_(std::move(fusion)),
      asr_(std::move(asr)) {
  validate(cfg_);
  if (fusion_.d_emb() != cfg_.mask.d_emb)
    throw InvalidInput("fusion width does not match the mask-net embedding width");
  if (asr_.w.value.rows() != cfg_.asr.bins() || asr_.w.value.cols() != cfg_.asr.n_tokens)
    throw InvalidInput("recogniser parameters do not match the config");
}

ParamRefs Model::trainable() {
  ParamRefs out = mask_.params().refs();
  if (cfg_.cross_extraction)
    for (Param* p : fusion_.refs()) out.push_back(p);
  for (Param* p : asr_.refs()) out.push_back(p);
  return out;
}

void Model::zero_grad() {
  for (Param* p : mask_.params().refs()) p->zero_grad();
  for (Param* p : fusion_.refs()) p->zero_grad();
  for (Param* p : asr_.refs()) p->zero_grad();
}

Model init_model(const ModelConfig& cfg, uint64_t seed) {
  validate(cfg);
  MaskNet mask(cfg.mask, init_params(cfg.mask, derive_seed(seed, 0)));
  FusionParams fusion = make_fusion_params(cfg.mask.d_emb);
  Rng fusion_rng(derive_seed(seed, 1));
  init_fusion(fusion, fusion_rng);
  ToyAsrParams asr = make_toy_asr_params(cfg.asr);
  Rng asr_rng(derive_seed(seed, 2));
  init_toy_asr(asr, asr_rng);
  return Model(cfg, std::move(mask), std::move(fusion), std::move(asr));
}

void save_model(const Model& m, const std::filesystem::path& path) {
  CheckpointData data;
  data.config["kind"] = "convoifilter";
  const nlohmann::ordered_json cfg = config_to_json(m.config());
  for (const auto& [k, v] : cfg.items()) data.config[k] = v;
  append_tensors(data, m.mask().params().refs());
  append_tensors(data, {&m.fusion().w1, &m.fusion().b1, &m.fusion().w2, &m.fusion().b2});
  append_tensors(data, m.asr().refs());
  write_checkpoint_file(path, data);
}

Model load_model(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint_file(path);
  if (data.config.value("kind", std::string()) != "convoifilter")
    throw FormatError(path.string() + ": not a full model checkpoint");
  nlohmann::json cfg_json = data.config;
  cfg_json.erase("kind");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(cfg_json);
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  MaskNetParams mp = make_mask_params(cfg.mask);
  FusionParams fusion = make_fusion_params(cfg.mask.d_emb);
  ToyAsrParams asr = make_toy_asr_params(cfg.asr);
  ParamRefs all = mp.refs();
  for (Param* p : fusion.refs()) all.push_back(p);
  for (Param* p : asr.refs()) all.push_back(p);
  assign_tensors(data, all);
  return Model(cfg, MaskNet(cfg.mask, std::move(mp)), std::move(fusion), std::move(asr));
}

}  // namespace cvf
