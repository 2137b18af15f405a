// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Everything a trained system needs at inference and during joint tuning:
// mask estimator, fusion network, toy recogniser and the framing settings.

#ifndef CONVOIFILTER_MODEL_H_
#define CONVOIFILTER_MODEL_H_

#include <cstdint>
#include <filesystem>

#include "convoifilter/mask_net.h"
#include "convoifilter/speaker_encoder.h"
#include "convoifilter/toy_asr.h"
#include "json.hpp"

namespace cvf {

struct ModelConfig {
  MaskNetConfig mask;
  ToyAsrConfig asr;
  int hop = 128;
  bool cross_extraction = true;
  double chunk_size_s = 0.512;
};

void validate(const ModelConfig& cfg);
nlohmann::ordered_json config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

class Model {
 public:
  Model(ModelConfig cfg, MaskNet mask, FusionParams fusion, ToyAsrParams asr);

  const ModelConfig& config() const { return cfg_; }
  MaskNet& mask() { return mask_; }
  const MaskNet& mask() const { return mask_; }
  FusionParams& fusion() { return fusion_; }
  const FusionParams& fusion() const { return fusion_; }
  ToyAsrParams& asr() { return asr_; }
  const ToyAsrParams& asr() const { return asr_; }

  // Parameters updated by the optimiser. The fusion network is included only
  // with cross-extraction on.
  ParamRefs trainable();
  void zero_grad();

 private:
  ModelConfig cfg_;
  MaskNet mask_;
  FusionParams fusion_;
  ToyAsrParams asr_;
};

Model init_model(const ModelConfig& cfg, uint64_t seed);

// Same container as the mask-net checkpoint, with extra "fusion." and "asr."
// tensors and the full model config.
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace cvf

#endif  // CONVOIFILTER_MODEL_H_
