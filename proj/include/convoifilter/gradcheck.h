// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Central finite-difference check of the full training loss (mask net,
// fusion network and toy recogniser) against the analytic gradients.
// For each tensor the error is |g_fd - g|_2 / max(|g_fd|_2, |g|_2, floor);
// the floor only matters for tensors whose true gradient is zero (the key
// bias, to which softmax is invariant).

#ifndef CONVOIFILTER_GRADCHECK_H_
#define CONVOIFILTER_GRADCHECK_H_

#include <cstdint>
#include <string>
#include <vector>

#include "convoifilter/joint_tuner.h"

namespace cvf {

struct GradcheckEntry {
  std::string suite;
  std::string tensor;
  int size = 0;
  double rel_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  bool passed() const;
  double max_rel_error() const;
};

inline constexpr double kGradNormFloor = 1e-6;

struct GradcheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
};

// Tiny framing used by the check: n_fft 16, hop 4, 20-sample chunks (6
// frames each), hidden 8, 2 heads, 2 blocks, d_emb 4.
ModelConfig tiny_model_config(MaskVariant variant);
// 40-sample example with 5 token labels.
MixtureExample tiny_example(uint64_t seed);
ExampleEmbeddings random_embeddings(int d_emb, uint64_t seed);

GradcheckReport check_model_gradients(Model& model, const MixtureExample& ex,
                                      const ExampleEmbeddings& emb,
                                      const TrainConfig& cfg, const std::string& suite,
                                      const GradcheckOptions& opt = {});

// Runs the conformer (SI-SNR and MSE losses) and recurrent suites. The mask
// head bias is set to alternate +-4 so no head unit sits within a finite
// difference step of the ReLU corner.
GradcheckReport run_gradcheck(uint64_t seed, const GradcheckOptions& opt = {});

}  // namespace cvf

#endif  // CONVOIFILTER_GRADCHECK_H_
