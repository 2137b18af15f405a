// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Minimal dense-layer toolkit shared by the mask estimator, the embedding
// fusion network and the toy recogniser. Parameters are stored as 32-bit
// floats (the checkpoint format) and every computation runs in double.
// Row-vector convention: activations are (frames x features) and a linear
// layer computes x * W + b with W stored as (in x out).

#ifndef CONVOIFILTER_NN_H_
#define CONVOIFILTER_NN_H_

#include <string>
#include <vector>

#include "convoifilter/dsp.h"
#include "convoifilter/rng.h"

namespace cvf {

struct Param {
  std::string name;
  MatrixF value;
  MatrixD grad;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)),
        value(MatrixF::Zero(rows, cols)),
        grad(MatrixD::Zero(rows, cols)) {}

  MatrixD as_double() const { return value.cast<double>(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamRefs = std::vector<Param*>;

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = rows.
void init_uniform_fan_in(Param& p, Rng& rng);
void fill(Param& p, float v);

MatrixD linear(const MatrixD& x, const Param& w, const Param& b);
// Accumulates dW, db and returns dx.
MatrixD linear_backward(const MatrixD& x, const MatrixD& dy, Param& w, Param& b);

struct LayerNormCache {
  MatrixD xhat;
  Eigen::VectorXd inv_std;
};

inline constexpr double kLayerNormEps = 1e-6;

MatrixD layer_norm(const MatrixD& x, const Param& gamma, const Param& beta,
                   LayerNormCache* cache);
MatrixD layer_norm_backward(const MatrixD& dy, const LayerNormCache& cache,
                            Param& gamma, Param& beta);

double sigmoid(double x);
MatrixD swish(const MatrixD& x);
MatrixD swish_backward(const MatrixD& x, const MatrixD& dy);

// Inverted dropout. Returns an empty matrix (no-op) when rate is 0 or rng is
// null; otherwise a matrix of {0, 1/(1-rate)}.
MatrixD dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng);
MatrixD apply_dropout(const MatrixD& x, const MatrixD& mask);

bool all_finite(const MatrixD& x);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive moment estimation with bias correction. Moments are bound to the
// parameter order of the first step() call.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(const ParamRefs& params);
  int steps_taken() const { return t_; }

 private:
  AdamConfig config_;
  int t_ = 0;
  std::vector<MatrixD> m_;
  std::vector<MatrixD> v_;
};

}  // namespace cvf

#endif  // CONVOIFILTER_NN_H_
