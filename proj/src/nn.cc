// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/nn.h"

#include <cmath>

#include "convoifilter/errors.h"

namespace cvf {

void init_uniform_fan_in(Param& p, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
}

void fill(Param& p, float v) { p.value.setConstant(v); }

MatrixD linear(const MatrixD& x, const Param& w, const Param& b) {
  MatrixD y = x * w.as_double();
  y.rowwise() += b.value.row(0).cast<double>();
  return y;
}

MatrixD linear_backward(const MatrixD& x, const MatrixD& dy, Param& w, Param& b) {
  w.grad.noalias() += x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  return dy * w.as_double().transpose();
}

MatrixD layer_norm(const MatrixD& x, const Param& gamma, const Param& beta,
                   LayerNormCache* cache) {
  const Eigen::Index rows = x.rows(), d = x.cols();
  MatrixD xhat(rows, d);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  const Eigen::RowVectorXd g = gamma.value.row(0).cast<double>();
  const Eigen::RowVectorXd b = beta.value.row(0).cast<double>();
  MatrixD y = xhat.array().rowwise() * g.array();
  y.rowwise() += b;
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

MatrixD layer_norm_backward(const MatrixD& dy, const LayerNormCache& cache,
                            Param& gamma, Param& beta) {
  const MatrixD& xhat = cache.xhat;
  gamma.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  const Eigen::RowVectorXd g = gamma.value.row(0).cast<double>();
  const MatrixD dxhat = dy.array().rowwise() * g.array();
  MatrixD dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

MatrixD swish(const MatrixD& x) {
  return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

MatrixD swish_backward(const MatrixD& x, const MatrixD& dy) {
  return dy.binaryExpr(x, [](double g, double v) {
    const double s = sigmoid(v);
    return g * s * (1.0 + v * (1.0 - s));
  });
}

MatrixD dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return MatrixD();
  const double keep = 1.0 / (1.0 - rate);
  MatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = rng->uniform() < rate ? 0.0 : keep;
  return m;
}

MatrixD apply_dropout(const MatrixD& x, const MatrixD& mask) {
  if (mask.size() == 0) return x;
  return x.cwiseProduct(mask);
}

bool all_finite(const MatrixD& x) { return x.allFinite(); }

void Adam::step(const ParamRefs& params) {
  if (m_.empty()) {
    for (const Param* p : params) {
      m_.push_back(MatrixD::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(MatrixD::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw StateError("Adam: parameter set changed");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, t_);
  const double c2 = 1.0 - std::pow(config_.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double mhat = m_[i].data()[k] / c1;
      const double vhat = v_[i].data()[k] / c2;
      p.value.data()[k] = static_cast<float>(
          p.value.data()[k] - config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon));
    }
  }
}

}  // namespace cvf
