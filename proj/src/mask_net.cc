// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/mask_net.h"

#include <algorithm>
#include <cmath>

#include "convoifilter/checkpoint.h"
#include "convoifilter/errors.h"

namespace cvf {

// ---------------------------------------------------------------------------
// Configuration

void validate(const MaskNetConfig& c) {
  if (c.n_blocks < 0) throw ConfigError("n_blocks must be >= 0");
  if (c.hidden <= 0) throw ConfigError("hidden must be positive");
  if (c.n_heads <= 0 || c.hidden % c.n_heads != 0)
    throw ConfigError("n_heads must divide hidden");
  if (c.conv_kernel <= 0 || c.conv_kernel % 2 == 0)
    throw ConfigError("conv_kernel must be odd and positive");
  if (c.d_emb <= 0) throw ConfigError("d_emb must be positive");
  if (c.n_fft <= 0 || c.n_fft % 2 != 0) throw ConfigError("n_fft must be even");
  if (c.ffn_expansion <= 0) throw ConfigError("ffn_expansion must be positive");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0))
    throw ConfigError("dropout_rate must lie in [0, 1)");
  if (c.variant == MaskVariant::kRecurrent && c.hidden % 2 != 0)
    throw ConfigError("recurrent variant needs an even hidden size");
}

nlohmann::ordered_json config_to_json(const MaskNetConfig& c) {
  nlohmann::ordered_json j;
  j["n_blocks"] = c.n_blocks;
  j["hidden"] = c.hidden;
  j["n_heads"] = c.n_heads;
  j["conv_kernel"] = c.conv_kernel;
  j["d_emb"] = c.d_emb;
  j["n_fft"] = c.n_fft;
  j["ffn_expansion"] = c.ffn_expansion;
  j["dropout_rate"] = c.dropout_rate;
  j["positional_encoding"] = c.positional_encoding;
  j["variant"] = c.variant == MaskVariant::kConformer ? "conformer" : "recurrent";
  return j;
}

MaskNetConfig mask_config_from_json(const nlohmann::json& j) {
  static const char* kKeys[] = {"n_blocks", "hidden", "n_heads", "conv_kernel",
                                "d_emb", "n_fft", "ffn_expansion", "dropout_rate",
                                "positional_encoding", "variant"};
  for (const auto& [key, _] : j.items())
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
      throw ConfigError("model config: unknown key '" + key + "'");
  MaskNetConfig c;
  try {
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.hidden = j.value("hidden", c.hidden);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
    c.d_emb = j.value("d_emb", c.d_emb);
    c.n_fft = j.value("n_fft", c.n_fft);
    c.ffn_expansion = j.value("ffn_expansion", c.ffn_expansion);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.positional_encoding = j.value("positional_encoding", c.positional_encoding);
    const std::string v = j.value("variant", std::string("conformer"));
    if (v == "conformer") {
      c.variant = MaskVariant::kConformer;
    } else if (v == "recurrent") {
      c.variant = MaskVariant::kRecurrent;
    } else {
      throw ConfigError("model config: unknown variant '" + v + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  validate(c);
  return c;
}

FeatureMatrix build_features(const MatrixD& magnitude, const SpeakerEmbedding& e) {
  FeatureMatrix g(magnitude.rows(), magnitude.cols() + e.dim());
  g.leftCols(magnitude.cols()) = magnitude;
  g.rightCols(e.dim()).rowwise() = e.values;
  return g;
}

FeatureMatrix build_features(const Stft& s, const SpeakerEmbedding& e) {
  return build_features(MatrixD(s.magnitude.cast<double>()), e);
}

FeatureMatrix build_features(const Stft& s, const SpeakerEmbedding& e,
                             const MaskNetConfig& cfg) {
  if (s.bins() != cfg.bins())
    throw InvalidInput("features: spectrogram has " + std::to_string(s.bins()) +
                       " bins, expected " + std::to_string(cfg.bins()));
  if (e.dim() != cfg.d_emb)
    throw InvalidInput("features: embedding has " + std::to_string(e.dim()) +
                       " dims, expected " + std::to_string(cfg.d_emb));
  return build_features(s, e);
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <typename F>
void visit_ffn(FfnParams& p, F&& f) {
  f(p.ln_g); f(p.ln_b); f(p.w1); f(p.b1); f(p.w2); f(p.b2);
}
template <typename F>
void visit_att(AttentionParams& p, F&& f) {
  f(p.ln_g); f(p.ln_b); f(p.wq); f(p.bq); f(p.wk); f(p.bk);
  f(p.wv); f(p.bv); f(p.wo); f(p.bo);
}
template <typename F>
void visit_conv(ConvModuleParams& p, F&& f) {
  f(p.ln_g); f(p.ln_b); f(p.pw1_w); f(p.pw1_b); f(p.dw_w); f(p.dw_b);
  f(p.norm_g); f(p.norm_b); f(p.pw2_w); f(p.pw2_b);
}
template <typename F>
void visit_lstm(LstmDirectionParams& p, F&& f) {
  f(p.w_ih); f(p.w_hh); f(p.b);
}
template <typename F>
void visit_all(MaskNetParams& p, F&& f) {
  f(p.in_w); f(p.in_b);
  for (auto& b : p.blocks) {
    visit_ffn(b.ffn1, f);
    visit_att(b.att, f);
    visit_conv(b.conv, f);
    visit_ffn(b.ffn2, f);
    f(b.final_g); f(b.final_b);
  }
  for (auto& l : p.layers) {
    visit_lstm(l.fwd, f);
    visit_lstm(l.bwd, f);
  }
  f(p.head_w); f(p.head_b);
}

FfnParams make_ffn(const std::string& pre, int d, int inner) {
  FfnParams p;
  p.ln_g = Param(pre + ".ln_g", 1, d);
  p.ln_b = Param(pre + ".ln_b", 1, d);
  p.w1 = Param(pre + ".w1", d, inner);
  p.b1 = Param(pre + ".b1", 1, inner);
  p.w2 = Param(pre + ".w2", inner, d);
  p.b2 = Param(pre + ".b2", 1, d);
  fill(p.ln_g, 1.0f);
  return p;
}

std::string leaf(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(dot + 1);
}
bool is_layer_norm_scale(const std::string& name) {
  const std::string l = leaf(name);
  return l == "ln_g" || l == "norm_g" || l == "final_g";
}
bool is_bias(const std::string& name) {
  const std::string l = leaf(name);
  return l.front() == 'b' || l.ends_with("_b");
}

}  // namespace

ParamRefs MaskNetParams::refs() {
  ParamRefs out;
  visit_all(*this, [&](Param& p) { out.push_back(&p); });
  return out;
}

std::vector<const Param*> MaskNetParams::refs() const {
  std::vector<const Param*> out;
  visit_all(const_cast<MaskNetParams&>(*this), [&](Param& p) { out.push_back(&p); });
  return out;
}

MaskNetParams make_mask_params(const MaskNetConfig& cfg) {
  validate(cfg);
  const int d = cfg.hidden;
  MaskNetParams p;
  p.in_w = Param("in.w", cfg.input_dim(), d);
  p.in_b = Param("in.b", 1, d);
  if (cfg.variant == MaskVariant::kConformer) {
    for (int i = 0; i < cfg.n_blocks; ++i) {
      const std::string pre = "block" + std::to_string(i);
      ConformerBlockParams b;
      b.ffn1 = make_ffn(pre + ".ffn1", d, d * cfg.ffn_expansion);
      b.att.ln_g = Param(pre + ".att.ln_g", 1, d);
      b.att.ln_b = Param(pre + ".att.ln_b", 1, d);
      b.att.wq = Param(pre + ".att.wq", d, d);
      b.att.bq = Param(pre + ".att.bq", 1, d);
      b.att.wk = Param(pre + ".att.wk", d, d);
      b.att.bk = Param(pre + ".att.bk", 1, d);
      b.att.wv = Param(pre + ".att.wv", d, d);
      b.att.bv = Param(pre + ".att.bv", 1, d);
      b.att.wo = Param(pre + ".att.wo", d, d);
      b.att.bo = Param(pre + ".att.bo", 1, d);
      fill(b.att.ln_g, 1.0f);
      b.conv.ln_g = Param(pre + ".conv.ln_g", 1, d);
      b.conv.ln_b = Param(pre + ".conv.ln_b", 1, d);
      b.conv.pw1_w = Param(pre + ".conv.pw1_w", d, 2 * d);
      b.conv.pw1_b = Param(pre + ".conv.pw1_b", 1, 2 * d);
      b.conv.dw_w = Param(pre + ".conv.dw_w", cfg.conv_kernel, d);
      b.conv.dw_b = Param(pre + ".conv.dw_b", 1, d);
      b.conv.norm_g = Param(pre + ".conv.norm_g", 1, d);
      b.conv.norm_b = Param(pre + ".conv.norm_b", 1, d);
      b.conv.pw2_w = Param(pre + ".conv.pw2_w", d, d);
      b.conv.pw2_b = Param(pre + ".conv.pw2_b", 1, d);
      fill(b.conv.ln_g, 1.0f);
      fill(b.conv.norm_g, 1.0f);
      b.ffn2 = make_ffn(pre + ".ffn2", d, d * cfg.ffn_expansion);
      b.final_g = Param(pre + ".final_g", 1, d);
      b.final_b = Param(pre + ".final_b", 1, d);
      fill(b.final_g, 1.0f);
      p.blocks.push_back(std::move(b));
    }
  } else {
    const int h = d / 2;
    for (int i = 0; i < cfg.n_blocks; ++i) {
      const std::string pre = "rnn" + std::to_string(i);
      RecurrentLayerParams l;
      for (auto* dir : {&l.fwd, &l.bwd}) {
        const std::string dp = pre + (dir == &l.fwd ? ".fwd" : ".bwd");
        dir->w_ih = Param(dp + ".w_ih", d, 4 * h);
        dir->w_hh = Param(dp + ".w_hh", h, 4 * h);
        dir->b = Param(dp + ".b", 1, 4 * h);
      }
      p.layers.push_back(std::move(l));
    }
  }
  p.head_w = Param("head.w", d, cfg.bins());
  p.head_b = Param("head.b", 1, cfg.bins());
  return p;
}

MaskNetParams init_params(const MaskNetConfig& cfg, uint64_t seed) {
  MaskNetParams p = make_mask_params(cfg);
  Rng rng(seed);
  for (Param* q : p.refs()) {
    if (is_layer_norm_scale(q->name)) {
      fill(*q, 1.0f);
    } else if (is_bias(q->name)) {
      fill(*q, 0.0f);
    } else {
      init_uniform_fan_in(*q, rng);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward building blocks

namespace {

struct FfnCache {
  LayerNormCache ln;
  MatrixD h0, a, sd, m1, m2;
};

struct AttCache {
  LayerNormCache ln;
  MatrixD h, q, k, v, o, drop;
  std::vector<MatrixD> attn;
};

struct ConvCache {
  LayerNormCache ln, norm;
  MatrixD h, pa, sig_b, g, c, s, drop;
};

struct BlockCache {
  FfnCache ffn1, ffn2;
  AttCache att;
  ConvCache conv;
  LayerNormCache final_ln;
};

struct LstmCache {
  MatrixD x, gates, c, tc, h;
};

struct LayerCache {
  LstmCache fwd, bwd;
};

}  // namespace

struct MaskNetCache::Impl {
  MatrixD g_hat;
  std::vector<BlockCache> blocks;
  std::vector<LayerCache> layers;
  MatrixD head_in, head_pre;
};

MaskNetCache::MaskNetCache() = default;
MaskNetCache::~MaskNetCache() = default;
MaskNetCache::MaskNetCache(MaskNetCache&&) noexcept = default;
MaskNetCache& MaskNetCache::operator=(MaskNetCache&&) noexcept = default;

namespace {

MatrixD ffn_forward(const FfnParams& p, const MatrixD& x, double rate, Rng* rng,
                    FfnCache* c) {
  FfnCache local;
  FfnCache& k = c ? *c : local;
  k.h0 = layer_norm(x, p.ln_g, p.ln_b, &k.ln);
  k.a = linear(k.h0, p.w1, p.b1);
  MatrixD s = swish(k.a);
  k.m1 = dropout_mask(s.rows(), s.cols(), rate, rng);
  k.sd = apply_dropout(s, k.m1);
  MatrixD o = linear(k.sd, p.w2, p.b2);
  k.m2 = dropout_mask(o.rows(), o.cols(), rate, rng);
  return apply_dropout(o, k.m2);
}

MatrixD ffn_backward(FfnParams& p, const MatrixD& d_out, const FfnCache& k) {
  const MatrixD d_o = apply_dropout(d_out, k.m2);
  const MatrixD d_sd = linear_backward(k.sd, d_o, p.w2, p.b2);
  const MatrixD d_s = apply_dropout(d_sd, k.m1);
  const MatrixD d_a = swish_backward(k.a, d_s);
  const MatrixD d_h0 = linear_backward(k.h0, d_a, p.w1, p.b1);
  return layer_norm_backward(d_h0, k.ln, p.ln_g, p.ln_b);
}

void softmax_rows(MatrixD& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

MatrixD attention_forward(const AttentionParams& p, const MatrixD& x, int heads,
                          double rate, Rng* rng, AttCache* c) {
  AttCache local;
  AttCache& k = c ? *c : local;
  const int d = static_cast<int>(x.cols());
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  k.h = layer_norm(x, p.ln_g, p.ln_b, &k.ln);
  k.q = linear(k.h, p.wq, p.bq);
  k.k = linear(k.h, p.wk, p.bk);
  k.v = linear(k.h, p.wv, p.bv);
  k.o.resize(x.rows(), d);
  k.attn.resize(heads);
  for (int hd = 0; hd < heads; ++hd) {
    MatrixD s = (k.q.middleCols(hd * dk, dk) * k.k.middleCols(hd * dk, dk).transpose()) * scale;
    softmax_rows(s);
    k.o.middleCols(hd * dk, dk).noalias() = s * k.v.middleCols(hd * dk, dk);
    k.attn[hd] = std::move(s);
  }
  MatrixD out = linear(k.o, p.wo, p.bo);
  k.drop = dropout_mask(out.rows(), out.cols(), rate, rng);
  return apply_dropout(out, k.drop);
}

MatrixD attention_backward(AttentionParams& p, const MatrixD& d_out, int heads,
                           const AttCache& k) {
  const int d = static_cast<int>(k.o.cols());
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const MatrixD d_o = linear_backward(k.o, apply_dropout(d_out, k.drop), p.wo, p.bo);
  MatrixD dq(k.q.rows(), d), dkm(k.k.rows(), d), dv(k.v.rows(), d);
  for (int hd = 0; hd < heads; ++hd) {
    const MatrixD& a = k.attn[hd];
    const auto doh = d_o.middleCols(hd * dk, dk);
    const MatrixD da = doh * k.v.middleCols(hd * dk, dk).transpose();
    dv.middleCols(hd * dk, dk).noalias() = a.transpose() * doh;
    MatrixD ds = a.cwiseProduct(da);
    const Eigen::VectorXd rs = ds.rowwise().sum();
    ds -= a.cwiseProduct(rs.replicate(1, a.cols()));
    dq.middleCols(hd * dk, dk).noalias() = ds * k.k.middleCols(hd * dk, dk) * scale;
    dkm.middleCols(hd * dk, dk).noalias() = ds.transpose() * k.q.middleCols(hd * dk, dk) * scale;
  }
  MatrixD dh = linear_backward(k.h, dq, p.wq, p.bq);
  dh += linear_backward(k.h, dkm, p.wk, p.bk);
  dh += linear_backward(k.h, dv, p.wv, p.bv);
  return layer_norm_backward(dh, k.ln, p.ln_g, p.ln_b);
}

MatrixD depthwise(const MatrixD& g, const Param& w, const Param& b) {
  const int kernel = static_cast<int>(w.value.rows());
  const int pad = kernel / 2;
  const Eigen::Index frames = g.rows();
  const MatrixD wd = w.as_double();
  MatrixD c(frames, g.cols());
  c.rowwise() = b.value.row(0).cast<double>();
  for (Eigen::Index t = 0; t < frames; ++t)
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = t + j - pad;
      if (src < 0 || src >= frames) continue;
      c.row(t).array() += wd.row(j).array() * g.row(src).array();
    }
  return c;
}

MatrixD depthwise_backward(const MatrixD& g, const MatrixD& dc, Param& w, Param& b) {
  const int kernel = static_cast<int>(w.value.rows());
  const int pad = kernel / 2;
  const Eigen::Index frames = g.rows();
  const MatrixD wd = w.as_double();
  MatrixD dg = MatrixD::Zero(g.rows(), g.cols());
  b.grad.row(0) += dc.colwise().sum();
  for (Eigen::Index t = 0; t < frames; ++t)
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = t + j - pad;
      if (src < 0 || src >= frames) continue;
      w.grad.row(j).array() += dc.row(t).array() * g.row(src).array();
      dg.row(src).array() += dc.row(t).array() * wd.row(j).array();
    }
  return dg;
}

MatrixD conv_forward(const ConvModuleParams& p, const MatrixD& x, double rate,
                     Rng* rng, ConvCache* c) {
  ConvCache local;
  ConvCache& k = c ? *c : local;
  const Eigen::Index d = x.cols();
  k.h = layer_norm(x, p.ln_g, p.ln_b, &k.ln);
  const MatrixD pw = linear(k.h, p.pw1_w, p.pw1_b);
  k.pa = pw.leftCols(d);
  k.sig_b = pw.rightCols(d).unaryExpr([](double v) { return sigmoid(v); });
  k.g = k.pa.cwiseProduct(k.sig_b);
  k.c = depthwise(k.g, p.dw_w, p.dw_b);
  const MatrixD n = layer_norm(k.c, p.norm_g, p.norm_b, &k.norm);
  // Swish needs its pre-activation; keep it in s and recompute on backward.
  k.s = n;
  const MatrixD sw = swish(n);
  MatrixD out = linear(sw, p.pw2_w, p.pw2_b);
  k.drop = dropout_mask(out.rows(), out.cols(), rate, rng);
  return apply_dropout(out, k.drop);
}

MatrixD conv_backward(ConvModuleParams& p, const MatrixD& d_out, const ConvCache& k) {
  const Eigen::Index d = k.pa.cols();
  const MatrixD sw = swish(k.s);
  const MatrixD d_sw = linear_backward(sw, apply_dropout(d_out, k.drop), p.pw2_w, p.pw2_b);
  const MatrixD d_n = swish_backward(k.s, d_sw);
  const MatrixD d_c = layer_norm_backward(d_n, k.norm, p.norm_g, p.norm_b);
  const MatrixD d_g = depthwise_backward(k.g, d_c, p.dw_w, p.dw_b);
  MatrixD d_pw(d_g.rows(), 2 * d);
  d_pw.leftCols(d) = d_g.cwiseProduct(k.sig_b);
  d_pw.rightCols(d) =
      d_g.cwiseProduct(k.pa).cwiseProduct(k.sig_b.cwiseProduct((1.0 - k.sig_b.array()).matrix()));
  const MatrixD d_h = linear_backward(k.h, d_pw, p.pw1_w, p.pw1_b);
  return layer_norm_backward(d_h, k.ln, p.ln_g, p.ln_b);
}

MatrixD block_forward(const ConformerBlockParams& p, const MatrixD& x, int heads,
                      double rate, Rng* rng, BlockCache* c) {
  BlockCache local;
  BlockCache& k = c ? *c : local;
  const MatrixD x1 = x + 0.5 * ffn_forward(p.ffn1, x, rate, rng, &k.ffn1);
  const MatrixD x2 = x1 + attention_forward(p.att, x1, heads, rate, rng, &k.att);
  const MatrixD x3 = x2 + conv_forward(p.conv, x2, rate, rng, &k.conv);
  const MatrixD z = x3 + 0.5 * ffn_forward(p.ffn2, x3, rate, rng, &k.ffn2);
  return layer_norm(z, p.final_g, p.final_b, &k.final_ln);
}

MatrixD block_backward(ConformerBlockParams& p, const MatrixD& dy, int heads,
                       const BlockCache& k) {
  const MatrixD dz = layer_norm_backward(dy, k.final_ln, p.final_g, p.final_b);
  const MatrixD dx3 = dz + ffn_backward(p.ffn2, 0.5 * dz, k.ffn2);
  const MatrixD dx2 = dx3 + conv_backward(p.conv, dx3, k.conv);
  const MatrixD dx1 = dx2 + attention_backward(p.att, dx2, heads, k.att);
  return dx1 + ffn_backward(p.ffn1, 0.5 * dx1, k.ffn1);
}

MatrixD lstm_forward(const LstmDirectionParams& p, const MatrixD& x, bool reverse,
                     LstmCache* c) {
  LstmCache local;
  LstmCache& k = c ? *c : local;
  const Eigen::Index frames = x.rows();
  const Eigen::Index h = p.w_hh.value.rows();
  const MatrixD whh = p.w_hh.as_double();
  k.x = x;
  const MatrixD xw = linear(x, p.w_ih, p.b);
  k.gates.resize(frames, 4 * h);
  k.c.resize(frames, h);
  k.tc.resize(frames, h);
  k.h.resize(frames, h);
  Eigen::RowVectorXd h_prev = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd c_prev = Eigen::RowVectorXd::Zero(h);
  for (Eigen::Index s = 0; s < frames; ++s) {
    const Eigen::Index t = reverse ? frames - 1 - s : s;
    Eigen::RowVectorXd z = xw.row(t) + h_prev * whh;
    for (Eigen::Index j = 0; j < h; ++j) {
      z(j) = sigmoid(z(j));
      z(h + j) = sigmoid(z(h + j));
      z(2 * h + j) = std::tanh(z(2 * h + j));
      z(3 * h + j) = sigmoid(z(3 * h + j));
    }
    const Eigen::RowVectorXd cc =
        z.segment(h, h).cwiseProduct(c_prev) + z.segment(0, h).cwiseProduct(z.segment(2 * h, h));
    const Eigen::RowVectorXd tc = cc.array().tanh();
    const Eigen::RowVectorXd hh = z.segment(3 * h, h).cwiseProduct(tc);
    k.gates.row(t) = z;
    k.c.row(t) = cc;
    k.tc.row(t) = tc;
    k.h.row(t) = hh;
    h_prev = hh;
    c_prev = cc;
  }
  return k.h;
}

MatrixD lstm_backward(LstmDirectionParams& p, const MatrixD& d_h, bool reverse,
                      const LstmCache& k) {
  const Eigen::Index frames = k.x.rows();
  const Eigen::Index h = p.w_hh.value.rows();
  const MatrixD whh = p.w_hh.as_double();
  MatrixD dz_all(frames, 4 * h);
  Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(h);
  Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(h);
  for (Eigen::Index s = frames - 1; s >= 0; --s) {
    const Eigen::Index t = reverse ? frames - 1 - s : s;
    const bool first = s == 0;
    const Eigen::Index tp = reverse ? t + 1 : t - 1;
    const Eigen::RowVectorXd c_prev = first ? Eigen::RowVectorXd::Zero(h) : Eigen::RowVectorXd(k.c.row(tp));
    const Eigen::RowVectorXd h_prev = first ? Eigen::RowVectorXd::Zero(h) : Eigen::RowVectorXd(k.h.row(tp));
    const auto gi = k.gates.row(t).segment(0, h).array();
    const auto gf = k.gates.row(t).segment(h, h).array();
    const auto gg = k.gates.row(t).segment(2 * h, h).array();
    const auto go = k.gates.row(t).segment(3 * h, h).array();
    const auto tc = k.tc.row(t).array();
    const Eigen::ArrayXXd dh = (d_h.row(t) + dh_next).array();
    const Eigen::ArrayXXd dc = dh * go * (1.0 - tc * tc) + dc_next.array();
    Eigen::RowVectorXd dz(4 * h);
    dz.segment(0, h) = (dc * gg * gi * (1.0 - gi)).matrix();
    dz.segment(h, h) = (dc * c_prev.array() * gf * (1.0 - gf)).matrix();
    dz.segment(2 * h, h) = (dc * gi * (1.0 - gg * gg)).matrix();
    dz.segment(3 * h, h) = (dh * tc * go * (1.0 - go)).matrix();
    dc_next = (dc * gf).matrix();
    p.w_hh.grad.noalias() += h_prev.transpose() * dz;
    dh_next = dz * whh.transpose();
    dz_all.row(t) = dz;
  }
  return linear_backward(k.x, dz_all, p.w_ih, p.b);
}

MatrixD positional_encoding(Eigen::Index frames, Eigen::Index d) {
  MatrixD pe(frames, d);
  for (Eigen::Index t = 0; t < frames; ++t)
    for (Eigen::Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / d);
      pe(t, i) = i % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate);
    }
  return pe;
}

}  // namespace

MatrixD conformer_block_forward(const ConformerBlockParams& p, const MatrixD& x,
                                int n_heads) {
  if (n_heads <= 0 || x.cols() % n_heads != 0)
    throw InvalidInput("block: n_heads must divide the width");
  return block_forward(p, x, n_heads, 0.0, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// MaskNet

MaskNet::MaskNet(MaskNetConfig cfg, MaskNetParams params)
    : cfg_(cfg), params_(std::move(params)) {
  validate(cfg_);
  const bool conformer = cfg_.variant == MaskVariant::kConformer;
  if (params_.in_w.value.rows() != cfg_.input_dim() ||
      params_.in_w.value.cols() != cfg_.hidden ||
      params_.head_w.value.cols() != cfg_.bins() ||
      static_cast<int>(conformer ? params_.blocks.size() : params_.layers.size()) != cfg_.n_blocks)
    throw InvalidInput("mask net parameters do not match the config");
}

Mask MaskNet::forward(const FeatureMatrix& g_hat) const {
  return Mask(forward_train(g_hat, nullptr, nullptr).cast<float>());
}

MatrixD MaskNet::forward_train(const FeatureMatrix& g_hat, MaskNetCache* cache,
                               Rng* dropout_rng) const {
  if (g_hat.cols() != cfg_.input_dim())
    throw InvalidInput("mask net: feature width " + std::to_string(g_hat.cols()) +
                       " != expected " + std::to_string(cfg_.input_dim()));
  if (g_hat.rows() == 0) throw InvalidInput("mask net: no frames");
  const double rate = dropout_rng ? cfg_.dropout_rate : 0.0;
  MaskNetCache::Impl* k = nullptr;
  if (cache) {
    cache->impl = std::make_unique<MaskNetCache::Impl>();
    k = cache->impl.get();
    k->g_hat = g_hat;
  }
  MatrixD x = linear(g_hat, params_.in_w, params_.in_b);
  if (cfg_.positional_encoding) x += positional_encoding(x.rows(), x.cols());
  if (!all_finite(x)) throw NumericError("mask net: non-finite input projection");

  if (cfg_.variant == MaskVariant::kConformer) {
    if (k) k->blocks.resize(params_.blocks.size());
    for (std::size_t i = 0; i < params_.blocks.size(); ++i) {
      x = block_forward(params_.blocks[i], x, cfg_.n_heads, rate, dropout_rng,
                        k ? &k->blocks[i] : nullptr);
      if (!all_finite(x))
        throw NumericError("mask net: non-finite output in block " + std::to_string(i));
    }
  } else {
    if (k) k->layers.resize(params_.layers.size());
    for (std::size_t i = 0; i < params_.layers.size(); ++i) {
      const auto& l = params_.layers[i];
      MatrixD y(x.rows(), cfg_.hidden);
      const int h = cfg_.hidden / 2;
      y.leftCols(h) = lstm_forward(l.fwd, x, false, k ? &k->layers[i].fwd : nullptr);
      y.rightCols(h) = lstm_forward(l.bwd, x, true, k ? &k->layers[i].bwd : nullptr);
      x = std::move(y);
      if (!all_finite(x))
        throw NumericError("mask net: non-finite output in recurrent layer " + std::to_string(i));
    }
  }
  MatrixD pre = linear(x, params_.head_w, params_.head_b);
  if (!all_finite(pre)) throw NumericError("mask net: non-finite mask head");
  MatrixD mask = pre.cwiseMax(0.0);
  if (k) {
    k->head_in = std::move(x);
    k->head_pre = std::move(pre);
  }
  return mask;
}

MatrixD MaskNet::backward(const MatrixD& d_mask, MaskNetCache& cache) {
  if (!cache.impl) throw StateError("mask net backward without a training forward");
  MaskNetCache::Impl& k = *cache.impl;
  if (d_mask.rows() != k.head_pre.rows() || d_mask.cols() != k.head_pre.cols())
    throw InvalidInput("mask net backward: gradient shape mismatch");
  const MatrixD d_pre = d_mask.binaryExpr(k.head_pre, [](double g, double v) {
    return v > 0.0 ? g : 0.0;
  });
  MatrixD dx = linear_backward(k.head_in, d_pre, params_.head_w, params_.head_b);
  if (cfg_.variant == MaskVariant::kConformer) {
    for (std::size_t i = params_.blocks.size(); i-- > 0;)
      dx = block_backward(params_.blocks[i], dx, cfg_.n_heads, k.blocks[i]);
  } else {
    const int h = cfg_.hidden / 2;
    for (std::size_t i = params_.layers.size(); i-- > 0;) {
      auto& l = params_.layers[i];
      MatrixD d_in = lstm_backward(l.fwd, dx.leftCols(h), false, k.layers[i].fwd);
      d_in += lstm_backward(l.bwd, dx.rightCols(h), true, k.layers[i].bwd);
      dx = std::move(d_in);
    }
  }
  return linear_backward(k.g_hat, dx, params_.in_w, params_.in_b);
}

void save_checkpoint(const MaskNet& net, const std::filesystem::path& path) {
  CheckpointData data;
  data.config["kind"] = "mask_net";
  data.config["mask_net"] = config_to_json(net.config());
  append_tensors(data, net.params().refs());
  write_checkpoint_file(path, data);
}

MaskNet load_checkpoint(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint_file(path);
  if (!data.config.contains("mask_net"))
    throw FormatError(path.string() + ": checkpoint has no mask_net config");
  MaskNetConfig cfg;
  try {
    cfg = mask_config_from_json(data.config.at("mask_net"));
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  MaskNetParams params = make_mask_params(cfg);
  assign_tensors(data, params.refs());
  return MaskNet(cfg, std::move(params));
}

}  // namespace cvf
