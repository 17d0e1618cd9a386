#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tsca/common.hpp"

namespace tsca {

/// Hybrid patch embedding + pre-norm transformer + CLS readout, with an
/// MLP projector for the contrastive head. Dimensions follow the default
/// 512-sample configuration; all of them are adjustable for small test
/// instantiations.
struct EncoderConfig {
  int seq_len = 512;
  int patch_len = 16;   // non-overlapping patch length
  int cnn_kernel = 17;  // overlapping-patch conv kernel, stride 1
  int cnn_pad = 8;
  int cnn_channels = 256;
  int cls_tokens = 1;
  int token_dim = 256;
  int layers = 6;
  int heads = 8;
  int head_dim = 128;
  int mlp_dim = 512;
  int stat_dim = 32;  // width of the per-patch mean/std embeddings
  int proj_hidden = 512;
  int proj_out = 256;

  int tokens() const { return seq_len / patch_len; }
  int total_tokens() const { return tokens() + cls_tokens; }
  int inner_dim() const { return heads * head_dim; }
  int fused_in() const { return cnn_channels + 2 * stat_dim; }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v < 1) throw ArgumentError(std::string("EncoderConfig: ") + what + " must be positive");
    };
    positive(seq_len, "seq_len");
    positive(patch_len, "patch_len");
    positive(cnn_kernel, "cnn_kernel");
    positive(cnn_channels, "cnn_channels");
    positive(token_dim, "token_dim");
    positive(layers, "layers");
    positive(heads, "heads");
    positive(head_dim, "head_dim");
    positive(mlp_dim, "mlp_dim");
    positive(stat_dim, "stat_dim");
    positive(proj_hidden, "proj_hidden");
    positive(proj_out, "proj_out");
    if (cnn_pad < 0) throw ArgumentError("EncoderConfig: cnn_pad must be >= 0");
    if (cls_tokens != 1) throw ArgumentError("EncoderConfig: cls_tokens must be 1");
    if (seq_len % patch_len != 0)
      throw ArgumentError("EncoderConfig: seq_len must be a multiple of patch_len");
    // stride-1 conv must preserve the sequence length: L + 2*pad - kernel + 1 == L
    if (2 * cnn_pad - cnn_kernel + 1 != 0)
      throw ArgumentError("EncoderConfig: conv does not preserve length (need 2*pad == kernel-1)");
  }
};

template <class S>
struct LayerParamsT {
  MatX<S> ln1_gamma, ln1_beta;            // token_dim x 1
  MatX<S> wq, bq, wk, bk, wv, bv;         // token_dim x inner, inner x 1
  MatX<S> wo, bo;                         // inner x token_dim, token_dim x 1
  MatX<S> ln2_gamma, ln2_beta;            // token_dim x 1
  MatX<S> w1, b1, w2, b2;                 // token_dim x mlp, mlp x 1, mlp x token_dim, token_dim x 1
};

/// All learnable tensors. Linear maps are stored input x output, so a row
/// batch X maps as X * W + b.
template <class S>
struct EncoderParamsT {
  EncoderConfig cfg;

  MatX<S> cnn_weight, cnn_bias;           // kernel x channels, channels x 1
  MatX<S> mu_weight, mu_bias;             // 1 x stat_dim, stat_dim x 1
  MatX<S> sigma_weight, sigma_bias;       // 1 x stat_dim, stat_dim x 1
  MatX<S> fusion_weight, fusion_bias;     // fused_in x token_dim, token_dim x 1
  MatX<S> pos_embed;                      // total_tokens x token_dim
  MatX<S> cls;                            // 1 x token_dim
  std::vector<LayerParamsT<S>> layers;
  MatX<S> final_gamma, final_beta;        // token_dim x 1
  MatX<S> proj_gamma, proj_beta;          // token_dim x 1
  MatX<S> proj_w1, proj_b1;               // token_dim x proj_hidden, proj_hidden x 1
  MatX<S> proj_w2, proj_b2;               // proj_hidden x proj_out, proj_out x 1

  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    visit_tensors(*this, fn);
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const {
    visit_tensors(*this, fn);
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for_each_tensor([&n](const std::string&, const MatX<S>& t) { n += t.size(); });
    return n;
  }

  EncoderParamsT zeros_clone() const {
    EncoderParamsT c = *this;
    c.for_each_tensor([](const std::string&, MatX<S>& t) { t.setZero(); });
    return c;
  }

  template <class S2>
  EncoderParamsT<S2> cast() const;

 private:
  template <class Self, class Fn>
  static void visit_tensors(Self& self, Fn&& fn) {
    fn("cnn.weight", self.cnn_weight);
    fn("cnn.bias", self.cnn_bias);
    fn("mu_embed.weight", self.mu_weight);
    fn("mu_embed.bias", self.mu_bias);
    fn("sigma_embed.weight", self.sigma_weight);
    fn("sigma_embed.bias", self.sigma_bias);
    fn("fusion.weight", self.fusion_weight);
    fn("fusion.bias", self.fusion_bias);
    fn("pos_embed", self.pos_embed);
    fn("cls", self.cls);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      auto& lay = self.layers[l];
      fn(p + "ln1.gamma", lay.ln1_gamma);
      fn(p + "ln1.beta", lay.ln1_beta);
      fn(p + "attn.wq", lay.wq);
      fn(p + "attn.bq", lay.bq);
      fn(p + "attn.wk", lay.wk);
      fn(p + "attn.bk", lay.bk);
      fn(p + "attn.wv", lay.wv);
      fn(p + "attn.bv", lay.bv);
      fn(p + "attn.wo", lay.wo);
      fn(p + "attn.bo", lay.bo);
      fn(p + "ln2.gamma", lay.ln2_gamma);
      fn(p + "ln2.beta", lay.ln2_beta);
      fn(p + "mlp.w1", lay.w1);
      fn(p + "mlp.b1", lay.b1);
      fn(p + "mlp.w2", lay.w2);
      fn(p + "mlp.b2", lay.b2);
    }
    fn("final_norm.gamma", self.final_gamma);
    fn("final_norm.beta", self.final_beta);
    fn("projector.norm.gamma", self.proj_gamma);
    fn("projector.norm.beta", self.proj_beta);
    fn("projector.w1", self.proj_w1);
    fn("projector.b1", self.proj_b1);
    fn("projector.w2", self.proj_w2);
    fn("projector.b2", self.proj_b2);
  }
};

using EncoderParams = EncoderParamsT<float>;

inline constexpr double kLayerNormEps = 1e-5;
// keeps the per-patch std differentiable when a patch is exactly constant
inline constexpr double kPatchVarEps = 1e-12;

namespace detail {

template <class S>
inline S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(M_SQRT1_2)));
}

template <class S>
inline S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(M_SQRT1_2)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(0.39894228040143267794);
  return cdf + x * pdf;
}

template <class S>
inline MatX<S> colsum(const MatX<S>& m) {
  return m.colwise().sum().transpose();
}

template <class S>
inline void add_row_bias(MatX<S>& m, const MatX<S>& bias) {
  m.rowwise() += bias.col(0).transpose();
}

template <class S>
inline void ensure_finite(const MatX<S>& m, const char* where) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + where);
}

/// y = gamma .* (x - mean) / sqrt(var + eps) + beta, per row.
template <class S>
MatX<S> layernorm_forward(const MatX<S>& x, const MatX<S>& gamma, const MatX<S>& beta,
                          MatX<S>& xhat, VecX<S>& istd) {
  VecX<S> mean = x.rowwise().mean();
  MatX<S> centered = x.colwise() - mean;
  VecX<S> var = centered.array().square().matrix().rowwise().mean();
  istd = (var.array() + S(kLayerNormEps)).rsqrt();
  xhat = centered.array().colwise() * istd.array();
  return ((xhat.array().rowwise() * gamma.col(0).transpose().array()).rowwise() +
          beta.col(0).transpose().array())
      .matrix();
}

template <class S>
MatX<S> layernorm_backward(const MatX<S>& dy, const MatX<S>& gamma, const MatX<S>& xhat,
                           const VecX<S>& istd, MatX<S>& dgamma, MatX<S>& dbeta) {
  dgamma += (dy.array() * xhat.array()).matrix().colwise().sum().transpose();
  dbeta += colsum(dy);
  MatX<S> dxhat = (dy.array().rowwise() * gamma.col(0).transpose().array()).matrix();
  VecX<S> m1 = dxhat.rowwise().mean();
  VecX<S> m2 = (dxhat.array() * xhat.array()).matrix().rowwise().mean();
  return (((dxhat.colwise() - m1).array() - xhat.array().colwise() * m2.array()).colwise() *
          istd.array())
      .matrix();
}

}  // namespace detail

template <class S>
EncoderParamsT<S> allocate_params(const EncoderConfig& cfg) {
  cfg.validate();
  const int d = cfg.token_dim;
  const int inner = cfg.inner_dim();
  EncoderParamsT<S> p;
  p.cfg = cfg;
  p.cnn_weight = MatX<S>::Zero(cfg.cnn_kernel, cfg.cnn_channels);
  p.cnn_bias = MatX<S>::Zero(cfg.cnn_channels, 1);
  p.mu_weight = MatX<S>::Zero(1, cfg.stat_dim);
  p.mu_bias = MatX<S>::Zero(cfg.stat_dim, 1);
  p.sigma_weight = MatX<S>::Zero(1, cfg.stat_dim);
  p.sigma_bias = MatX<S>::Zero(cfg.stat_dim, 1);
  p.fusion_weight = MatX<S>::Zero(cfg.fused_in(), d);
  p.fusion_bias = MatX<S>::Zero(d, 1);
  p.pos_embed = MatX<S>::Zero(cfg.total_tokens(), d);
  p.cls = MatX<S>::Zero(1, d);
  p.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& lay : p.layers) {
    lay.ln1_gamma = MatX<S>::Zero(d, 1);
    lay.ln1_beta = MatX<S>::Zero(d, 1);
    lay.wq = MatX<S>::Zero(d, inner);
    lay.bq = MatX<S>::Zero(inner, 1);
    lay.wk = MatX<S>::Zero(d, inner);
    lay.bk = MatX<S>::Zero(inner, 1);
    lay.wv = MatX<S>::Zero(d, inner);
    lay.bv = MatX<S>::Zero(inner, 1);
    lay.wo = MatX<S>::Zero(inner, d);
    lay.bo = MatX<S>::Zero(d, 1);
    lay.ln2_gamma = MatX<S>::Zero(d, 1);
    lay.ln2_beta = MatX<S>::Zero(d, 1);
    lay.w1 = MatX<S>::Zero(d, cfg.mlp_dim);
    lay.b1 = MatX<S>::Zero(cfg.mlp_dim, 1);
    lay.w2 = MatX<S>::Zero(cfg.mlp_dim, d);
    lay.b2 = MatX<S>::Zero(d, 1);
  }
  p.final_gamma = MatX<S>::Zero(d, 1);
  p.final_beta = MatX<S>::Zero(d, 1);
  p.proj_gamma = MatX<S>::Zero(d, 1);
  p.proj_beta = MatX<S>::Zero(d, 1);
  p.proj_w1 = MatX<S>::Zero(d, cfg.proj_hidden);
  p.proj_b1 = MatX<S>::Zero(cfg.proj_hidden, 1);
  p.proj_w2 = MatX<S>::Zero(cfg.proj_hidden, cfg.proj_out);
  p.proj_b2 = MatX<S>::Zero(cfg.proj_out, 1);
  return p;
}

template <class S>
template <class S2>
EncoderParamsT<S2> EncoderParamsT<S>::cast() const {
  EncoderParamsT<S2> out = allocate_params<S2>(cfg);
  std::vector<const MatX<S>*> src;
  for_each_tensor([&src](const std::string&, const MatX<S>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.for_each_tensor([&](const std::string&, MatX<S2>& t) {
    t = src[i++]->template cast<S2>();
  });
  return out;
}

/// Weight matrices ~ Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and
/// norm offsets zero; norm scales one; CLS and positional embeddings
/// ~ Normal(0, 0.02). Deterministic per seed.
template <class S>
EncoderParamsT<S> init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  auto p = allocate_params<S>(cfg);
  std::mt19937_64 rng(seed);
  auto uniform_fill = [&rng](MatX<S>& t) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(dist(rng));
  };
  auto normal_fill = [&rng](MatX<S>& t, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(dist(rng));
  };
  uniform_fill(p.cnn_weight);
  uniform_fill(p.mu_weight);
  uniform_fill(p.sigma_weight);
  uniform_fill(p.fusion_weight);
  normal_fill(p.pos_embed, 0.02);
  normal_fill(p.cls, 0.02);
  for (auto& lay : p.layers) {
    lay.ln1_gamma.setOnes();
    uniform_fill(lay.wq);
    uniform_fill(lay.wk);
    uniform_fill(lay.wv);
    uniform_fill(lay.wo);
    lay.ln2_gamma.setOnes();
    uniform_fill(lay.w1);
    uniform_fill(lay.w2);
  }
  p.final_gamma.setOnes();
  p.proj_gamma.setOnes();
  uniform_fill(p.proj_w1);
  uniform_fill(p.proj_w2);
  return p;
}

template <class S>
struct PatchCache {
  MatX<S> psum;   // (b*tokens) x kernel: per conv tap, window sum over the patch
  MatX<S> mu;     // (b*tokens) x 1
  MatX<S> sigma;  // (b*tokens) x 1
  MatX<S> fused;  // (b*tokens) x fused_in
};

template <class S>
struct LayerCache {
  MatX<S> x_in;
  MatX<S> ln1_xhat, ln1_out;
  VecX<S> ln1_istd;
  MatX<S> q, k, v;   // N x inner
  MatX<S> probs;     // N x heads*T, per example/head T x T softmax blocks
  MatX<S> z;         // N x inner
  MatX<S> x_mid;
  MatX<S> ln2_xhat, ln2_out;
  VecX<S> ln2_istd;
  MatX<S> h_pre, h_act;  // N x mlp
};

template <class S>
struct ForwardCache {
  int batch = 0;
  PatchCache<S> patch;
  std::vector<LayerCache<S>> layers;
  MatX<S> cls_in;  // b x d rows entering the final norm
  MatX<S> final_xhat;
  VecX<S> final_istd;
};

/// Patch embedding for a row batch (b x seq_len): pooled overlapping-conv
/// features (stride 1, replicate padding) fused with per-patch mean/std
/// embeddings. Returns (b*tokens) x token_dim. The conv + mean-pool pair
/// is evaluated in its pooled form, (window-summed taps) * W / patch_len.
template <class S>
MatX<S> patch_forward(const EncoderParamsT<S>& p, const MatX<S>& batch, PatchCache<S>& pc) {
  const EncoderConfig& cfg = p.cfg;
  const int b = static_cast<int>(batch.rows());
  const int seq = cfg.seq_len;
  const int patch = cfg.patch_len;
  const int tokens = cfg.tokens();
  const int kernel = cfg.cnn_kernel;
  const int pad = cfg.cnn_pad;
  const Eigen::Index rows = static_cast<Eigen::Index>(b) * tokens;

  pc.psum.resize(rows, kernel);
  pc.mu.resize(rows, 1);
  pc.sigma.resize(rows, 1);

#pragma omp parallel for schedule(static)
  for (int e = 0; e < b; ++e) {
    VecX<S> cum(seq + 1);
    cum[0] = S(0);
    for (int i = 0; i < seq; ++i) cum[i + 1] = cum[i] + batch(e, i);
    // replicate padding: out-of-range positions take the edge sample
    auto window_sum = [&](int a, int z) {
      const int below = a < 0 ? std::min(z, 0) - a : 0;
      const int above = z > seq ? z - std::max(a, seq) : 0;
      const int ia = std::clamp(a, 0, seq);
      const int iz = std::clamp(z, 0, seq);
      S sum = iz > ia ? cum[iz] - cum[ia] : S(0);
      if (below > 0) sum += S(below) * batch(e, 0);
      if (above > 0) sum += S(above) * batch(e, seq - 1);
      return sum;
    };
    for (int t = 0; t < tokens; ++t) {
      const Eigen::Index r = static_cast<Eigen::Index>(e) * tokens + t;
      for (int k = 0; k < kernel; ++k) {
        const int lo = t * patch + k - pad;
        pc.psum(r, k) = window_sum(lo, lo + patch);
      }
      const S mean = window_sum(t * patch, (t + 1) * patch) / S(patch);
      S var = S(0);
      for (int j = 0; j < patch; ++j) {
        const S c = batch(e, t * patch + j) - mean;
        var += c * c;
      }
      var /= S(patch);
      pc.mu(r, 0) = mean;
      pc.sigma(r, 0) = std::sqrt(var + S(kPatchVarEps));
    }
  }

  MatX<S> pooled = pc.psum * p.cnn_weight * (S(1) / S(patch));
  detail::add_row_bias(pooled, p.cnn_bias);
  MatX<S> mu_emb = pc.mu * p.mu_weight;
  detail::add_row_bias(mu_emb, p.mu_bias);
  MatX<S> sigma_emb = pc.sigma * p.sigma_weight;
  detail::add_row_bias(sigma_emb, p.sigma_bias);

  pc.fused.resize(rows, cfg.fused_in());
  pc.fused << pooled, mu_emb, sigma_emb;

  MatX<S> out = pc.fused * p.fusion_weight;
  detail::add_row_bias(out, p.fusion_bias);
  return out;
}

template <class S>
void patch_backward(const EncoderParamsT<S>& p, const PatchCache<S>& pc,
                    const MatX<S>& dtokens, EncoderParamsT<S>& g) {
  const EncoderConfig& cfg = p.cfg;
  g.fusion_weight.noalias() += pc.fused.transpose() * dtokens;
  g.fusion_bias += detail::colsum(dtokens);
  MatX<S> dfused = dtokens * p.fusion_weight.transpose();
  const auto dpooled = dfused.leftCols(cfg.cnn_channels);
  const auto dmu_emb = dfused.middleCols(cfg.cnn_channels, cfg.stat_dim);
  const auto dsigma_emb = dfused.rightCols(cfg.stat_dim);
  g.cnn_weight.noalias() += pc.psum.transpose() * dpooled * (S(1) / S(cfg.patch_len));
  g.cnn_bias += dpooled.colwise().sum().transpose();
  g.mu_weight.noalias() += pc.mu.transpose() * dmu_emb;
  g.mu_bias += dmu_emb.colwise().sum().transpose();
  g.sigma_weight.noalias() += pc.sigma.transpose() * dsigma_emb;
  g.sigma_bias += dsigma_emb.colwise().sum().transpose();
}

template <class S>
MatX<S> layer_forward(const LayerParamsT<S>& lp, const EncoderConfig& cfg, int b,
                      const MatX<S>& x, LayerCache<S>& c) {
  const int T = cfg.total_tokens();
  const int hd = cfg.head_dim;
  const int H = cfg.heads;
  const S inv_sqrt = S(1) / std::sqrt(S(hd));

  c.x_in = x;
  c.ln1_out = detail::layernorm_forward(x, lp.ln1_gamma, lp.ln1_beta, c.ln1_xhat, c.ln1_istd);
  c.q.noalias() = c.ln1_out * lp.wq;
  detail::add_row_bias(c.q, lp.bq);
  c.k.noalias() = c.ln1_out * lp.wk;
  detail::add_row_bias(c.k, lp.bk);
  c.v.noalias() = c.ln1_out * lp.wv;
  detail::add_row_bias(c.v, lp.bv);

  c.probs.resize(x.rows(), static_cast<Eigen::Index>(H) * T);
  c.z.resize(x.rows(), cfg.inner_dim());
#pragma omp parallel for schedule(static)
  for (int eh = 0; eh < b * H; ++eh) {
    const int e = eh / H;
    const int h = eh % H;
    const auto Q = c.q.block(static_cast<Eigen::Index>(e) * T, static_cast<Eigen::Index>(h) * hd, T, hd);
    const auto K = c.k.block(static_cast<Eigen::Index>(e) * T, static_cast<Eigen::Index>(h) * hd, T, hd);
    const auto V = c.v.block(static_cast<Eigen::Index>(e) * T, static_cast<Eigen::Index>(h) * hd, T, hd);
    MatX<S> s = Q * K.transpose() * inv_sqrt;
    VecX<S> mx = s.rowwise().maxCoeff();
    s = ((s.colwise() - mx).array().exp()).matrix();
    VecX<S> denom = s.rowwise().sum();
    s.array().colwise() /= denom.array();
    c.probs.block(static_cast<Eigen::Index>(e) * T, static_cast<Eigen::Index>(h) * T, T, T) = s;
    c.z.block(static_cast<Eigen::Index>(e) * T, static_cast<Eigen::Index>(h) * hd, T, hd).noalias() = s * V;
  }

  MatX<S> attn = c.z * lp.wo;
  detail::add_row_bias(attn, lp.bo);
  c.x_mid = x + attn;

  c.ln2_out =
      detail::layernorm_forward(c.x_mid, lp.ln2_gamma, lp.ln2_beta, c.ln2_xhat, c.ln2_istd);
  c.h_pre.noalias() = c.ln2_out * lp.w1;
  detail::add_row_bias(c.h_pre, lp.b1);
  c.h_act = c.h_pre.unaryExpr([](S v) { return detail::gelu(v); });
  MatX<S> out = c.h_act * lp.w2;
  detail::add_row_bias(out, lp.b2);
  out += c.x_mid;
  return out;
}

template <class S>
MatX<S> layer_backward(const LayerParamsT<S>& lp, const EncoderConfig& cfg, int b,
                       const LayerCache<S>& c, const MatX<S>& dout, LayerParamsT<S>& g) {
  const int T = cfg.total_tokens();
  const int hd = cfg.head_dim;
  const int H = cfg.heads;
  const S inv_sqrt = S(1) / std::sqrt(S(hd));

  // MLP branch: out = x_mid + W2(gelu(W1 ln2(x_mid)))
  g.w2.noalias() += c.h_act.transpose() * dout;
  g.b2 += detail::colsum(dout);
  MatX<S> dh_act = dout * lp.w2.transpose();
  MatX<S> dh_pre =
      (dh_act.array() * c.h_pre.unaryExpr([](S v) { return detail::gelu_grad(v); }).array())
          .matrix();
  g.w1.noalias() += c.ln2_out.transpose() * dh_pre;
  g.b1 += detail::colsum(dh_pre);
  MatX<S> dln2_out = dh_pre * lp.w1.transpose();
  MatX<S> dx_mid =
      dout + detail::layernorm_backward(dln2_out, lp.ln2_gamma, c.ln2_xhat, c.ln2_istd,
                                        g.ln2_gamma, g.ln2_beta);

  // attention branch: x_mid = x_in + Wo z
  g.wo.noalias() += c.z.transpose() * dx_mid;
  g.bo += detail::colsum(dx_mid);
  MatX<S> dz = dx_mid * lp.wo.transpose();

  MatX<S> dq(c.q.rows(), c.q.cols());
  MatX<S> dk(c.k.rows(), c.k.cols());
  MatX<S> dv(c.v.rows(), c.v.cols());
#pragma omp parallel for schedule(static)
  for (int eh = 0; eh < b * H; ++eh) {
    const int e = eh / H;
    const int h = eh % H;
    const Eigen::Index r0 = static_cast<Eigen::Index>(e) * T;
    const Eigen::Index ch = static_cast<Eigen::Index>(h) * hd;
    const auto Q = c.q.block(r0, ch, T, hd);
    const auto K = c.k.block(r0, ch, T, hd);
    const auto V = c.v.block(r0, ch, T, hd);
    const auto P = c.probs.block(r0, static_cast<Eigen::Index>(h) * T, T, T);
    const auto dZ = dz.block(r0, ch, T, hd);
    dv.block(r0, ch, T, hd).noalias() = P.transpose() * dZ;
    MatX<S> dP = dZ * V.transpose();
    VecX<S> rs = (dP.array() * P.array()).matrix().rowwise().sum();
    MatX<S> dS = (P.array() * (dP.colwise() - rs).array()).matrix() * inv_sqrt;
    dq.block(r0, ch, T, hd).noalias() = dS * K;
    dk.block(r0, ch, T, hd).noalias() = dS.transpose() * Q;
  }

  g.wq.noalias() += c.ln1_out.transpose() * dq;
  g.bq += detail::colsum(dq);
  g.wk.noalias() += c.ln1_out.transpose() * dk;
  g.bk += detail::colsum(dk);
  g.wv.noalias() += c.ln1_out.transpose() * dv;
  g.bv += detail::colsum(dv);

  MatX<S> dln1_out = dq * lp.wq.transpose();
  dln1_out.noalias() += dk * lp.wk.transpose();
  dln1_out.noalias() += dv * lp.wv.transpose();

  return dx_mid + detail::layernorm_backward(dln1_out, lp.ln1_gamma, c.ln1_xhat, c.ln1_istd,
                                             g.ln1_gamma, g.ln1_beta);
}

/// Forward pass over a row batch (b x seq_len). Returns the CLS readout
/// after the final norm, b x token_dim.
template <class S>
MatX<S> encode_batch(const EncoderParamsT<S>& p, const MatX<S>& batch,
                     ForwardCache<S>* cache = nullptr) {
  const EncoderConfig& cfg = p.cfg;
  cfg.validate();
  if (batch.cols() != cfg.seq_len)
    throw ArgumentError("encode_batch: series length != seq_len");
  if (batch.rows() < 1) throw ArgumentError("encode_batch: empty batch");
  const int b = static_cast<int>(batch.rows());
  const int T = cfg.total_tokens();
  const int tokens = cfg.tokens();
  const int d = cfg.token_dim;

  ForwardCache<S> local;
  ForwardCache<S>& c = cache ? *cache : local;
  c.batch = b;
  c.layers.resize(static_cast<std::size_t>(cfg.layers));

  MatX<S> tok = patch_forward(p, batch, c.patch);
  detail::ensure_finite(tok, "patch stage");

  MatX<S> x(static_cast<Eigen::Index>(b) * T, d);
  for (int e = 0; e < b; ++e) {
    x.row(static_cast<Eigen::Index>(e) * T) = p.cls.row(0) + p.pos_embed.row(0);
    x.middleRows(static_cast<Eigen::Index>(e) * T + 1, tokens) =
        tok.middleRows(static_cast<Eigen::Index>(e) * tokens, tokens) +
        p.pos_embed.middleRows(1, tokens);
  }

  for (int l = 0; l < cfg.layers; ++l) {
    x = layer_forward(p.layers[static_cast<std::size_t>(l)], cfg, b, x,
                      c.layers[static_cast<std::size_t>(l)]);
    if (!x.allFinite())
      throw NumericError("non-finite values in transformer layer " + std::to_string(l));
  }

  c.cls_in.resize(b, d);
  for (int e = 0; e < b; ++e) c.cls_in.row(e) = x.row(static_cast<Eigen::Index>(e) * T);
  MatX<S> emb = detail::layernorm_forward(c.cls_in, p.final_gamma, p.final_beta, c.final_xhat,
                                          c.final_istd);
  detail::ensure_finite(emb, "final norm");
  return emb;
}

/// Accumulates parameter gradients for d(embeddings) into g. The cache
/// must come from the encode_batch call being differentiated.
template <class S>
void encoder_backward(const EncoderParamsT<S>& p, const ForwardCache<S>& c,
                      const MatX<S>& d_emb, EncoderParamsT<S>& g) {
  const EncoderConfig& cfg = p.cfg;
  const int b = c.batch;
  const int T = cfg.total_tokens();
  const int tokens = cfg.tokens();
  const int d = cfg.token_dim;

  MatX<S> dcls_rows = detail::layernorm_backward(d_emb, p.final_gamma, c.final_xhat,
                                                 c.final_istd, g.final_gamma, g.final_beta);

  MatX<S> dx = MatX<S>::Zero(static_cast<Eigen::Index>(b) * T, d);
  for (int e = 0; e < b; ++e) dx.row(static_cast<Eigen::Index>(e) * T) = dcls_rows.row(e);

  for (int l = cfg.layers - 1; l >= 0; --l) {
    dx = layer_backward(p.layers[static_cast<std::size_t>(l)], cfg, b,
                        c.layers[static_cast<std::size_t>(l)], dx, g.layers[static_cast<std::size_t>(l)]);
  }

  MatX<S> dtokens(static_cast<Eigen::Index>(b) * tokens, d);
  for (int e = 0; e < b; ++e) {
    g.cls.row(0) += dx.row(static_cast<Eigen::Index>(e) * T);
    g.pos_embed.row(0) += dx.row(static_cast<Eigen::Index>(e) * T);
    g.pos_embed.middleRows(1, tokens) += dx.middleRows(static_cast<Eigen::Index>(e) * T + 1, tokens);
    dtokens.middleRows(static_cast<Eigen::Index>(e) * tokens, tokens) =
        dx.middleRows(static_cast<Eigen::Index>(e) * T + 1, tokens);
  }
  patch_backward(p, c.patch, dtokens, g);
}

template <class S>
struct ProjCache {
  MatX<S> xhat, ln_out;
  VecX<S> istd;
  MatX<S> h_pre, h_act;  // b x proj_hidden
};

/// norm -> linear -> ReLU -> linear; rows are embeddings.
template <class S>
MatX<S> project_batch(const EncoderParamsT<S>& p, const MatX<S>& emb,
                      ProjCache<S>* cache = nullptr) {
  if (emb.cols() != p.cfg.token_dim)
    throw ArgumentError("project_batch: embedding width != token_dim");
  ProjCache<S> local;
  ProjCache<S>& c = cache ? *cache : local;
  c.ln_out = detail::layernorm_forward(emb, p.proj_gamma, p.proj_beta, c.xhat, c.istd);
  c.h_pre.noalias() = c.ln_out * p.proj_w1;
  detail::add_row_bias(c.h_pre, p.proj_b1);
  c.h_act = c.h_pre.cwiseMax(S(0));
  MatX<S> out = c.h_act * p.proj_w2;
  detail::add_row_bias(out, p.proj_b2);
  return out;
}

/// Returns d(embeddings); accumulates projector gradients into g.
template <class S>
MatX<S> projector_backward(const EncoderParamsT<S>& p, const ProjCache<S>& c,
                           const MatX<S>& dproj, EncoderParamsT<S>& g) {
  g.proj_w2.noalias() += c.h_act.transpose() * dproj;
  g.proj_b2 += detail::colsum(dproj);
  MatX<S> dh_act = dproj * p.proj_w2.transpose();
  MatX<S> dh_pre = (dh_act.array() * (c.h_pre.array() > S(0)).template cast<S>()).matrix();
  g.proj_w1.noalias() += c.ln_out.transpose() * dh_pre;
  g.proj_b1 += detail::colsum(dh_pre);
  MatX<S> dln_out = dh_pre * p.proj_w1.transpose();
  return detail::layernorm_backward(dln_out, p.proj_gamma, c.xhat, c.istd, g.proj_gamma,
                                    g.proj_beta);
}

/// F(x): a single canonical series to its token_dim embedding.
template <class S>
VecX<S> encode(const EncoderParamsT<S>& p, const VecX<S>& series) {
  MatX<S> batch = series.transpose();
  return encode_batch(p, batch).row(0).transpose();
}

/// g(F(x)) head applied to one embedding.
template <class S>
VecX<S> project(const EncoderParamsT<S>& p, const VecX<S>& emb) {
  MatX<S> m = emb.transpose();
  return project_batch(p, m).row(0).transpose();
}

/// The tokens x token_dim patch-embedding matrix for one series.
template <class S>
MatX<S> patch_tokens(const EncoderParamsT<S>& p, const VecX<S>& series) {
  p.cfg.validate();
  if (series.size() != p.cfg.seq_len)
    throw ArgumentError("patch_tokens: series length != seq_len");
  PatchCache<S> pc;
  MatX<S> batch = series.transpose();
  return patch_forward(p, batch, pc);
}

}  // namespace tsca
