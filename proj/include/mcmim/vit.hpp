#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "mcmim/errors.hpp"
#include "mcmim/masking.hpp"
#include "mcmim/matrix.hpp"
#include "mcmim/rng.hpp"

namespace mcmim {

// Architecture hyper-parameters; the full model shape derives from these.
struct Arch {
  int layers = 4;
  int dim = 128;
  int heads = 4;
  int patch = 8;
  int vocab = 512;
  int channels = 3;
  int grid_rows = 4;
  int grid_cols = 4;

  int seq_len() const { return grid_rows * grid_cols; }
  int patch_dim() const { return channels * patch * patch; }
  int head_dim() const { return dim / heads; }
  int mlp_hidden() const { return 4 * dim; }
  int head_hidden() const { return 2 * dim; }
};

template <typename T>
struct LayerParams {
  Matrix<T> ln1_gamma, ln1_beta;
  Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix<T> ln2_gamma, ln2_beta;
  Matrix<T> w1, b1, w2, b2;
};

// All encoder/head parameters. Also serves as the gradient container: the
// checkpoint and optimizer iterate tensors via for_each_tensor.
template <typename T>
struct ModelParams {
  Arch arch;
  Matrix<T> patch_embed_w, patch_embed_b;
  Matrix<T> pos_embed;
  Matrix<T> mask_token;
  std::vector<LayerParams<T>> layers;
  Matrix<T> lnf_gamma, lnf_beta;
  Matrix<T> head_w1, head_b1, head_w2, head_b2;
};

// Visits every tensor as (name, matrix, weight_decay_flag). Layer norms,
// biases, pos_embed and mask_token are exempt from decoupled weight decay.
template <typename P, typename Fn>
void for_each_tensor(P& p, Fn&& fn) {
  fn("patch_embed.weight", p.patch_embed_w, true);
  fn("patch_embed.bias", p.patch_embed_b, false);
  fn("pos_embed", p.pos_embed, false);
  fn("mask_token", p.mask_token, false);
  for (size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string base = "layers." + std::to_string(i) + ".";
    fn(base + "ln1.gamma", l.ln1_gamma, false);
    fn(base + "ln1.beta", l.ln1_beta, false);
    fn(base + "attn.wq", l.wq, true);
    fn(base + "attn.bq", l.bq, false);
    fn(base + "attn.wk", l.wk, true);
    fn(base + "attn.bk", l.bk, false);
    fn(base + "attn.wv", l.wv, true);
    fn(base + "attn.bv", l.bv, false);
    fn(base + "attn.wo", l.wo, true);
    fn(base + "attn.bo", l.bo, false);
    fn(base + "ln2.gamma", l.ln2_gamma, false);
    fn(base + "ln2.beta", l.ln2_beta, false);
    fn(base + "mlp.w1", l.w1, true);
    fn(base + "mlp.b1", l.b1, false);
    fn(base + "mlp.w2", l.w2, true);
    fn(base + "mlp.b2", l.b2, false);
  }
  fn("ln_f.gamma", p.lnf_gamma, false);
  fn("ln_f.beta", p.lnf_beta, false);
  fn("head.w1", p.head_w1, true);
  fn("head.b1", p.head_b1, false);
  fn("head.w2", p.head_w2, true);
  fn("head.b2", p.head_b2, false);
}

template <typename T>
size_t param_count(const ModelParams<T>& p) {
  size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const Matrix<T>& m, bool) { n += m.size(); });
  return n;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& p) {
  ModelParams<T> g;
  g.arch = p.arch;
  g.patch_embed_w = Matrix<T>(p.patch_embed_w.rows, p.patch_embed_w.cols);
  g.patch_embed_b = Matrix<T>(p.patch_embed_b.rows, p.patch_embed_b.cols);
  g.pos_embed = Matrix<T>(p.pos_embed.rows, p.pos_embed.cols);
  g.mask_token = Matrix<T>(p.mask_token.rows, p.mask_token.cols);
  g.layers.resize(p.layers.size());
  for (size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    auto& o = g.layers[i];
    auto zero = [](const Matrix<T>& m) { return Matrix<T>(m.rows, m.cols); };
    o.ln1_gamma = zero(l.ln1_gamma);
    o.ln1_beta = zero(l.ln1_beta);
    o.wq = zero(l.wq);
    o.bq = zero(l.bq);
    o.wk = zero(l.wk);
    o.bk = zero(l.bk);
    o.wv = zero(l.wv);
    o.bv = zero(l.bv);
    o.wo = zero(l.wo);
    o.bo = zero(l.bo);
    o.ln2_gamma = zero(l.ln2_gamma);
    o.ln2_beta = zero(l.ln2_beta);
    o.w1 = zero(l.w1);
    o.b1 = zero(l.b1);
    o.w2 = zero(l.w2);
    o.b2 = zero(l.b2);
  }
  g.lnf_gamma = Matrix<T>(p.lnf_gamma.rows, p.lnf_gamma.cols);
  g.lnf_beta = Matrix<T>(p.lnf_beta.rows, p.lnf_beta.cols);
  g.head_w1 = Matrix<T>(p.head_w1.rows, p.head_w1.cols);
  g.head_b1 = Matrix<T>(p.head_b1.rows, p.head_b1.cols);
  g.head_w2 = Matrix<T>(p.head_w2.rows, p.head_w2.cols);
  g.head_b2 = Matrix<T>(p.head_b2.rows, p.head_b2.cols);
  return g;
}

// Correctly shaped zero parameters with unit layer-norm scales.
template <typename T>
ModelParams<T> make_params_shell(const Arch& arch) {
  if (arch.heads <= 0 || arch.dim % arch.heads != 0)
    throw ConfigError("model shape: dim " + std::to_string(arch.dim) +
                      " not divisible by heads " + std::to_string(arch.heads));
  const int d = arch.dim;
  ModelParams<T> p;
  p.arch = arch;
  p.patch_embed_w = Matrix<T>(arch.patch_dim(), d);
  p.patch_embed_b = Matrix<T>(1, d);
  p.pos_embed = Matrix<T>(arch.seq_len(), d);
  p.mask_token = Matrix<T>(1, d);
  p.layers.resize(arch.layers);
  for (auto& l : p.layers) {
    l.ln1_gamma = Matrix<T>(1, d, T(1));
    l.ln1_beta = Matrix<T>(1, d);
    l.wq = Matrix<T>(d, d);
    l.bq = Matrix<T>(1, d);
    l.wk = Matrix<T>(d, d);
    l.bk = Matrix<T>(1, d);
    l.wv = Matrix<T>(d, d);
    l.bv = Matrix<T>(1, d);
    l.wo = Matrix<T>(d, d);
    l.bo = Matrix<T>(1, d);
    l.ln2_gamma = Matrix<T>(1, d, T(1));
    l.ln2_beta = Matrix<T>(1, d);
    l.w1 = Matrix<T>(d, arch.mlp_hidden());
    l.b1 = Matrix<T>(1, arch.mlp_hidden());
    l.w2 = Matrix<T>(arch.mlp_hidden(), d);
    l.b2 = Matrix<T>(1, d);
  }
  p.lnf_gamma = Matrix<T>(1, d, T(1));
  p.lnf_beta = Matrix<T>(1, d);
  p.head_w1 = Matrix<T>(d, arch.head_hidden());
  p.head_b1 = Matrix<T>(1, arch.head_hidden());
  p.head_w2 = Matrix<T>(arch.head_hidden(), arch.vocab);
  p.head_b2 = Matrix<T>(1, arch.vocab);
  return p;
}

// Truncated-normal (sigma=0.02) weights, zero biases, zero pos_embed,
// unit layer-norm scales. Deterministic given seed.
template <typename T>
ModelParams<T> init_params(const Arch& arch, uint64_t seed) {
  ModelParams<T> p = make_params_shell<T>(arch);
  Rng rng(mix_seed(seed, 0x696e6974ULL));
  auto tn = [&](Matrix<T>& m) {
    for (auto& v : m.data) v = static_cast<T>(rng.trunc_normal(0.02));
  };
  tn(p.patch_embed_w);
  tn(p.mask_token);
  for (auto& l : p.layers) {
    tn(l.wq);
    tn(l.wk);
    tn(l.wv);
    tn(l.wo);
    tn(l.w1);
    tn(l.w2);
  }
  tn(p.head_w1);
  tn(p.head_w2);
  return p;
}

constexpr double kLayerNormEps = 1e-6;

template <typename T>
struct LnCache {
  Matrix<T> xhat;       // normalized input
  Matrix<T> out;        // gamma*xhat + beta
  std::vector<T> inv;   // 1/sqrt(var+eps) per row
};

template <typename T>
void layer_norm(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                LnCache<T>& cache) {
  const int d = x.cols;
  cache.xhat = Matrix<T>(x.rows, d);
  cache.out = Matrix<T>(x.rows, d);
  cache.inv.resize(x.rows);
  for (int i = 0; i < x.rows; ++i) {
    const T* r = x.row(i);
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += r[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      const T c = r[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.inv[i] = inv;
    T* xh = cache.xhat.row(i);
    T* o = cache.out.row(i);
    for (int j = 0; j < d; ++j) {
      xh[j] = (r[j] - mean) * inv;
      o[j] = gamma.data[j] * xh[j] + beta.data[j];
    }
  }
}

template <typename T>
Matrix<T> layer_norm_backward(const LnCache<T>& cache, const Matrix<T>& gamma,
                              const Matrix<T>& d_out, Matrix<T>& d_gamma,
                              Matrix<T>& d_beta) {
  const int d = cache.xhat.cols;
  Matrix<T> dx(cache.xhat.rows, d);
  for (int i = 0; i < cache.xhat.rows; ++i) {
    const T* xh = cache.xhat.row(i);
    const T* do_ = d_out.row(i);
    T* dxr = dx.row(i);
    T sum_dxhat = T(0);
    T sum_dxhat_xhat = T(0);
    for (int j = 0; j < d; ++j) {
      d_gamma.data[j] += do_[j] * xh[j];
      d_beta.data[j] += do_[j];
      const T dxhat = do_[j] * gamma.data[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xh[j];
    }
    const T mean_dxhat = sum_dxhat / static_cast<T>(d);
    const T mean_dxhat_xhat = sum_dxhat_xhat / static_cast<T>(d);
    for (int j = 0; j < d; ++j) {
      const T dxhat = do_[j] * gamma.data[j];
      dxr[j] = cache.inv[i] * (dxhat - mean_dxhat - xh[j] * mean_dxhat_xhat);
    }
  }
  return dx;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

template <typename T>
struct LayerCache {
  Matrix<T> x_in;
  LnCache<T> ln1;
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> attn;  // per-head N x N softmax weights
  Matrix<T> attn_concat;
  Matrix<T> x_mid;
  LnCache<T> ln2;
  Matrix<T> mlp_pre, mlp_act;
};

template <typename T>
struct ForwardCache {
  Matrix<T> input;
  std::vector<LayerCache<T>> layers;
  LnCache<T> lnf;
  Matrix<T> features;            // N x D, after the final layer norm
  Matrix<T> head_pre, head_act;  // N x 2D
  Matrix<T> logits;              // N x V, softmax of these is q(f(x))
};

// Pre-norm transformer blocks (LN -> MHSA -> residual; LN -> MLP ->
// residual), final LN -> features, MLP head -> token-id logits. Input must
// already be mask-substituted and position-embedded.
template <typename T>
ForwardCache<T> vit_forward(const ModelParams<T>& p, const Matrix<T>& embedded) {
  const Arch& a = p.arch;
  const int n = embedded.rows;
  const int dh = a.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  ForwardCache<T> cache;
  cache.input = embedded;
  cache.layers.resize(a.layers);
  Matrix<T> x = embedded;
  for (int li = 0; li < a.layers; ++li) {
    LayerCache<T>& lc = cache.layers[li];
    const LayerParams<T>& lp = p.layers[li];
    lc.x_in = x;
    layer_norm(x, lp.ln1_gamma, lp.ln1_beta, lc.ln1);
    lc.q = linear(lc.ln1.out, lp.wq, lp.bq);
    lc.k = linear(lc.ln1.out, lp.wk, lp.bk);
    lc.v = linear(lc.ln1.out, lp.wv, lp.bv);
    lc.attn_concat = Matrix<T>(n, a.dim);
    lc.attn.resize(a.heads);
    for (int h = 0; h < a.heads; ++h) {
      const Matrix<T> qh = copy_cols(lc.q, h * dh, (h + 1) * dh);
      const Matrix<T> kh = copy_cols(lc.k, h * dh, (h + 1) * dh);
      const Matrix<T> vh = copy_cols(lc.v, h * dh, (h + 1) * dh);
      Matrix<T> s = matmul_bt(qh, kh);
      scale_inplace(s, scale);
      softmax_rows(s);
      lc.attn[h] = s;
      paste_cols(lc.attn_concat, matmul(s, vh), h * dh);
    }
    add_inplace(x, linear(lc.attn_concat, lp.wo, lp.bo));
    lc.x_mid = x;
    layer_norm(x, lp.ln2_gamma, lp.ln2_beta, lc.ln2);
    lc.mlp_pre = linear(lc.ln2.out, lp.w1, lp.b1);
    lc.mlp_act = Matrix<T>(lc.mlp_pre.rows, lc.mlp_pre.cols);
    for (size_t i = 0; i < lc.mlp_pre.data.size(); ++i)
      lc.mlp_act.data[i] = gelu(lc.mlp_pre.data[i]);
    add_inplace(x, linear(lc.mlp_act, lp.w2, lp.b2));
    if (!all_finite(x))
      throw NumericError("vit_forward: non-finite activation in layer " + std::to_string(li));
  }
  layer_norm(x, p.lnf_gamma, p.lnf_beta, cache.lnf);
  cache.features = cache.lnf.out;
  cache.head_pre = linear(cache.features, p.head_w1, p.head_b1);
  cache.head_act = Matrix<T>(cache.head_pre.rows, cache.head_pre.cols);
  for (size_t i = 0; i < cache.head_pre.data.size(); ++i)
    cache.head_act.data[i] = gelu(cache.head_pre.data[i]);
  cache.logits = linear(cache.head_act, p.head_w2, p.head_b2);
  if (!all_finite(cache.logits)) throw NumericError("vit_forward: non-finite head logits");
  return cache;
}

// Exact analytic gradients. d_logits and/or d_features may be null;
// parameter gradients accumulate into `grads`; the return value is the
// gradient w.r.t. the embedded input.
template <typename T>
Matrix<T> vit_backward(const ModelParams<T>& p, const ForwardCache<T>& cache,
                       const std::type_identity_t<Matrix<T>>* d_logits,
                       const std::type_identity_t<Matrix<T>>* d_features,
                       ModelParams<T>& grads) {
  const Arch& a = p.arch;
  if (static_cast<int>(cache.layers.size()) != a.layers || cache.features.rows == 0)
    throw ConfigError("vit_backward: missing or mismatched forward cache");
  const int n = cache.input.rows;
  const int dh = a.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Matrix<T> d_feat(n, a.dim);
  if (d_logits != nullptr) {
    Matrix<T> d_act;
    linear_backward(cache.head_act, p.head_w2, *d_logits, d_act, grads.head_w2, grads.head_b2);
    Matrix<T> d_pre(d_act.rows, d_act.cols);
    for (size_t i = 0; i < d_act.data.size(); ++i)
      d_pre.data[i] = d_act.data[i] * gelu_derivative(cache.head_pre.data[i]);
    linear_backward(cache.features, p.head_w1, d_pre, d_feat, grads.head_w1, grads.head_b1);
  }
  if (d_features != nullptr) add_inplace(d_feat, *d_features);

  Matrix<T> dx = layer_norm_backward(cache.lnf, p.lnf_gamma, d_feat, grads.lnf_gamma,
                                     grads.lnf_beta);
  for (int li = a.layers - 1; li >= 0; --li) {
    const LayerCache<T>& lc = cache.layers[li];
    const LayerParams<T>& lp = p.layers[li];
    LayerParams<T>& lg = grads.layers[li];

    // MLP branch
    Matrix<T> d_act;
    linear_backward(lc.mlp_act, lp.w2, dx, d_act, lg.w2, lg.b2);
    Matrix<T> d_pre(d_act.rows, d_act.cols);
    for (size_t i = 0; i < d_act.data.size(); ++i)
      d_pre.data[i] = d_act.data[i] * gelu_derivative(lc.mlp_pre.data[i]);
    Matrix<T> d_ln2_out;
    linear_backward(lc.ln2.out, lp.w1, d_pre, d_ln2_out, lg.w1, lg.b1);
    Matrix<T> d_mid = layer_norm_backward(lc.ln2, lp.ln2_gamma, d_ln2_out, lg.ln2_gamma,
                                          lg.ln2_beta);
    add_inplace(d_mid, dx);  // residual

    // Attention branch
    Matrix<T> d_concat;
    linear_backward(lc.attn_concat, lp.wo, d_mid, d_concat, lg.wo, lg.bo);
    Matrix<T> dq(n, a.dim), dk(n, a.dim), dv(n, a.dim);
    for (int h = 0; h < a.heads; ++h) {
      const Matrix<T> qh = copy_cols(lc.q, h * dh, (h + 1) * dh);
      const Matrix<T> kh = copy_cols(lc.k, h * dh, (h + 1) * dh);
      const Matrix<T> vh = copy_cols(lc.v, h * dh, (h + 1) * dh);
      const Matrix<T> d_oh = copy_cols(d_concat, h * dh, (h + 1) * dh);
      const Matrix<T>& attn = lc.attn[h];
      Matrix<T> d_attn = matmul_bt(d_oh, vh);       // N x N
      Matrix<T> d_vh = matmul(transpose(attn), d_oh);
      // softmax backward per row
      Matrix<T> d_s(n, n);
      for (int i = 0; i < n; ++i) {
        const T* ar = attn.row(i);
        const T* dar = d_attn.row(i);
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += ar[j] * dar[j];
        T* dsr = d_s.row(i);
        for (int j = 0; j < n; ++j) dsr[j] = ar[j] * (dar[j] - dot) * scale;
      }
      paste_cols(dq, matmul(d_s, kh), h * dh);
      paste_cols(dk, matmul(transpose(d_s), qh), h * dh);
      paste_cols(dv, d_vh, h * dh);
    }
    Matrix<T> d_ln1_out, tmp;
    linear_backward(lc.ln1.out, lp.wq, dq, d_ln1_out, lg.wq, lg.bq);
    linear_backward(lc.ln1.out, lp.wk, dk, tmp, lg.wk, lg.bk);
    add_inplace(d_ln1_out, tmp);
    linear_backward(lc.ln1.out, lp.wv, dv, tmp, lg.wv, lg.bv);
    add_inplace(d_ln1_out, tmp);
    Matrix<T> d_in = layer_norm_backward(lc.ln1, lp.ln1_gamma, d_ln1_out, lg.ln1_gamma,
                                         lg.ln1_beta);
    add_inplace(d_in, d_mid);  // residual
    dx = std::move(d_in);
  }
  return dx;
}

// Patch embedding -> mask-token substitution -> positional embedding.
template <typename T>
Matrix<T> embed_patches(const ModelParams<T>& p, const Matrix<T>& patch_matrix,
                        const MaskSpec* mask) {
  Matrix<T> x = linear(patch_matrix, p.patch_embed_w, p.patch_embed_b);
  if (mask != nullptr) x = apply_mask_tokens(x, *mask, p.mask_token);
  add_inplace(x, p.pos_embed);
  return x;
}

// Gradients of embed_patches into patch_embed/pos_embed/mask_token.
template <typename T>
void embed_backward(const ModelParams<T>& p, const Matrix<T>& patch_matrix,
                    const MaskSpec* mask, const Matrix<T>& d_embedded,
                    ModelParams<T>& grads) {
  add_inplace(grads.pos_embed, d_embedded);
  Matrix<T> d_lin = d_embedded;
  if (mask != nullptr) {
    for (int i : mask->masked) {
      T* r = d_lin.row(i);
      for (int j = 0; j < d_lin.cols; ++j) {
        grads.mask_token.data[j] += r[j];
        r[j] = T(0);
      }
    }
  }
  Matrix<T> unused;
  linear_backward(patch_matrix, p.patch_embed_w, d_lin, unused, grads.patch_embed_w,
                  grads.patch_embed_b);
}

}  // namespace mcmim
