#pragma once

#include <bit>
#include <cmath>
#include <limits>
#include <cstdint>
#include <string>
#include <vector>

#include "etbert/errors.hpp"
#include "etbert/rng.hpp"
#include "etbert/tensor.hpp"
#include "etbert/tokens.hpp"

namespace etbert {

struct ModelConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  int ffn = 256;
  int vocab = kVocabSize;
  int max_positions = 128;
  double dropout = 0.1;

  static ModelConfig desk() { return ModelConfig{}; }
  static ModelConfig paper() {
    ModelConfig c;
    c.layers = 12;
    c.hidden = 768;
    c.heads = 12;
    c.ffn = 3072;
    c.max_positions = 512;
    return c;
  }
  void check() const {
    if (layers < 0 || hidden <= 0 || heads <= 0 || ffn <= 0 || vocab <= 0 || max_positions <= 0)
      throw Incompatible("non-positive model dimension");
    if (hidden % heads != 0) throw Incompatible("hidden size not divisible by head count");
  }
};

constexpr double kLnEps = 1e-12;
constexpr double kInitStd = 0.02;

// exp specialised per scalar: double keeps libm accuracy for gradient checks,
// float trades a few ulp for a fully vectorisable polynomial.
inline double fast_exp(double x) { return std::exp(x); }
inline float fast_exp(float x) {
  if (x < -87.0f) return 0.0f;
  if (x > 88.0f) return std::numeric_limits<float>::infinity();
  float t = x * 1.44269504f;
  float fi = std::floor(t + 0.5f);
  float r = x - fi * 0.693147180559945f;
  float p = 1.0f +
            r * (1.0f +
                 r * (0.5f +
                      r * (0.16666667f +
                           r * (0.041666667f + r * (0.0083333333f + r * 0.0013888889f)))));
  return p * std::bit_cast<float>(uint32_t(127 + int(fi)) << 23);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }
inline float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.70710678f)); }
inline double gelu_grad(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
  return cdf + x * std::exp(-0.5 * x * x) * 0.3989422804014327;
}
inline float gelu_grad(float x) {
  float cdf = 0.5f * (1.0f + std::erf(x * 0.70710678f));
  return cdf + x * fast_exp(-0.5f * x * x) * 0.39894228f;
}

template <class T>
inline T vdot(const T* a, const T* b, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; i++) s += a[i] * b[i];
  return s;
}

template <class T>
inline void vaxpy(T alpha, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; i++) y[i] += alpha * x[i];
}

// y[M x N] = x[M x K] . w[K x N] + b
template <class T>
void linear_forward(const T* x, size_t M, size_t K, const Tensor<T>& w, const Tensor<T>& b,
                    T* y) {
  size_t N = w.cols();
  for (size_t m = 0; m < M; m++) {
    T* yr = y + m * N;
    for (size_t n = 0; n < N; n++) yr[n] = b.v[n];
    const T* xr = x + m * K;
    for (size_t k = 0; k < K; k++) vaxpy(xr[k], w.row(k), yr, N);
  }
}

template <class T>
void linear_backward(const T* x, size_t M, size_t K, const Tensor<T>& w, const T* dy,
                     T* dx /*nullable*/, Tensor<T>& dw, Tensor<T>& db) {
  size_t N = w.cols();
  for (size_t m = 0; m < M; m++) {
    const T* dyr = dy + m * N;
    const T* xr = x + m * K;
    for (size_t k = 0; k < K; k++) {
      if (dx) dx[m * K + k] += vdot(dyr, w.row(k), N);
      vaxpy(xr[k], dyr, dw.row(k), N);
    }
    vaxpy(T(1), dyr, db.v.data(), N);
  }
}

template <class T>
struct LayerWeights {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ln2_g, ln2_b;
};

template <class T>
struct Weights {
  Tensor<T> tok, pos, seg;      // embedding tables
  Tensor<T> eln_g, eln_b;       // embedding layer norm
  std::vector<LayerWeights<T>> layers;
  Tensor<T> pool_w, pool_b;
  Tensor<T> mbm_w, mbm_b;       // mbm_w is [vocab][hidden], row per vocab id
  Tensor<T> sbp_w, sbp_b;
  Tensor<T> cls_w, cls_b;       // empty until a classifier head is attached
};

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* t;
  bool decay;
};

template <class T>
std::vector<ParamRef<T>> param_refs(Weights<T>& w) {
  std::vector<ParamRef<T>> out;
  auto add = [&](const std::string& name, Tensor<T>& t, bool decay) {
    out.push_back({name, &t, decay});
  };
  add("embeddings.token", w.tok, true);
  add("embeddings.position", w.pos, true);
  add("embeddings.segment", w.seg, true);
  add("embeddings.ln.gamma", w.eln_g, false);
  add("embeddings.ln.beta", w.eln_b, false);
  for (size_t l = 0; l < w.layers.size(); l++) {
    std::string p = "layer." + std::to_string(l) + ".";
    LayerWeights<T>& lw = w.layers[l];
    add(p + "attn.wq", lw.wq, true);
    add(p + "attn.bq", lw.bq, false);
    add(p + "attn.wk", lw.wk, true);
    add(p + "attn.bk", lw.bk, false);
    add(p + "attn.wv", lw.wv, true);
    add(p + "attn.bv", lw.bv, false);
    add(p + "attn.wo", lw.wo, true);
    add(p + "attn.bo", lw.bo, false);
    add(p + "ln1.gamma", lw.ln1_g, false);
    add(p + "ln1.beta", lw.ln1_b, false);
    add(p + "ffn.w1", lw.w1, true);
    add(p + "ffn.b1", lw.b1, false);
    add(p + "ffn.w2", lw.w2, true);
    add(p + "ffn.b2", lw.b2, false);
    add(p + "ln2.gamma", lw.ln2_g, false);
    add(p + "ln2.beta", lw.ln2_b, false);
  }
  add("pooler.w", w.pool_w, true);
  add("pooler.b", w.pool_b, false);
  add("mbm.w", w.mbm_w, true);
  add("mbm.b", w.mbm_b, false);
  add("sbp.w", w.sbp_w, true);
  add("sbp.b", w.sbp_b, false);
  if (w.cls_w.numel()) {
    add("classifier.w", w.cls_w, true);
    add("classifier.b", w.cls_b, false);
  }
  return out;
}

template <class T>
struct LayerCache {
  Tensor<T> x;             // input, len x H
  Tensor<T> q, k, v;       // len x H
  Tensor<T> probs;         // A x len x len, pre-dropout attention rows
  Tensor<T> ctx;           // len x H concatenated head context (post-dropout probs . V)
  Tensor<T> r1, x1, u, r2; // residual sums, post-LN1, pre-GELU, residual 2
  std::vector<T> ln1_mu, ln1_r, ln2_mu, ln2_r;
  std::vector<uint8_t> m_attn, m_o, m_z;  // dropout keep masks, empty in eval mode
};

template <class T>
struct Cache {
  int len = 0;
  TokenSequence seq;
  Tensor<T> esum;          // pre-LN embedding sum
  std::vector<T> eln_mu, eln_r;
  std::vector<uint8_t> m_emb;
  Tensor<T> x0;            // post-LN post-dropout embedding output
  std::vector<LayerCache<T>> layer;
  Tensor<T> hidden;        // len x H final states
  std::vector<T> pool_pre; // pooler pre-activation
  std::vector<T> pooled;   // tanh output
  T keep_inv = 1;          // 1/(1-p) when dropout active, else 1
  bool train = false;
};

namespace detail {

template <class T>
void ln_forward(const T* x, size_t rows, size_t h, const Tensor<T>& g, const Tensor<T>& b,
                T* y, std::vector<T>& mu_out, std::vector<T>& r_out) {
  mu_out.resize(rows);
  r_out.resize(rows);
  for (size_t i = 0; i < rows; i++) {
    const T* xr = x + i * h;
    T mu = 0;
    for (size_t j = 0; j < h; j++) mu += xr[j];
    mu /= T(h);
    T var = 0;
    for (size_t j = 0; j < h; j++) {
      T d = xr[j] - mu;
      var += d * d;
    }
    var /= T(h);
    T r = T(1) / std::sqrt(var + T(kLnEps));
    mu_out[i] = mu;
    r_out[i] = r;
    T* yr = y + i * h;
    for (size_t j = 0; j < h; j++) yr[j] = (xr[j] - mu) * r * g.v[j] + b.v[j];
  }
}

template <class T>
void ln_backward(const T* x, size_t rows, size_t h, const Tensor<T>& g,
                 const std::vector<T>& mu, const std::vector<T>& r, const T* dy, T* dx,
                 Tensor<T>& dg, Tensor<T>& db) {
  for (size_t i = 0; i < rows; i++) {
    const T* xr = x + i * h;
    const T* dyr = dy + i * h;
    T* dxr = dx + i * h;
    T m1 = 0, m2 = 0;
    for (size_t j = 0; j < h; j++) {
      T xhat = (xr[j] - mu[i]) * r[i];
      T dxhat = dyr[j] * g.v[j];
      m1 += dxhat;
      m2 += dxhat * xhat;
      dg.v[j] += dyr[j] * xhat;
      db.v[j] += dyr[j];
    }
    m1 /= T(h);
    m2 /= T(h);
    for (size_t j = 0; j < h; j++) {
      T xhat = (xr[j] - mu[i]) * r[i];
      T dxhat = dyr[j] * g.v[j];
      dxr[j] += r[i] * (dxhat - m1 - xhat * m2);
    }
  }
}

template <class T>
void dropout_forward(T* x, size_t n, std::vector<uint8_t>& mask, Rng& rng, T keep_inv,
                     double p) {
  mask.resize(n);
  for (size_t i = 0; i < n; i++) {
    bool keep = !rng.bernoulli(p);
    mask[i] = keep;
    x[i] = keep ? x[i] * keep_inv : T(0);
  }
}

template <class T>
void dropout_backward(const std::vector<uint8_t>& mask, T keep_inv, const T* dy, T* dx,
                      size_t n) {
  if (mask.empty()) {
    for (size_t i = 0; i < n; i++) dx[i] = dy[i];
    return;
  }
  for (size_t i = 0; i < n; i++) dx[i] = mask[i] ? dy[i] * keep_inv : T(0);
}

}  // namespace detail

template <class T>
class Model {
public:
  ModelConfig cfg;
  Weights<T> w;

  void allocate() {
    cfg.check();
    size_t H = size_t(cfg.hidden), F = size_t(cfg.ffn), V = size_t(cfg.vocab);
    w.tok = Tensor<T>({V, H});
    w.pos = Tensor<T>({size_t(cfg.max_positions), H});
    w.seg = Tensor<T>({2, H});
    w.eln_g = Tensor<T>({H});
    w.eln_b = Tensor<T>({H});
    w.layers.assign(size_t(cfg.layers), {});
    for (auto& l : w.layers) {
      l.wq = Tensor<T>({H, H});
      l.bq = Tensor<T>({H});
      l.wk = Tensor<T>({H, H});
      l.bk = Tensor<T>({H});
      l.wv = Tensor<T>({H, H});
      l.bv = Tensor<T>({H});
      l.wo = Tensor<T>({H, H});
      l.bo = Tensor<T>({H});
      l.ln1_g = Tensor<T>({H});
      l.ln1_b = Tensor<T>({H});
      l.w1 = Tensor<T>({H, F});
      l.b1 = Tensor<T>({F});
      l.w2 = Tensor<T>({F, H});
      l.b2 = Tensor<T>({H});
      l.ln2_g = Tensor<T>({H});
      l.ln2_b = Tensor<T>({H});
    }
    w.pool_w = Tensor<T>({H, H});
    w.pool_b = Tensor<T>({H});
    w.mbm_w = Tensor<T>({V, H});
    w.mbm_b = Tensor<T>({V});
    w.sbp_w = Tensor<T>({H, 2});
    w.sbp_b = Tensor<T>({2});
  }

  void attach_classifier(int classes, uint64_t seed) {
    size_t H = size_t(cfg.hidden);
    w.cls_w = Tensor<T>({H, size_t(classes)});
    w.cls_b = Tensor<T>({size_t(classes)});
    Rng rng(mix_seed({seed, 0x434c53ull}));
    for (auto& v : w.cls_w.v) v = T(rng.truncated_normal(kInitStd));
  }

  // Classifier head over a feature vector wider than H (concatenated groups).
  void attach_wide_classifier(int classes, size_t feat_dim, uint64_t seed) {
    w.cls_w = Tensor<T>({feat_dim, size_t(classes)});
    w.cls_b = Tensor<T>({size_t(classes)});
    Rng rng(mix_seed({seed, 0x434c53ull}));
    for (auto& v : w.cls_w.v) v = T(rng.truncated_normal(kInitStd));
  }

  void init(uint64_t seed) {
    allocate();
    Rng rng(mix_seed({seed, 0x494e4954ull}));
    for (auto& ref : param_refs(w)) {
      const std::string& n = ref.name;
      bool is_ln_gamma = n.ends_with(".gamma");
      bool is_bias_like = n.ends_with(".beta") || ref.t->shape.size() == 1;
      if (is_ln_gamma) {
        std::fill(ref.t->v.begin(), ref.t->v.end(), T(1));
      } else if (is_bias_like) {
        ref.t->zero();
      } else {
        for (auto& v : ref.t->v) v = T(rng.truncated_normal(kInitStd));
      }
    }
  }

  // Forward over the real (non-PAD) prefix only. Dropping PAD rows entirely is
  // equivalent to additive -inf masking of PAD keys: no real row ever reads a
  // PAD row, and PAD outputs are never consumed.
  void forward(const TokenSequence& seq, Cache<T>& c, Rng* drop) const {
    size_t H = size_t(cfg.hidden), A = size_t(cfg.heads), D = H / A, F = size_t(cfg.ffn);
    size_t len = size_t(seq.real_len);
    bool train = drop != nullptr && cfg.dropout > 0.0;
    double p = cfg.dropout;
    c.len = int(len);
    c.seq = seq;
    c.train = train;
    c.keep_inv = T(1.0 / (1.0 - (train ? p : 0.0)));

    c.esum = Tensor<T>({len, H});
    for (size_t t = 0; t < len; t++) {
      TokenId id = seq.ids[t];
      if (id < 0 || id >= cfg.vocab) throw IdOutOfRange("token id " + std::to_string(id));
      if (t >= size_t(cfg.max_positions))
        throw ShapeMismatch("sequence longer than max_positions");
      T* row = c.esum.row(t);
      const T* te = w.tok.row(size_t(id));
      const T* pe = w.pos.row(t);
      const T* se = w.seg.row(seq.segments[t]);
      for (size_t j = 0; j < H; j++) row[j] = te[j] + pe[j] + se[j];
    }
    c.x0 = Tensor<T>({len, H});
    detail::ln_forward(c.esum.data(), len, H, w.eln_g, w.eln_b, c.x0.data(), c.eln_mu, c.eln_r);
    if (train) detail::dropout_forward(c.x0.data(), len * H, c.m_emb, *drop, c.keep_inv, p);
    else c.m_emb.clear();

    c.layer.assign(size_t(cfg.layers), {});
    Tensor<T>* x = &c.x0;
    T scale = T(1.0 / std::sqrt(double(D)));
    for (int li = 0; li < cfg.layers; li++) {
      LayerCache<T>& lc = c.layer[size_t(li)];
      const LayerWeights<T>& lw = w.layers[size_t(li)];
      lc.x = *x;
      lc.q = Tensor<T>({len, H});
      lc.k = Tensor<T>({len, H});
      lc.v = Tensor<T>({len, H});
      linear_forward(lc.x.data(), len, H, lw.wq, lw.bq, lc.q.data());
      linear_forward(lc.x.data(), len, H, lw.wk, lw.bk, lc.k.data());
      linear_forward(lc.x.data(), len, H, lw.wv, lw.bv, lc.v.data());

      lc.probs = Tensor<T>({A, len, len});
      lc.ctx = Tensor<T>({len, H});
      if (train) lc.m_attn.resize(A * len * len);
      for (size_t a = 0; a < A; a++) {
        size_t off = a * D;
        for (size_t i = 0; i < len; i++) {
          T* prow = lc.probs.data() + (a * len + i) * len;
          const T* qi = lc.q.row(i) + off;
          T mx = -std::numeric_limits<T>::infinity();
          for (size_t j = 0; j < len; j++) {
            prow[j] = vdot(qi, lc.k.row(j) + off, D) * scale;
            mx = std::max(mx, prow[j]);
          }
          T sum = 0;
          for (size_t j = 0; j < len; j++) {
            prow[j] = fast_exp(prow[j] - mx);
            sum += prow[j];
          }
          T inv = T(1) / sum;
          for (size_t j = 0; j < len; j++) prow[j] *= inv;

          T* crow = lc.ctx.row(i) + off;
          if (train) {
            uint8_t* mrow = lc.m_attn.data() + (a * len + i) * len;
            for (size_t j = 0; j < len; j++) {
              bool keep = !drop->bernoulli(p);
              mrow[j] = keep;
              if (keep) vaxpy(prow[j] * c.keep_inv, lc.v.row(j) + off, crow, D);
            }
          } else {
            for (size_t j = 0; j < len; j++) vaxpy(prow[j], lc.v.row(j) + off, crow, D);
          }
        }
      }

      lc.r1 = Tensor<T>({len, H});
      linear_forward(lc.ctx.data(), len, H, lw.wo, lw.bo, lc.r1.data());
      if (train) detail::dropout_forward(lc.r1.data(), len * H, lc.m_o, *drop, c.keep_inv, p);
      for (size_t i = 0; i < len * H; i++) lc.r1.v[i] += lc.x.v[i];
      lc.x1 = Tensor<T>({len, H});
      detail::ln_forward(lc.r1.data(), len, H, lw.ln1_g, lw.ln1_b, lc.x1.data(), lc.ln1_mu,
                         lc.ln1_r);

      lc.u = Tensor<T>({len, F});
      linear_forward(lc.x1.data(), len, H, lw.w1, lw.b1, lc.u.data());
      Tensor<T> g({len, F});
      for (size_t i = 0; i < len * F; i++) g.v[i] = gelu(lc.u.v[i]);
      lc.r2 = Tensor<T>({len, H});
      linear_forward(g.data(), len, F, lw.w2, lw.b2, lc.r2.data());
      if (train) detail::dropout_forward(lc.r2.data(), len * H, lc.m_z, *drop, c.keep_inv, p);
      for (size_t i = 0; i < len * H; i++) lc.r2.v[i] += lc.x1.v[i];

      if (li + 1 == cfg.layers) {
        c.hidden = Tensor<T>({len, H});
        detail::ln_forward(lc.r2.data(), len, H, lw.ln2_g, lw.ln2_b, c.hidden.data(), lc.ln2_mu,
                           lc.ln2_r);
        x = &c.hidden;
      } else {
        LayerCache<T>& next = c.layer[size_t(li) + 1];
        next.x = Tensor<T>({len, H});
        detail::ln_forward(lc.r2.data(), len, H, lw.ln2_g, lw.ln2_b, next.x.data(), lc.ln2_mu,
                           lc.ln2_r);
        x = &next.x;
      }
    }
    if (cfg.layers == 0) c.hidden = *x;

    c.pool_pre.assign(H, T(0));
    for (size_t j = 0; j < H; j++) c.pool_pre[j] = w.pool_b.v[j];
    const T* h0 = c.hidden.row(0);
    for (size_t k = 0; k < H; k++) vaxpy(h0[k], w.pool_w.row(k), c.pool_pre.data(), H);
    c.pooled.resize(H);
    for (size_t j = 0; j < H; j++) c.pooled[j] = std::tanh(c.pool_pre[j]);
  }

  // d_hidden: len x H gradient on the final hidden states (may be zero);
  // d_pooled: gradient on the pooled vector (empty to skip).
  // Token-table gradients go dense into g.tok when it is allocated, otherwise
  // into tok_rows as (row id, H-vector) pairs.
  void backward(const Cache<T>& c, Tensor<T>& d_hidden, const std::vector<T>& d_pooled,
                Weights<T>& g,
                std::vector<std::pair<int32_t, std::vector<T>>>* tok_rows) const {
    size_t H = size_t(cfg.hidden), A = size_t(cfg.heads), D = H / A, F = size_t(cfg.ffn);
    size_t len = size_t(c.len);
    T scale = T(1.0 / std::sqrt(double(D)));

    if (!d_pooled.empty()) {
      const T* h0 = c.hidden.row(0);
      std::vector<T> dpre(H);
      for (size_t j = 0; j < H; j++) {
        T th = c.pooled[j];
        dpre[j] = d_pooled[j] * (T(1) - th * th);
        g.pool_b.v[j] += dpre[j];
      }
      T* dh0 = d_hidden.row(0);
      for (size_t k = 0; k < H; k++) {
        vaxpy(h0[k], dpre.data(), g.pool_w.row(k), H);
        dh0[k] += vdot(w.pool_w.row(k), dpre.data(), H);
      }
    }

    Tensor<T> dx = d_hidden;  // gradient flowing into the top of the stack
    for (int li = cfg.layers - 1; li >= 0; li--) {
      const LayerCache<T>& lc = c.layer[size_t(li)];
      const LayerWeights<T>& lw = w.layers[size_t(li)];
      LayerWeights<T>& gl = g.layers[size_t(li)];

      Tensor<T> dr2({len, H});
      detail::ln_backward(lc.r2.data(), len, H, lw.ln2_g, lc.ln2_mu, lc.ln2_r, dx.data(),
                          dr2.data(), gl.ln2_g, gl.ln2_b);

      Tensor<T> dz({len, H});
      detail::dropout_backward(lc.m_z, c.keep_inv, dr2.data(), dz.data(), len * H);

      Tensor<T> gact({len, F}), dgact({len, F});
      for (size_t i = 0; i < len * F; i++) gact.v[i] = gelu(lc.u.v[i]);
      Tensor<T> du({len, F});
      linear_backward(gact.data(), len, F, lw.w2, dz.data(), dgact.data(), gl.w2, gl.b2);
      for (size_t i = 0; i < len * F; i++) du.v[i] = dgact.v[i] * gelu_grad(lc.u.v[i]);

      Tensor<T> dx1({len, H});
      linear_backward(lc.x1.data(), len, H, lw.w1, du.data(), dx1.data(), gl.w1, gl.b1);
      for (size_t i = 0; i < len * H; i++) dx1.v[i] += dr2.v[i];  // residual 2

      Tensor<T> dr1({len, H});
      detail::ln_backward(lc.r1.data(), len, H, lw.ln1_g, lc.ln1_mu, lc.ln1_r, dx1.data(),
                          dr1.data(), gl.ln1_g, gl.ln1_b);

      Tensor<T> do_({len, H});
      detail::dropout_backward(lc.m_o, c.keep_inv, dr1.data(), do_.data(), len * H);

      Tensor<T> dctx({len, H});
      linear_backward(lc.ctx.data(), len, H, lw.wo, do_.data(), dctx.data(), gl.wo, gl.bo);

      Tensor<T> dq({len, H}), dk({len, H}), dv({len, H});
      std::vector<T> dp(len), ds(len);
      for (size_t a = 0; a < A; a++) {
        size_t off = a * D;
        for (size_t i = 0; i < len; i++) {
          const T* prow = lc.probs.data() + (a * len + i) * len;
          const T* dci = dctx.row(i) + off;
          const uint8_t* mrow = lc.m_attn.empty() ? nullptr : lc.m_attn.data() + (a * len + i) * len;
          // dV and dP through the (dropped) prob row
          T dot_pp = 0;
          for (size_t j = 0; j < len; j++) {
            T pd = mrow ? (mrow[j] ? prow[j] * c.keep_inv : T(0)) : prow[j];
            if (pd != T(0)) vaxpy(pd, dci, dv.row(j) + off, D);
            T dpj = vdot(dci, lc.v.row(j) + off, D);
            dpj = mrow ? (mrow[j] ? dpj * c.keep_inv : T(0)) : dpj;
            dp[j] = dpj;
            dot_pp += dpj * prow[j];
          }
          for (size_t j = 0; j < len; j++) ds[j] = prow[j] * (dp[j] - dot_pp);
          T* dqi = dq.row(i) + off;
          for (size_t j = 0; j < len; j++) {
            T s = ds[j] * scale;
            if (s != T(0)) {
              vaxpy(s, lc.k.row(j) + off, dqi, D);
              vaxpy(s, lc.q.row(i) + off, dk.row(j) + off, D);
            }
          }
        }
      }

      Tensor<T> dxl({len, H});
      linear_backward(lc.x.data(), len, H, lw.wq, dq.data(), dxl.data(), gl.wq, gl.bq);
      linear_backward(lc.x.data(), len, H, lw.wk, dk.data(), dxl.data(), gl.wk, gl.bk);
      linear_backward(lc.x.data(), len, H, lw.wv, dv.data(), dxl.data(), gl.wv, gl.bv);
      for (size_t i = 0; i < len * H; i++) dxl.v[i] += dr1.v[i];  // residual 1
      dx = std::move(dxl);
    }

    Tensor<T> demb({len, H});
    detail::dropout_backward(c.m_emb, c.keep_inv, dx.data(), demb.data(), len * H);
    Tensor<T> desum({len, H});
    detail::ln_backward(c.esum.data(), len, H, w.eln_g, c.eln_mu, c.eln_r, demb.data(),
                        desum.data(), g.eln_g, g.eln_b);
    for (size_t t = 0; t < len; t++) {
      const T* row = desum.row(t);
      vaxpy(T(1), row, g.pos.row(t), H);
      vaxpy(T(1), row, g.seg.row(c.seq.segments[t]), H);
      if (g.tok.numel()) {
        vaxpy(T(1), row, g.tok.row(size_t(c.seq.ids[t])), H);
      } else if (tok_rows) {
        tok_rows->emplace_back(c.seq.ids[t], std::vector<T>(row, row + H));
      }
    }
  }
};

// Fresh gradient holder shaped like the weights; tok left empty when
// dense_tok is false (sparse rows are collected instead).
template <class T>
Weights<T> make_grads(const Model<T>& m, bool dense_tok) {
  Model<T> shadow;
  shadow.cfg = m.cfg;
  shadow.allocate();
  if (m.w.cls_w.numel()) {
    shadow.w.cls_w = Tensor<T>(m.w.cls_w.shape);
    shadow.w.cls_b = Tensor<T>(m.w.cls_b.shape);
  }
  Weights<T> g = std::move(shadow.w);
  for (auto& ref : param_refs(g)) ref.t->zero();
  if (!dense_tok) g.tok = Tensor<T>();
  return g;
}

// ---- heads ----

// logits = x . W + b for a single feature row
template <class T>
void head_forward(const Tensor<T>& W, const Tensor<T>& b, const T* x, T* logits) {
  size_t K = W.cols(), n = W.rows();
  for (size_t j = 0; j < K; j++) logits[j] = b.v[j];
  for (size_t k = 0; k < n; k++) vaxpy(x[k], W.row(k), logits, K);
}

// Cross entropy on a small logit vector. Fills dlogits (scaled) when given
// and probs when given; returns the loss.
template <class T>
double softmax_xent(const T* logits, size_t K, int target, T* dlogits, double grad_scale,
                    double* probs_out = nullptr) {
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < K; j++) mx = std::max(mx, double(logits[j]));
  double sum = 0;
  for (size_t j = 0; j < K; j++) sum += std::exp(double(logits[j]) - mx);
  double logsum = std::log(sum) + mx;
  double loss = logsum - double(logits[size_t(target)]);
  for (size_t j = 0; j < K; j++) {
    double pj = std::exp(double(logits[j]) - logsum);
    if (probs_out) probs_out[j] = pj;
    if (dlogits) dlogits[j] = T((pj - (int(j) == target ? 1.0 : 0.0)) * grad_scale);
  }
  return loss;
}

// Batched MBM head: K gathered hidden rows against the full vocabulary.
// Streams mbm_w in chunk passes: logits, softmax, scaled dlogits, then the
// dW / db / dh accumulations. Returns sum over rows of scale[r] * nll_r.
template <class T>
double mbm_batch(const Tensor<T>& W, const Tensor<T>& b, const T* h, const int32_t* targets,
                 const double* row_scale, size_t K, Tensor<T>& dW, Tensor<T>& db, T* dh) {
  size_t V = W.rows(), H = W.cols();
  constexpr size_t kChunk = 64;
  std::vector<T> lt(V * kChunk);
  std::vector<T> mx(kChunk), sums(kChunk), tlogit(kChunk);
  double loss = 0;
  for (size_t base = 0; base < K; base += kChunk) {
    size_t n = std::min(kChunk, K - base);
    for (size_t c = 0; c < n; c++) mx[c] = -std::numeric_limits<T>::infinity();
    for (size_t v = 0; v < V; v++) {
      const T* wr = W.row(v);
      T* ltr = lt.data() + v * kChunk;
      for (size_t c = 0; c < n; c++) {
        T val = vdot(wr, h + (base + c) * H, H) + b.v[v];
        ltr[c] = val;
        mx[c] = std::max(mx[c], val);
      }
    }
    for (size_t c = 0; c < n; c++) {
      sums[c] = 0;
      tlogit[c] = lt[size_t(targets[base + c]) * kChunk + c];
    }
    for (size_t v = 0; v < V; v++) {
      T* ltr = lt.data() + v * kChunk;
      for (size_t c = 0; c < n; c++) {
        T e = fast_exp(ltr[c] - mx[c]);
        ltr[c] = e;
        sums[c] += e;
      }
    }
    for (size_t c = 0; c < n; c++) {
      loss += row_scale[base + c] *
              (std::log(double(sums[c])) + double(mx[c]) - double(tlogit[c]));
      sums[c] = T(1) / sums[c];
    }
    for (size_t v = 0; v < V; v++) {
      const T* wr = W.row(v);
      T* dwr = dW.row(v);
      T* ltr = lt.data() + v * kChunk;
      T dbv = 0;
      for (size_t c = 0; c < n; c++) {
        T delta = T((double(ltr[c] * sums[c]) - (size_t(targets[base + c]) == v ? 1.0 : 0.0)) *
                    row_scale[base + c]);
        ltr[c] = delta;
        dbv += delta;
      }
      db.v[v] += dbv;
      for (size_t c = 0; c < n; c++) {
        T delta = ltr[c];
        if (delta != T(0)) {
          vaxpy(delta, h + (base + c) * H, dwr, H);
          vaxpy(delta, wr, dh + (base + c) * H, H);
        }
      }
    }
  }
  return loss;
}

// Forward-only mean MBM loss for anchors and evaluation.
template <class T>
double mbm_loss_eval(const Tensor<T>& W, const Tensor<T>& b, const Tensor<T>& hidden,
                     std::span<const int32_t> positions, std::span<const TokenId> targets) {
  if (positions.empty()) throw EmptyInput("no masked positions");
  size_t V = W.rows(), H = W.cols();
  double total = 0;
  for (size_t r = 0; r < positions.size(); r++) {
    const T* hr = hidden.row(size_t(positions[r]));
    double mx = -std::numeric_limits<double>::infinity();
    double tl = 0;
    std::vector<double> logit(V);
    for (size_t v = 0; v < V; v++) {
      logit[v] = double(vdot(W.row(v), hr, H) + b.v[v]);
      mx = std::max(mx, logit[v]);
    }
    tl = logit[size_t(targets[r])];
    double sum = 0;
    for (size_t v = 0; v < V; v++) sum += std::exp(logit[v] - mx);
    total += std::log(sum) + mx - tl;
  }
  return total / double(positions.size());
}

}  // namespace etbert
