#pragma once

#include "vqtok/rng.hpp"
#include "vqtok/tape.hpp"

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace vqtok {

/// Optimizer group a parameter belongs to. Learning rates and freeze rules
/// are applied per group.
enum class ParamGroup { Encoder, Decoder, Codebook, Discriminator, Head };

/// Persistent trainable array. Lives in a ParamStore across steps; the tape
/// re-leafs it every step. m/v are AdamW moments (float32).
struct Param {
  std::string name;
  ParamGroup group = ParamGroup::Decoder;
  Mat value;
  Mat grad;
  Mat m;
  Mat v;
  bool trainable = true;

  void zero_grad() { grad.setZero(); }
};

/// Owning container with stable addresses and deterministic iteration order
/// (creation order). Checkpoint key order derives from it.
class ParamStore {
 public:
  Param& create(const std::string& name, ParamGroup group, int rows, int cols) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate param: " + name);
    params_.emplace_back();
    Param& p = params_.back();
    p.name = name;
    p.group = group;
    p.value = Mat::Zero(rows, cols);
    p.grad = Mat::Zero(rows, cols);
    p.m = Mat::Zero(rows, cols);
    p.v = Mat::Zero(rows, cols);
    by_name_[name] = &p;
    return p;
  }

  Param* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }
  const Param* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::vector<Param*> group(ParamGroup g) {
    std::vector<Param*> out;
    for (Param& p : params_)
      if (p.group == g) out.push_back(&p);
    return out;
  }
  std::vector<Param*> all() {
    std::vector<Param*> out;
    for (Param& p : params_) out.push_back(&p);
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  void set_trainable(ParamGroup g, bool t) {
    for (Param& p : params_)
      if (p.group == g) p.trainable = t;
  }

  void zero_grads() {
    for (Param& p : params_) p.zero_grad();
  }

 private:
  std::deque<Param> params_;
  std::unordered_map<std::string, Param*> by_name_;
};

// ---- initializers ----

inline void init_normal(Param& p, Rng& rng, float stddev) {
  for (int i = 0; i < p.value.rows(); ++i)
    for (int j = 0; j < p.value.cols(); ++j) p.value(i, j) = rng.gaussian(0.0f, stddev);
}

/// Xavier-uniform for a rows x cols weight (fan_in = rows, fan_out = cols).
inline void init_xavier(Param& p, Rng& rng) {
  float limit = std::sqrt(6.0f / static_cast<float>(p.value.rows() + p.value.cols()));
  for (int i = 0; i < p.value.rows(); ++i)
    for (int j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = static_cast<float>(rng.uniform(-limit, limit));
}

// ---- layers ----

/// y = x * w + b, w: in x out, b: 1 x out.
struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;

  static Linear make(ParamStore& ps, const std::string& name, ParamGroup g, int in, int out,
                     Rng& rng) {
    Linear l;
    l.w = &ps.create(name + ".w", g, in, out);
    l.b = &ps.create(name + ".b", g, 1, out);
    init_xavier(*l.w, rng);
    return l;
  }

  Var operator()(Tape& t, Var x) const {
    return t.add_rowvec(t.matmul(x, t.param(*w)), t.param(*b));
  }
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;

  static LayerNorm make(ParamStore& ps, const std::string& name, ParamGroup g, int dim) {
    LayerNorm ln;
    ln.gamma = &ps.create(name + ".g", g, 1, dim);
    ln.beta = &ps.create(name + ".b", g, 1, dim);
    ln.gamma->value.setOnes();
    return ln;
  }

  Var operator()(Tape& t, Var x) const {
    return t.layer_norm(x, t.param(*gamma), t.param(*beta));
  }
};

/// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  Linear qkv, proj, fc1, fc2;
  int dim = 0;
  int heads = 0;
  bool causal = false;

  static TransformerBlock make(ParamStore& ps, const std::string& name, ParamGroup g, int dim,
                               int heads, float mlp_ratio, bool causal, Rng& rng) {
    TransformerBlock b;
    b.dim = dim;
    b.heads = heads;
    b.causal = causal;
    b.ln1 = LayerNorm::make(ps, name + ".ln1", g, dim);
    b.ln2 = LayerNorm::make(ps, name + ".ln2", g, dim);
    b.qkv = Linear::make(ps, name + ".qkv", g, dim, 3 * dim, rng);
    b.proj = Linear::make(ps, name + ".proj", g, dim, dim, rng);
    int hidden = static_cast<int>(dim * mlp_ratio);
    b.fc1 = Linear::make(ps, name + ".fc1", g, dim, hidden, rng);
    b.fc2 = Linear::make(ps, name + ".fc2", g, hidden, dim, rng);
    return b;
  }

  /// x: (batch*n) x dim tokens; attention is confined to each image's n rows.
  Var operator()(Tape& t, Var x, int batch, int n) const {
    Var h = ln1(t, x);
    Var qkv_out = qkv(t, h);
    Var q = t.slice_cols(qkv_out, 0, dim);
    Var k = t.slice_cols(qkv_out, dim, dim);
    Var v = t.slice_cols(qkv_out, 2 * dim, dim);
    Var scores = t.attn_scores(q, k, batch, n, heads, causal);
    Var probs = t.softmax_rows(scores);
    Var ctx = t.attn_apply(probs, v, batch, n, heads);
    x = t.add(x, proj(t, ctx));
    Var m = ln2(t, x);
    m = fc2(t, t.gelu(fc1(t, m)));
    return t.add(x, m);
  }
};

// ---- optimizer ----

/// Decoupled-weight-decay Adam. Moments live in the Params; `t` is the shared
/// bias-correction step for the group this instance drives.
struct AdamW {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
  int64_t t = 0;

  void step(std::span<Param* const> params, float lr) {
    ++t;
    float bc1 = 1.0f - std::pow(beta1, static_cast<float>(t));
    float bc2 = 1.0f - std::pow(beta2, static_cast<float>(t));
    for (Param* p : params) {
      if (!p->trainable) continue;
      p->m = beta1 * p->m + (1.0f - beta1) * p->grad;
      p->v = (beta2 * p->v).array() + (1.0f - beta2) * p->grad.array().square();
      Mat mhat = p->m / bc1;
      Mat vhat = p->v / bc2;
      p->value.array() -=
          lr * (mhat.array() / (vhat.array().sqrt() + eps) + weight_decay * p->value.array());
    }
  }
};

/// Global-norm gradient clip over trainable params. Returns the pre-clip norm.
inline double clip_global_norm(std::span<Param* const> params, double max_norm) {
  double sq = 0.0;
  for (const Param* p : params) {
    if (!p->trainable) continue;
    sq += p->grad.cast<double>().array().square().sum();
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    float s = static_cast<float>(max_norm / norm);
    for (Param* p : params) {
      if (!p->trainable) continue;
      p->grad *= s;
    }
  }
  return norm;
}

/// FNV-1a over parameter bytes in creation order. Freeze-contract checksums.
inline uint64_t checksum(std::span<Param* const> params) {
  uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const void* data, size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Param* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), sizeof(float) * p->value.size());
  }
  return h;
}

}  // namespace vqtok
