#include "vqtok/tape.hpp"

#include "vqtok/nn.hpp"

#include <cmath>

namespace vqtok {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

constexpr float kMaskValue = -1e30f;

}  // namespace

Var Tape::param(Param& p) {
  bool live = p.trainable && !inference_;
  Var v = push(p.value, live);
  if (live) param_leaves_.emplace_back(v.id, &p);
  return v;
}

const Mat& Tape::grad(Var v) const {
  int id = check(v);
  if (!nodes_[id].grad_live) {
    const_cast<Node&>(nodes_[id]).grad = Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
    const_cast<Node&>(nodes_[id]).grad_live = true;
  }
  return nodes_[id].grad;
}

Var Tape::add(Var a, Var b) {
  require_same_shape(val(a), val(b), "add");
  return op(val(a) + val(b), {a, b}, [a, b, self = size()](Tape& t) {
    t.acc(a.id, t.g(self));
    t.acc(b.id, t.g(self));
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(val(a), val(b), "sub");
  return op(val(a) - val(b), {a, b}, [a, b, self = size()](Tape& t) {
    t.acc(a.id, t.g(self));
    t.acc(b.id, Mat(-t.g(self)));
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(val(a), val(b), "mul");
  return op(val(a).cwiseProduct(val(b)), {a, b}, [a, b, self = size()](Tape& t) {
    t.acc(a.id, t.g(self).cwiseProduct(t.val(b)));
    t.acc(b.id, t.g(self).cwiseProduct(t.val(a)));
  });
}

Var Tape::scale(Var a, float s) {
  return op(val(a) * s, {a}, [a, s, self = size()](Tape& t) { t.acc(a.id, Mat(t.g(self) * s)); });
}

Var Tape::add_rowvec(Var a, Var r) {
  const Mat& av = val(a);
  const Mat& rv = val(r);
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw ShapeError("add_rowvec: bias shape");
  Mat out = av;
  out.rowwise() += rv.row(0);
  return op(std::move(out), {a, r}, [a, r, self = size()](Tape& t) {
    t.acc(a.id, t.g(self));
    t.acc(r.id, Mat(t.g(self).colwise().sum()));
  });
}

Var Tape::add_rowtile(Var a, Var tile, int tiles) {
  const Mat& av = val(a);
  const Mat& tv = val(tile);
  if (av.cols() != tv.cols() || av.rows() != tv.rows() * tiles)
    throw ShapeError("add_rowtile: tile shape");
  int n = static_cast<int>(tv.rows());
  Mat out = av;
  for (int i = 0; i < tiles; ++i) out.middleRows(i * n, n) += tv;
  return op(std::move(out), {a, tile}, [a, tile, tiles, n, self = size()](Tape& t) {
    t.acc(a.id, t.g(self));
    Mat dt = Mat::Zero(n, t.val(tile).cols());
    for (int i = 0; i < tiles; ++i) dt += t.g(self).middleRows(i * n, n);
    t.acc(tile.id, dt);
  });
}

Var Tape::tanh_act(Var a) {
  Mat out = val(a).array().tanh();
  return op(std::move(out), {a}, [a, self = size()](Tape& t) {
    const Mat& y = t.val(Var{self});
    t.acc(a.id, Mat(t.g(self).array() * (1.0f - y.array().square())));
  });
}

Var Tape::gelu(Var a) {
  const Mat& x = val(a);
  Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.size(); ++i) {
    float v = x.data()[i];
    out.data()[i] = 0.5f * v * (1.0f + std::erf(v * 0.7071067811865476f));
  }
  return op(std::move(out), {a}, [a, self = size()](Tape& t) {
    const Mat& x = t.val(a);
    Mat d(x.rows(), x.cols());
    for (int i = 0; i < x.size(); ++i) {
      float v = x.data()[i];
      float cdf = 0.5f * (1.0f + std::erf(v * 0.7071067811865476f));
      float pdf = 0.3989422804014327f * std::exp(-0.5f * v * v);
      d.data()[i] = cdf + v * pdf;
    }
    t.acc(a.id, Mat(t.g(self).cwiseProduct(d)));
  });
}

Var Tape::relu(Var a) {
  Mat out = val(a).cwiseMax(0.0f);
  return op(std::move(out), {a}, [a, self = size()](Tape& t) {
    Mat mask = (t.val(a).array() > 0.0f).cast<float>();
    t.acc(a.id, Mat(t.g(self).cwiseProduct(mask)));
  });
}

Var Tape::leaky_relu(Var a, float slope) {
  const Mat& x = val(a);
  Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.size(); ++i) {
    float v = x.data()[i];
    out.data()[i] = v > 0.0f ? v : slope * v;
  }
  return op(std::move(out), {a}, [a, slope, self = size()](Tape& t) {
    const Mat& x = t.val(a);
    const Mat& dy = t.g(self);
    Mat d(x.rows(), x.cols());
    for (int i = 0; i < x.size(); ++i)
      d.data()[i] = dy.data()[i] * (x.data()[i] > 0.0f ? 1.0f : slope);
    t.acc(a.id, d);
  });
}

Var Tape::matmul(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  if (av.cols() != bv.rows()) throw ShapeError("matmul: inner dims");
  return op(av * bv, {a, b}, [a, b, self = size()](Tape& t) {
    t.acc(a.id, Mat(t.g(self) * t.val(b).transpose()));
    t.acc(b.id, Mat(t.val(a).transpose() * t.g(self)));
  });
}

Var Tape::softmax_rows(Var a) {
  const Mat& x = val(a);
  Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    float m = x.row(i).maxCoeff();
    Eigen::ArrayXf e = (x.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return op(std::move(out), {a}, [a, self = size()](Tape& t) {
    const Mat& p = t.val(Var{self});
    const Mat& dy = t.g(self);
    Mat dx(p.rows(), p.cols());
    for (int i = 0; i < p.rows(); ++i) {
      float dot = dy.row(i).dot(p.row(i));
      dx.row(i) = p.row(i).cwiseProduct((dy.row(i).array() - dot).matrix());
    }
    t.acc(a.id, dx);
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, float eps) {
  const Mat& xv = val(x);
  const Mat& gv = val(gamma);
  const Mat& bv = val(beta);
  if (gv.rows() != 1 || gv.cols() != xv.cols() || bv.rows() != 1 || bv.cols() != xv.cols())
    throw ShapeError("layer_norm: affine shape");
  int c = static_cast<int>(xv.cols());
  auto xhat = std::make_shared<Mat>(xv.rows(), c);
  auto inv_sd = std::make_shared<Eigen::ArrayXf>(xv.rows());
  Mat out(xv.rows(), c);
  for (int i = 0; i < xv.rows(); ++i) {
    float mu = xv.row(i).mean();
    float var = (xv.row(i).array() - mu).square().mean();
    float is = 1.0f / std::sqrt(var + eps);
    (*inv_sd)(i) = is;
    xhat->row(i) = ((xv.row(i).array() - mu) * is).matrix();
    out.row(i) = xhat->row(i).cwiseProduct(gv.row(0)) + bv.row(0);
  }
  return op(std::move(out), {x, gamma, beta},
            [x, gamma, beta, xhat, inv_sd, c, self = size()](Tape& t) {
              const Mat& dy = t.g(self);
              const Mat& gv = t.val(gamma);
              Mat dgamma = Mat::Zero(1, c);
              Mat dbeta = Mat::Zero(1, c);
              Mat dx(dy.rows(), c);
              for (int i = 0; i < dy.rows(); ++i) {
                Eigen::RowVectorXf gdy = dy.row(i).cwiseProduct(gv.row(0));
                float m1 = gdy.mean();
                float m2 = gdy.cwiseProduct(xhat->row(i)).mean();
                dx.row(i) = ((gdy.array() - m1 - xhat->row(i).array() * m2) * (*inv_sd)(i)).matrix();
                dgamma += dy.row(i).cwiseProduct(xhat->row(i));
                dbeta += dy.row(i);
              }
              t.acc(x.id, dx);
              t.acc(gamma.id, dgamma);
              t.acc(beta.id, dbeta);
            });
}

Var Tape::gather_rows(Var a, std::shared_ptr<const std::vector<int>> idx) {
  const Mat& av = val(a);
  Mat out(static_cast<int>(idx->size()), av.cols());
  for (size_t i = 0; i < idx->size(); ++i) {
    int r = (*idx)[i];
    if (r < 0 || r >= av.rows()) throw std::invalid_argument("gather_rows: index out of range");
    out.row(static_cast<int>(i)) = av.row(r);
  }
  return op(std::move(out), {a}, [a, idx, self = size()](Tape& t) {
    Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
    const Mat& dy = t.g(self);
    for (size_t i = 0; i < idx->size(); ++i) da.row((*idx)[i]) += dy.row(static_cast<int>(i));
    t.acc(a.id, da);
  });
}

Var Tape::reindex(Var a, int rows, int cols, std::shared_ptr<const std::vector<int>> map) {
  const Mat& av = val(a);
  if (static_cast<int>(map->size()) != rows * cols ||
      static_cast<Eigen::Index>(map->size()) != av.size())
    throw ShapeError("reindex: map size");
  Mat out(rows, cols);
  const float* src = av.data();
  float* dst = out.data();
  for (size_t i = 0; i < map->size(); ++i) dst[i] = src[(*map)[i]];
  return op(std::move(out), {a}, [a, map, self = size()](Tape& t) {
    Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
    const float* dy = t.g(self).data();
    float* d = da.data();
    for (size_t i = 0; i < map->size(); ++i) d[(*map)[i]] += dy[i];
    t.acc(a.id, da);
  });
}

Var Tape::slice_cols(Var a, int c0, int len) {
  const Mat& av = val(a);
  if (c0 < 0 || len <= 0 || c0 + len > av.cols()) throw ShapeError("slice_cols: range");
  return op(av.middleCols(c0, len), {a}, [a, c0, len, self = size()](Tape& t) {
    Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
    da.middleCols(c0, len) = t.g(self);
    t.acc(a.id, da);
  });
}

Var Tape::sum_all(Var a) {
  Mat out(1, 1);
  out(0, 0) = val(a).sum();
  return op(std::move(out), {a}, [a, self = size()](Tape& t) {
    t.acc(a.id, Mat(Mat::Constant(t.val(a).rows(), t.val(a).cols(), t.g(self)(0, 0))));
  });
}

Var Tape::mean_all(Var a) {
  float inv = 1.0f / static_cast<float>(val(a).size());
  Mat out(1, 1);
  out(0, 0) = val(a).sum() * inv;
  return op(std::move(out), {a}, [a, inv, self = size()](Tape& t) {
    t.acc(a.id, Mat(Mat::Constant(t.val(a).rows(), t.val(a).cols(), t.g(self)(0, 0) * inv)));
  });
}

Var Tape::row_block_mean(Var a, int block) {
  const Mat& av = val(a);
  if (block <= 0 || av.rows() % block != 0) throw ShapeError("row_block_mean: block size");
  int out_rows = static_cast<int>(av.rows()) / block;
  Mat out(out_rows, av.cols());
  for (int i = 0; i < out_rows; ++i)
    out.row(i) = av.middleRows(i * block, block).colwise().mean();
  return op(std::move(out), {a}, [a, block, out_rows, self = size()](Tape& t) {
    float inv = 1.0f / static_cast<float>(block);
    Mat da(t.val(a).rows(), t.val(a).cols());
    for (int i = 0; i < out_rows; ++i)
      da.middleRows(i * block, block) = (t.g(self).row(i) * inv).replicate(block, 1);
    t.acc(a.id, da);
  });
}

Var Tape::attn_scores(Var q, Var k, int batch, int n, int heads, bool causal) {
  const Mat& qv = val(q);
  const Mat& kv = val(k);
  require_same_shape(qv, kv, "attn_scores");
  if (qv.rows() != static_cast<Eigen::Index>(batch) * n || qv.cols() % heads != 0)
    throw ShapeError("attn_scores: layout");
  int dh = static_cast<int>(qv.cols()) / heads;
  float sc = 1.0f / std::sqrt(static_cast<float>(dh));
  Mat out(static_cast<Eigen::Index>(batch) * heads * n, n);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto qb = qv.block(b * n, h * dh, n, dh);
      auto kb = kv.block(b * n, h * dh, n, dh);
      out.middleRows((b * heads + h) * n, n).noalias() = sc * (qb * kb.transpose());
    }
  }
  if (causal) {
    for (int r = 0; r < out.rows(); ++r) {
      int i = r % n;
      for (int j = i + 1; j < n; ++j) out(r, j) = kMaskValue;
    }
  }
  return op(std::move(out), {q, k}, [q, k, batch, n, heads, dh, sc, self = size()](Tape& t) {
    const Mat& dy = t.g(self);
    const Mat& qv = t.val(q);
    const Mat& kv = t.val(k);
    Mat dq = Mat::Zero(qv.rows(), qv.cols());
    Mat dk = Mat::Zero(kv.rows(), kv.cols());
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto ds = dy.middleRows((b * heads + h) * n, n);
        auto qb = qv.block(b * n, h * dh, n, dh);
        auto kb = kv.block(b * n, h * dh, n, dh);
        dq.block(b * n, h * dh, n, dh).noalias() += sc * (ds * kb);
        dk.block(b * n, h * dh, n, dh).noalias() += sc * (ds.transpose() * qb);
      }
    }
    t.acc(q.id, dq);
    t.acc(k.id, dk);
  });
}

Var Tape::attn_apply(Var probs, Var v, int batch, int n, int heads) {
  const Mat& pv = val(probs);
  const Mat& vv = val(v);
  if (pv.rows() != static_cast<Eigen::Index>(batch) * heads * n || pv.cols() != n ||
      vv.rows() != static_cast<Eigen::Index>(batch) * n || vv.cols() % heads != 0)
    throw ShapeError("attn_apply: layout");
  int dh = static_cast<int>(vv.cols()) / heads;
  Mat out(static_cast<Eigen::Index>(batch) * n, vv.cols());
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto pb = pv.middleRows((b * heads + h) * n, n);
      auto vb = vv.block(b * n, h * dh, n, dh);
      out.block(b * n, h * dh, n, dh).noalias() = pb * vb;
    }
  }
  return op(std::move(out), {probs, v}, [probs, v, batch, n, heads, dh, self = size()](Tape& t) {
    const Mat& dy = t.g(self);
    const Mat& pv = t.val(probs);
    const Mat& vv = t.val(v);
    Mat dp = Mat::Zero(pv.rows(), pv.cols());
    Mat dv = Mat::Zero(vv.rows(), vv.cols());
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto dyb = dy.block(b * n, h * dh, n, dh);
        auto pb = pv.middleRows((b * heads + h) * n, n);
        auto vb = vv.block(b * n, h * dh, n, dh);
        dp.middleRows((b * heads + h) * n, n).noalias() += dyb * vb.transpose();
        dv.block(b * n, h * dh, n, dh).noalias() += pb.transpose() * dyb;
      }
    }
    t.acc(probs.id, dp);
    t.acc(v.id, dv);
  });
}

Var Tape::cross_entropy_rows(Var logits, std::shared_ptr<const std::vector<int>> targets,
                             std::shared_ptr<const std::vector<float>> mask) {
  const Mat& x = val(logits);
  if (static_cast<Eigen::Index>(targets->size()) != x.rows() ||
      (mask && static_cast<Eigen::Index>(mask->size()) != x.rows()))
    throw ShapeError("cross_entropy_rows: target count");
  auto probs = std::make_shared<Mat>(x.rows(), x.cols());
  double total = 0.0;
  double wsum = 0.0;
  for (int i = 0; i < x.rows(); ++i) {
    int tgt = (*targets)[i];
    if (tgt < 0 || tgt >= x.cols()) throw std::invalid_argument("cross_entropy_rows: target range");
    float w = mask ? (*mask)[i] : 1.0f;
    float m = x.row(i).maxCoeff();
    Eigen::ArrayXf e = (x.row(i).array() - m).exp();
    float z = e.sum();
    probs->row(i) = (e / z).matrix();
    if (w != 0.0f) {
      total += w * (std::log(z) + m - x(i, tgt));
      wsum += w;
    }
  }
  if (wsum == 0.0) throw std::invalid_argument("cross_entropy_rows: empty mask");
  Mat out(1, 1);
  out(0, 0) = static_cast<float>(total / wsum);
  float inv_w = static_cast<float>(1.0 / wsum);
  return op(std::move(out), {logits},
            [logits, targets, mask, probs, inv_w, self = size()](Tape& t) {
              float dl = t.g(self)(0, 0);
              Mat dx = *probs;
              for (int i = 0; i < dx.rows(); ++i) {
                dx(i, (*targets)[i]) -= 1.0f;
                float w = mask ? (*mask)[i] : 1.0f;
                dx.row(i) *= dl * inv_w * w;
              }
              t.acc(logits.id, dx);
            });
}

void Tape::backward(Var root) {
  int rid = check(root);
  if (nodes_[rid].value.rows() != 1 || nodes_[rid].value.cols() != 1)
    throw std::invalid_argument("backward: root must be 1x1 scalar");
  if (!nodes_[rid].requires_grad) return;  // constant graph; nothing to do
  nodes_[rid].grad = Mat::Ones(1, 1);
  nodes_[rid].grad_live = true;
  for (int i = rid; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad_live && n.backprop) n.backprop(*this);
  }
  for (auto& [id, p] : param_leaves_) {
    if (nodes_[id].grad_live) p->grad += nodes_[id].grad;
  }
}

}  // namespace vqtok
