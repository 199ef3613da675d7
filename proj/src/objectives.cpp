#include "vqtok/objectives.hpp"

#include <cmath>

namespace vqtok {

float l2_recon(const ImageBatch& x, const ImageBatch& x_rec) {
  if (x.b != x_rec.b || x.h != x_rec.h || x.w != x_rec.w)
    throw ShapeError("l2_recon: image batch shapes differ");
  double acc = 0.0;
  for (size_t i = 0; i < x.pixels.size(); ++i) {
    double d = static_cast<double>(x.pixels[i]) - static_cast<double>(x_rec.pixels[i]);
    acc += d * d;
  }
  return static_cast<float>(acc / static_cast<double>(x.pixels.size()));
}

float distill_loss(const Mat& z_i, const Mat& teacher_z) {
  if (z_i.rows() != teacher_z.rows() || z_i.cols() != teacher_z.cols())
    throw ShapeError("distill_loss: feature shapes differ");
  return static_cast<float>((z_i - teacher_z).cast<double>().array().square().mean());
}

double stage1_total(const LossBreakdown& parts, const LossWeights& w, bool disc_active) {
  w.validate();
  double adv = disc_active ? w.lambda_g * parts.adversarial : 0.0;
  return parts.l2 + w.perceptual_weight * parts.perceptual + adv + parts.quant;
}

double stage2_total(const LossBreakdown& parts, const LossWeights& w, bool disc_active) {
  return stage1_total(parts, w, disc_active) + w.lambda_d * parts.distill;
}

// ---- perceptual proxy ----

namespace {

Mat frozen_weights(Rng& rng, int in, int out) {
  Mat w(in, out);
  float stddev = std::sqrt(2.0f / static_cast<float>(in));
  for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.gaussian(0.0f, stddev);
  return w;
}

}  // namespace

PerceptualProxy::PerceptualProxy(int image_size, uint64_t seed) : size_(image_size), seed_(seed) {
  if (image_size % 8 != 0 || image_size < 8)
    throw std::invalid_argument("PerceptualProxy: image size must be a multiple of 8");
  Rng rng(seed);
  w1_ = frozen_weights(rng, 3 * 2 * 2, 24);
  w2_ = frozen_weights(rng, 24 * 2 * 2, 48);
  w3_ = frozen_weights(rng, 48 * 2 * 2, 64);
}

Var PerceptualProxy::features(Tape& t, Var tokens, int batch, int p_in, int stage_end) const {
  // stage 1: fold 2x2 pixel neighbourhoods
  auto m1 = layout_map(batch, size_, size_, 3, p_in, 2);
  Var h = t.reindex(tokens, batch * (size_ / 2) * (size_ / 2), 12, m1);
  h = t.tanh_act(t.matmul(h, t.input(w1_)));
  if (stage_end == 1) return h;
  // stage 2: treat the 24-channel grid as an image and fold again
  auto m2 = layout_map(batch, size_ / 2, size_ / 2, 24, 1, 2);
  h = t.reindex(h, batch * (size_ / 4) * (size_ / 4), 96, m2);
  h = t.tanh_act(t.matmul(h, t.input(w2_)));
  if (stage_end == 2) return h;
  auto m3 = layout_map(batch, size_ / 4, size_ / 4, 48, 1, 2);
  h = t.reindex(h, batch * (size_ / 8) * (size_ / 8), 192, m3);
  return t.tanh_act(t.matmul(h, t.input(w3_)));
}

Var PerceptualProxy::loss(Tape& t, Var a, Var b, int batch, int p_in) const {
  if (t.val(a).rows() != t.val(b).rows() || t.val(a).cols() != t.val(b).cols())
    throw ShapeError("perceptual loss: token shapes differ");
  Var total;
  for (int stage = 1; stage <= 3; ++stage) {
    Var fa = features(t, a, batch, p_in, stage);
    Var fb = features(t, b, batch, p_in, stage);
    Var m = t.mse(fa, fb);
    total = stage == 1 ? m : t.add(total, m);
  }
  return t.scale(total, 1.0f / 3.0f);
}

float PerceptualProxy::operator()(const ImageBatch& x, const ImageBatch& y) const {
  if (x.b != y.b || x.h != y.h || x.w != y.w)
    throw ShapeError("perceptual loss: image batch shapes differ");
  if (x.h != size_ || x.w != size_)
    throw ShapeError("perceptual loss: image size does not match proxy");
  Tape t;
  t.set_inference(true);
  Var a = t.input(patchify(x, 1));
  Var b = t.input(patchify(y, 1));
  return t.val(loss(t, a, b, x.b, 1))(0, 0);
}

// ---- discriminator ----

Discriminator::Discriminator(ParamStore& ps, int image_size, Rng& rng) : size_(image_size) {
  if (image_size % 8 != 0 || image_size < 8)
    throw std::invalid_argument("Discriminator: image size must be a multiple of 8");
  cells_ = (image_size / 8) * (image_size / 8);
  l1_ = Linear::make(ps, "disc.l1", ParamGroup::Discriminator, 3 * 4 * 4, 64, rng);
  l2_ = Linear::make(ps, "disc.l2", ParamGroup::Discriminator, 64 * 2 * 2, 128, rng);
  head_ = Linear::make(ps, "disc.head", ParamGroup::Discriminator, 128, 1, rng);
}

Var Discriminator::score_map(Tape& t, Var tokens, int batch, int p_in) const {
  auto m1 = layout_map(batch, size_, size_, 3, p_in, 4);
  Var h = t.reindex(tokens, batch * (size_ / 4) * (size_ / 4), 48, m1);
  h = t.leaky_relu(l1_(t, h), 0.2f);
  auto m2 = layout_map(batch, size_ / 4, size_ / 4, 64, 1, 2);
  h = t.reindex(h, batch * (size_ / 8) * (size_ / 8), 256, m2);
  h = t.leaky_relu(l2_(t, h), 0.2f);
  return head_(t, h);
}

Var hinge_disc_loss(Tape& t, Var real_scores, Var fake_scores) {
  Var ones_r = t.input(Mat::Ones(t.val(real_scores).rows(), 1));
  Var ones_f = t.input(Mat::Ones(t.val(fake_scores).rows(), 1));
  Var real_term = t.mean_all(t.relu(t.sub(ones_r, real_scores)));
  Var fake_term = t.mean_all(t.relu(t.add(ones_f, fake_scores)));
  return t.add(real_term, fake_term);
}

Var hinge_gen_loss(Tape& t, Var fake_scores) { return t.scale(t.mean_all(fake_scores), -1.0f); }

float hinge_disc_value(const Mat& real_scores, const Mat& fake_scores) {
  float real_term = (1.0f - real_scores.array()).max(0.0f).mean();
  float fake_term = (1.0f + fake_scores.array()).max(0.0f).mean();
  return real_term + fake_term;
}

float hinge_gen_value(const Mat& fake_scores) { return -fake_scores.mean(); }

std::pair<float, float> adversarial_pair(const ImageBatch& x, const ImageBatch& x_rec,
                                         const Discriminator& disc, int p_in) {
  if (x.b != x_rec.b || x.h != x_rec.h || x.w != x_rec.w)
    throw ShapeError("adversarial_pair: image batch shapes differ");
  Tape t;
  t.set_inference(true);
  Var real = disc.score_map(t, t.input(patchify(x, p_in)), x.b, p_in);
  Var fake = disc.score_map(t, t.input(patchify(x_rec, p_in)), x.b, p_in);
  return {hinge_gen_value(t.val(fake)), hinge_disc_value(t.val(real), t.val(fake))};
}

}  // namespace vqtok
