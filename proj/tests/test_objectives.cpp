#include "vqtok/objectives.hpp"

#include "vqtok/autoencoder.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace vqtok;
using vqtok::testing::grad_close;
using vqtok::testing::random_mat;

namespace {

ImageBatch filled(int b, int h, int w, float v) {
  ImageBatch img = ImageBatch::zeros(b, h, w);
  for (auto& p : img.pixels) p = v;
  return img;
}

ImageBatch random_images(Rng& rng, int b, int h, int w) {
  ImageBatch img = ImageBatch::zeros(b, h, w);
  for (auto& v : img.pixels) v = std::tanh(rng.gaussian());
  return img;
}

}  // namespace

TEST_CASE("l2_recon examples and scalar oracle") {
  ImageBatch x = filled(1, 8, 8, 0.0f);
  CHECK(l2_recon(x, x) == 0.0f);

  ImageBatch y = filled(1, 8, 8, 0.1f);
  CHECK(l2_recon(x, y) == doctest::Approx(0.01).epsilon(1e-6));

  Rng rng(1);
  ImageBatch a = random_images(rng, 2, 8, 8);
  ImageBatch b = random_images(rng, 2, 8, 8);
  double acc = 0.0;
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    double d = a.pixels[i] - b.pixels[i];
    acc += d * d;
  }
  CHECK(l2_recon(a, b) == doctest::Approx(acc / a.pixels.size()).epsilon(1e-7));

  ImageBatch c = filled(1, 4, 8, 0.0f);
  CHECK_THROWS_AS((void)l2_recon(x, c), ShapeError);
}

TEST_CASE("perceptual proxy determinism, symmetry and sensitivity") {
  Rng rng(2);
  ImageBatch x = random_images(rng, 2, 16, 16);
  ImageBatch y = random_images(rng, 2, 16, 16);

  PerceptualProxy proxy(16, 77);
  CHECK(proxy(x, x) == 0.0f);
  CHECK(proxy(x, y) == proxy(y, x));
  CHECK(proxy(x, y) > 0.0f);

  // same seed, same function; different seed, different features
  PerceptualProxy same(16, 77);
  CHECK(proxy(x, y) == same(x, y));
  PerceptualProxy other(16, 78);
  CHECK(proxy(x, y) != other(x, y));

  // a large block difference must register strictly positive
  ImageBatch z = x;
  for (int yy = 0; yy < 8; ++yy)
    for (int xx = 0; xx < 8; ++xx)
      for (int c = 0; c < 3; ++c) z.at(0, yy, xx, c) = -z.at(0, yy, xx, c) * 0.9f + 0.1f;
  CHECK(proxy(x, z) > 1e-4f);
}

TEST_CASE("hinge arithmetic at the documented anchor points") {
  // D identically zero: disc loss 2.0, gen loss 0
  Mat zeros = Mat::Zero(6, 1);
  CHECK(hinge_disc_value(zeros, zeros) == doctest::Approx(2.0));
  CHECK(hinge_gen_value(zeros) == 0.0f);

  // saturated correct separation: zero disc loss
  Mat real = Mat::Constant(6, 1, 1.5f);
  Mat fake = Mat::Constant(6, 1, -1.2f);
  CHECK(hinge_disc_value(real, fake) == 0.0f);
  CHECK(hinge_gen_value(fake) == doctest::Approx(1.2f));

  // tape and value paths agree
  Tape t;
  Rng rng(3);
  Mat r = random_mat(rng, 8, 1), f = random_mat(rng, 8, 1);
  CHECK(t.val(hinge_disc_loss(t, t.input(r), t.input(f)))(0, 0) ==
        doctest::Approx(hinge_disc_value(r, f)).epsilon(1e-6));
  CHECK(t.val(hinge_gen_loss(t, t.input(f)))(0, 0) ==
        doctest::Approx(hinge_gen_value(f)).epsilon(1e-6));
}

TEST_CASE("discriminator scores and gen-loss gradient vs finite differences") {
  ParamStore ps;
  Rng rng(4);
  Discriminator disc(ps, 16, rng);
  CHECK(disc.cells() == 4);

  ImageBatch x = random_images(rng, 2, 16, 16);
  Mat tokens = patchify(x, 1);

  // adversarial_pair on equal images: every score appears on both sides
  auto [gen_v, disc_v] = adversarial_pair(x, x, disc, 1);
  Tape ti;
  ti.set_inference(true);
  Mat scores = ti.val(disc.score_map(ti, ti.input(tokens), 2, 1));
  CHECK(gen_v == doctest::Approx(-scores.mean()).epsilon(1e-6));
  CHECK(disc_v == doctest::Approx(hinge_disc_value(scores, scores)).epsilon(1e-6));

  // dL_gen/dx_rec against central differences
  Tape t;
  Var xin = t.input_grad(tokens);
  Var loss = hinge_gen_loss(t, disc.score_map(t, xin, 2, 1));
  t.backward(loss);
  Mat analytic = t.grad(xin);

  Rng pick(5);
  for (int trial = 0; trial < 20; ++trial) {
    int r = static_cast<int>(pick.below(static_cast<uint32_t>(tokens.rows())));
    int c = static_cast<int>(pick.below(static_cast<uint32_t>(tokens.cols())));
    float saved = tokens(r, c);
    double h = 1e-3;  // small step keeps leaky-relu kink error below tolerance
    auto eval = [&]() {
      Tape tt;
      tt.set_inference(true);
      return static_cast<double>(
          tt.val(hinge_gen_loss(tt, disc.score_map(tt, tt.input(tokens), 2, 1)))(0, 0));
    };
    tokens(r, c) = saved + static_cast<float>(h);
    double up = eval();
    tokens(r, c) = saved - static_cast<float>(h);
    double dn = eval();
    tokens(r, c) = saved;
    double num = (up - dn) / (2.0 * h);
    INFO("entry (", r, ",", c, ") analytic=", analytic(r, c), " numeric=", num);
    CHECK(grad_close(analytic(r, c), num, 1e-3, 3e-4));
  }
}

TEST_CASE("disc_loss sends exactly zero gradient to the generator side") {
  ParamStore ps;
  Rng rng(6);
  Discriminator disc(ps, 16, rng);
  Param& gen_w = ps.create("gen.w", ParamGroup::Decoder, 3, 3);
  init_normal(gen_w, rng, 0.05f);

  ImageBatch x = random_images(rng, 1, 16, 16);
  Mat real_tokens = patchify(x, 1);

  Tape t;
  // x_rec produced by a generator parameter, then detached for the disc update
  Var x_rec = t.tanh_act(t.matmul(t.input(real_tokens), t.param(gen_w)));
  Var fake_scores = disc.score_map(t, t.detach(x_rec), 1, 1);
  Var real_scores = disc.score_map(t, t.input(real_tokens), 1, 1);
  Var loss = hinge_disc_loss(t, real_scores, fake_scores);
  ps.zero_grads();
  t.backward(loss);

  CHECK(gen_w.grad.isZero(0.0f));  // exactly zero through the detach
  bool disc_has_grad = false;
  for (Param* p : ps.group(ParamGroup::Discriminator))
    disc_has_grad = disc_has_grad || !p->grad.isZero(0.0f);
  CHECK(disc_has_grad);
}

TEST_CASE("distill loss examples and teacher detachment") {
  Rng rng(7);
  Mat z = random_mat(rng, 6, 8);
  CHECK(distill_loss(z, z) == 0.0f);

  // unit difference on one of N elements contributes 1/N
  Mat z2 = z;
  z2(3, 4) += 1.0f;
  CHECK(distill_loss(z2, z) == doctest::Approx(1.0 / 48.0).epsilon(1e-6));

  Mat wrong(5, 8);
  CHECK_THROWS_AS((void)distill_loss(z, wrong), ShapeError);

  // tape path: teacher params receive exactly zero gradient
  ParamStore student_ps, teacher_ps;
  Param& sw = student_ps.create("s.w", ParamGroup::Encoder, 8, 8);
  Param& tw = teacher_ps.create("t.w", ParamGroup::Encoder, 8, 8);
  init_normal(sw, rng, 0.3f);
  tw.value = sw.value * 0.9f;  // distinct outputs so the loss has a live gradient

  Tape t;
  Var x = t.input(random_mat(rng, 4, 8));
  Var student = t.matmul(x, t.param(sw));
  t.set_inference(true);  // teacher forward runs detached
  Var teacher = t.matmul(x, t.param(tw));
  t.set_inference(false);
  Var loss = t.mse(student, t.detach(teacher));
  student_ps.zero_grads();
  teacher_ps.zero_grads();
  t.backward(loss);
  CHECK(tw.grad.isZero(0.0f));
  CHECK(!sw.grad.isZero(0.0f));

  // identical teacher/student outputs give exactly zero loss
  Tape t2;
  Var s2 = t2.matmul(x, t2.param(sw));
  CHECK(t2.val(t2.mse(s2, t2.detach(s2)))(0, 0) == 0.0f);
}

TEST_CASE("stage totals") {
  LossWeights w;  // perceptual 1.1, lambda_g 0.1, lambda_d 1.0

  LossBreakdown parts;
  CHECK(stage1_total(parts, w, false) == 0.0);

  parts.l2 = 1.0;
  parts.perceptual = 1.0;
  parts.quant = 1.0;
  parts.adversarial = 5.0;
  // before the discriminator start the adversarial term is excluded
  CHECK(stage1_total(parts, w, false) == doctest::Approx(3.1));
  CHECK(stage1_total(parts, w, true) == doctest::Approx(3.6));

  // stage 2 at zero distill equals stage 1
  parts.distill = 0.0;
  CHECK(stage2_total(parts, w, false) == stage1_total(parts, w, false));
  parts.distill = 0.5;
  CHECK(stage2_total(parts, w, false) == doctest::Approx(3.6));

  // recomposition oracle on random parts
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    LossBreakdown p;
    p.l2 = rng.next_double();
    p.perceptual = rng.next_double();
    p.adversarial = rng.next_double() - 0.5;
    p.quant = rng.next_double();
    p.distill = rng.next_double();
    double manual = p.l2 + static_cast<double>(w.perceptual_weight) * p.perceptual +
                    static_cast<double>(w.lambda_g) * p.adversarial + p.quant +
                    static_cast<double>(w.lambda_d) * p.distill;
    CHECK(stage2_total(p, w, true) == doctest::Approx(manual).epsilon(1e-6));
  }

  LossWeights bad;
  bad.lambda_g = -1.0f;
  CHECK_THROWS_AS((void)stage1_total(parts, bad, true), std::invalid_argument);
}
