#pragma once

#include "vqtok/autoencoder.hpp"
#include "vqtok/datakit.hpp"
#include "vqtok/nn.hpp"

#include <cstdint>
#include <utility>

namespace vqtok {

struct LossWeights {
  float lambda_g = 0.1f;           // adversarial weight
  float lambda_d = 1.0f;           // distillation weight
  float perceptual_weight = 1.1f;
  float beta = 0.25f;              // commitment weight inside the quant term

  void validate() const {
    for (float v : {lambda_g, lambda_d, perceptual_weight, beta})
      if (!(v >= 0.0f) || !std::isfinite(v))
        throw std::invalid_argument("LossWeights: weights must be finite and non-negative");
  }
};

/// Per-step scalar record. `quant` is the combined codebook + beta*commitment
/// term; `total` must recompose from the parts for the active stage.
struct LossBreakdown {
  double l2 = 0.0;
  double perceptual = 0.0;
  double adversarial = 0.0;
  double quant = 0.0;
  double distill = 0.0;
  double total = 0.0;
};

/// Mean squared error over all pixels and channels.
float l2_recon(const ImageBatch& x, const ImageBatch& x_rec);

/// Element-mean feature-matching loss against a detached teacher output.
float distill_loss(const Mat& z_i, const Mat& teacher_z);

/// l2 + perceptual_weight*perceptual + lambda_g*adversarial + quant, with the
/// adversarial term active only once the discriminator has started.
double stage1_total(const LossBreakdown& parts, const LossWeights& w, bool disc_active);
/// stage1_total + lambda_d * distill.
double stage2_total(const LossBreakdown& parts, const LossWeights& w, bool disc_active);

// ---- perceptual proxy ----

/// Frozen, seeded random 3-stage strided feature stack standing in for a
/// pretrained perceptual network: each stage folds 2x2 neighbourhoods into
/// channels through a fixed random linear map and tanh. The loss is the MSE
/// between the two images' feature maps, averaged over stages.
class PerceptualProxy {
 public:
  PerceptualProxy(int image_size, uint64_t seed);

  /// Token-layout tape path; a and b are (b*n) x (3*p_in^2).
  Var loss(Tape& t, Var a, Var b, int batch, int p_in) const;
  /// Value-level convenience for evaluation code.
  float operator()(const ImageBatch& x, const ImageBatch& y) const;

  uint64_t seed() const { return seed_; }

 private:
  int size_;
  uint64_t seed_;
  Mat w1_, w2_, w3_;  // frozen random stage weights

  Var features(Tape& t, Var tokens, int batch, int p_in, int stage_end) const;
};

// ---- discriminator ----

/// Three-layer strided patch network emitting one realness score per coarse
/// spatial cell.
class Discriminator {
 public:
  Discriminator(ParamStore& ps, int image_size, Rng& rng);

  /// tokens: (b*n) x (3*p_in^2) image in token layout; returns scores
  /// (b*cells) x 1.
  Var score_map(Tape& t, Var tokens, int batch, int p_in) const;

  int cells() const { return cells_; }

 private:
  int size_ = 0;
  int cells_ = 0;
  Linear l1_, l2_, head_;
};

/// Hinge pair on score maps: mean(relu(1-real)) + mean(relu(1+fake)).
Var hinge_disc_loss(Tape& t, Var real_scores, Var fake_scores);
/// -mean(fake scores).
Var hinge_gen_loss(Tape& t, Var fake_scores);

/// Value-level hinge arithmetic (shared by tests and evaluation).
float hinge_disc_value(const Mat& real_scores, const Mat& fake_scores);
float hinge_gen_value(const Mat& fake_scores);

/// Evaluation helper: score both images through the discriminator and report
/// (gen_loss, disc_loss) values.
std::pair<float, float> adversarial_pair(const ImageBatch& x, const ImageBatch& x_rec,
                                         const Discriminator& disc, int p_in);

}  // namespace vqtok
