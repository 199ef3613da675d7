#pragma once

#include "vqtok/model.hpp"
#include "vqtok/trainer.hpp"

#include <span>

namespace vqtok {

/// Supervised pretext pretraining options for the encoder stand-in.
struct PretrainOptions {
  int steps = 800;
  float lr = 1e-3f;
  int batch_size = 64;
  float weight_decay = 0.0f;
  float max_grad_norm = 1.0f;
  uint64_t seed = 0;
};

struct PretrainResult {
  double head_accuracy = 0.0;  // train-set accuracy of the classification head
};

/// Trains the encoder trunk plus a mean-pooled affine classification head
/// with cross entropy, then discards the head. Refuses single-class data.
PretrainResult pretrain_encoder(TokenizerModel& model, const Dataset& data,
                                const PretrainOptions& opts);

struct ProbeResult {
  double accuracy = 0.0;  // held-out accuracy
  int num_classes = 0;
};

/// Frozen affine classifier state.
struct ProbeModel {
  Mat w;  // d x classes
  Mat b;  // 1 x classes
  int num_classes = 0;
};

/// Full-batch gradient descent from a zero init to a gradient tolerance.
/// Zero init makes the fit exactly equivariant under feature rotation.
ProbeModel fit_probe(const Mat& features, std::span<const int> labels, int num_classes);
double probe_accuracy(const ProbeModel& probe, const Mat& features, std::span<const int> labels);

/// Mean-pooled continuous encoder features, one row per image.
Mat pooled_features(const TokenizerModel& model, const Dataset& data,
                    std::span<const int> positions);

/// Fits a probe on an 80/20 split keyed by stable image id (id % 5 == 4 held
/// out) and reports held-out accuracy. Never mutates the model.
ProbeResult linear_probe(const TokenizerModel& model, const Dataset& data);

}  // namespace vqtok
