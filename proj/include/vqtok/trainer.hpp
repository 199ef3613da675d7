#pragma once

#include "vqtok/metrics.hpp"
#include "vqtok/model.hpp"
#include "vqtok/objectives.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vqtok {

/// Flat training configuration. File keys are the tokenizer-table row names
/// (snake_cased) plus the desk-scale extras below; unknown keys are an error.
struct TrainConfig {
  int stage = 1;

  // table rows
  int resolution = 32;
  int codebook_size = 256;
  int codebook_dim = 96;
  int discriminator_start_steps = -1;  // -1: never (stage-1 "NA")
  float discriminator_weight = 0.1f;
  float distillation_weight = 1.0f;
  float perceptual_loss_weight = 1.1f;
  float encoder_lr = 0.0f;  // stage 2 only
  float decoder_lr = 4e-4f;
  float end_lr = 1e-4f;
  std::string scheduler = "cosine";  // cosine | constant
  float weight_decay = 1e-4f;
  float discriminator_lr = 4e-5f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  int warmup_steps = 200;
  float max_grad_norm = 1.0f;
  int global_batch_size = 64;
  int total_steps = 20000;

  // desk extras
  uint64_t seed = 0;
  int patch_size = 4;
  int hidden_dim = 64;
  int depth = 4;
  int heads = 4;
  float mlp_ratio = 4.0f;
  float commitment_beta = 0.25f;
  bool train_entries = false;
  bool stage1_gan = false;  // ablation switch; stage 1 has no GAN by default
  int eval_interval = 500;
  int train_images = 4096;
  int eval_images = 512;
  uint64_t data_seed = 77;
  uint64_t perceptual_seed = 1234;

  void validate() const;
  ConfigMap to_map() const;
  static TrainConfig from_map(const ConfigMap& m);

  ModelConfig model_config() const;
  LossWeights weights() const;
};

/// Learning rate of the decoder group at `step`: linear warmup to the peak,
/// then cosine decay to end_lr at total_steps (constant holds the peak).
/// Other groups reuse the same shape scaled by their own peak.
double lr_at(const TrainConfig& cfg, int64_t step);
/// lr_at / decoder peak, in [0, 1].
double lr_shape_at(const TrainConfig& cfg, int64_t step);

struct MetricEntry {
  int64_t step = 0;
  std::string key;
  double value = 0.0;
};

struct EvalSnapshot {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double recon_l2 = 0.0;
  double utilization = 0.0;
};

struct StepRecord {
  LossBreakdown losses;
  double grad_norm = 0.0;      // pre-clip, generator side
  double disc_loss = 0.0;
  bool disc_updated = false;
};

/// Owns every piece of mutable training state: model, discriminator, teacher
/// snapshot, optimizer moments, the batch-order generator and the metric log.
/// One session per process; no internal locking.
class TrainSession {
 public:
  /// How the session drives the model. Stage1/Stage2 follow the two-stage
  /// procedure; JointE2E trains all groups from the injected encoder with no
  /// staging (the training-strategy ablation rows).
  enum class Mode { Stage1, Stage2, JointE2E };

  TrainSession(const TrainConfig& cfg, Mode mode);
  explicit TrainSession(const TrainConfig& cfg) : TrainSession(cfg, mode_for_stage(cfg)) {}

  /// Overwrite the encoder trunk with a pretext-trained checkpoint's values.
  /// Must happen before any step.
  void load_encoder(const TokenizerModel& pretrained);
  /// Adopt a stage-1 checkpoint (model weights) as the starting point and
  /// snapshot the teacher. Stage-2 sessions require this or load().
  void adopt_stage1_model(const TokenizerModel& stage1);

  StepRecord step_once();
  /// Run remaining steps to cfg.total_steps, logging and evaluating on the
  /// configured cadence. Optional callback sees every step record.
  void run(const std::function<void(int64_t, const StepRecord&)>& on_step = {});

  EvalSnapshot evaluate();

  void save(const std::string& path) const;
  static TrainSession load(const std::string& path);

  const TokenizerModel& model() const { return *model_; }
  TokenizerModel& model() { return *model_; }
  const TokenizerModel* teacher() const { return teacher_.get(); }
  const TrainConfig& config() const { return cfg_; }
  int64_t step() const { return step_; }
  Mode mode() const { return mode_; }
  const std::vector<MetricEntry>& metrics() const { return metrics_; }
  const Dataset& train_data() const { return train_data_; }
  const Dataset& eval_data() const { return eval_data_; }

  uint64_t encoder_checksum() const;
  uint64_t teacher_checksum() const;

 private:
  static Mode mode_for_stage(const TrainConfig& cfg) {
    return cfg.stage == 1 ? Mode::Stage1 : Mode::Stage2;
  }

  void build_data();
  void apply_freeze_rules();
  void snapshot_teacher();
  void rebuild_zi_cache();
  bool encoder_trains() const { return mode_ != Mode::Stage1; }
  bool gan_active() const;
  void log(const std::string& key, double value);
  void nan_abort(const LossBreakdown& parts);

  TrainConfig cfg_;
  Mode mode_;
  std::unique_ptr<TokenizerModel> model_;
  std::unique_ptr<TokenizerModel> teacher_;
  std::unique_ptr<Discriminator> disc_;
  std::unique_ptr<PerceptualProxy> proxy_;
  Dataset train_data_;
  Dataset eval_data_;
  Mat zi_cache_;  // stage-1 frozen-encoder features, (train_images*n) x d
  bool zi_cache_valid_ = false;
  AdamW opt_enc_, opt_dec_, opt_disc_;
  Rng rng_;
  int64_t step_ = 0;
  std::vector<MetricEntry> metrics_;
};

/// Tokenizer evaluation over a dataset slice: reconstruction metrics plus
/// codebook utilization, batched.
EvalSnapshot evaluate_tokenizer(const TokenizerModel& model, const Dataset& data,
                                std::span<const int> positions, int batch_size = 64);

}  // namespace vqtok
