#pragma once

#include "vqtok/metrics.hpp"
#include "vqtok/trainer.hpp"
#include "vqtok/vfm_pretext.hpp"

#include <optional>
#include <string>
#include <vector>

namespace vqtok {

// ---- codebook hyperparameter sweep ----

struct CodebookAblationRow {
  int k = 0;
  int e = 0;
  double recon_loss = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ratio = 0.0;
  bool failed = false;
  std::string error;
};

/// One fresh stage-1 run per (k, e) cell, sharing the seed and data order.
/// Cells that throw are recorded as failed and the sweep continues.
/// `encoder_init` (optional) supplies the pretext-trained trunk.
std::vector<CodebookAblationRow> ablate_codebook(const std::vector<std::pair<int, int>>& grid,
                                                 const TrainConfig& base,
                                                 const TokenizerModel* encoder_init);

/// Header: k,e,recon_loss,psnr_db,ssim,utilization. Reconstruction loss and
/// PSNR stand in for the reference-network metric, which needs an external
/// pretrained model.
std::string codebook_ablation_csv(const std::vector<CodebookAblationRow>& rows);

// ---- training strategy ablation ----

struct StrategyRow {
  bool two_stage = false;
  bool self_distill = false;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double probe_accuracy = 0.0;
};

struct StrategyAblation {
  std::vector<StrategyRow> rows;  // (no,no), (no,yes), (yes,yes)
  double teacher_probe = 0.0;
  double stage1_psnr = 0.0;  // two-stage row, end of stage 1
  double stage1_ssim = 0.0;
  bool stage1_encoder_frozen = false;  // checksum witnesses
  bool stage2_teacher_frozen = false;
  std::shared_ptr<TokenizerModel> two_stage_model;  // final tokenizer of the last row
};

struct StrategyOptions {
  TrainConfig stage1;  // two-stage row, first leg (stage == 1)
  TrainConfig stage2;  // second leg and the template for the joint rows
  int e2e_steps = 0;   // 0: stage1.total_steps + stage2.total_steps
};

StrategyAblation strategy_ablation(const TokenizerModel& encoder_init,
                                   const StrategyOptions& opts);

/// Header: two_stage,self_distill,psnr_db,ssim,probe_accuracy with the
/// teacher probe recorded on a comment line.
std::string strategy_ablation_csv(const StrategyAblation& result);

// ---- continuous vs discrete clustering ----

struct ClusterReport {
  std::vector<int> assignments_continuous;
  std::vector<int> assignments_discrete;
  double purity_continuous = 0.0;
  double purity_discrete = 0.0;
};

/// K-means over (a) mean-pooled continuous features and (b) per-image
/// bag-of-tokens histograms of the discrete codes, purity against the true
/// labels.
ClusterReport cluster_compare(const TokenizerModel& model, const Dataset& data,
                              std::span<const int> positions, int n_clusters, uint64_t seed);

/// Normalized per-image histogram of codebook indices, one row per image.
Mat bag_of_tokens(const TokenizerModel& model, const Dataset& data,
                  std::span<const int> positions, int batch_size = 64);

}  // namespace vqtok
