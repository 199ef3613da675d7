#include "vqtok/evalkit.hpp"

#include <doctest.h>

#include <numeric>

using namespace vqtok;

namespace {

TrainConfig micro_config() {
  TrainConfig c;
  c.stage = 1;
  c.resolution = 16;
  c.patch_size = 4;
  c.hidden_dim = 16;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2.0f;
  c.codebook_dim = 8;
  c.codebook_size = 16;
  c.decoder_lr = 2e-3f;
  c.end_lr = 2e-4f;
  c.warmup_steps = 5;
  c.total_steps = 30;
  c.global_batch_size = 8;
  c.train_images = 48;
  c.eval_images = 16;
  c.eval_interval = 0;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("codebook ablation sweeps cells and survives failing ones") {
  TrainConfig base = micro_config();
  // middle cell is invalid (e = 0) and must not abort the sweep
  std::vector<std::pair<int, int>> grid{{16, 8}, {16, 0}, {16, 12}};
  auto rows = ablate_codebook(grid, base, nullptr);
  REQUIRE(rows.size() == 3);
  CHECK(!rows[0].failed);
  CHECK(rows[1].failed);
  CHECK(!rows[2].failed);
  CHECK(rows[0].ratio > 0.0);
  CHECK(std::isfinite(rows[0].psnr_db));

  std::string csv = codebook_ablation_csv(rows);
  CHECK(csv.find("k,e,recon_loss,psnr_db,ssim,utilization") != std::string::npos);
  CHECK(csv.find("16,0,failed") != std::string::npos);
  CHECK(csv.find("recon_loss and psnr_db are reported instead") != std::string::npos);
}

TEST_CASE("strategy ablation emits the three documented rows in order") {
  TrainConfig s1 = micro_config();
  TrainConfig s2 = micro_config();
  s2.stage = 2;
  s2.encoder_lr = 2e-4f;
  s2.total_steps = 20;
  s2.discriminator_start_steps = -1;

  TokenizerModel enc(s1.model_config());
  Dataset data = gen_dataset(128, 5, 16);
  PretrainOptions popts;
  popts.steps = 80;
  popts.batch_size = 16;
  pretrain_encoder(enc, data, popts);

  StrategyOptions opts;
  opts.stage1 = s1;
  opts.stage2 = s2;
  StrategyAblation result = strategy_ablation(enc, opts);

  REQUIRE(result.rows.size() == 3);
  CHECK(!result.rows[0].two_stage);
  CHECK(!result.rows[0].self_distill);
  CHECK(!result.rows[1].two_stage);
  CHECK(result.rows[1].self_distill);
  CHECK(result.rows[2].two_stage);
  CHECK(result.rows[2].self_distill);
  CHECK(result.stage1_encoder_frozen);
  CHECK(result.stage2_teacher_frozen);
  CHECK(result.teacher_probe > 0.0);
  for (const auto& r : result.rows) {
    CHECK(std::isfinite(r.psnr_db));
    CHECK(r.probe_accuracy >= 0.0);
    CHECK(r.probe_accuracy <= 1.0);
  }

  std::string csv = strategy_ablation_csv(result);
  CHECK(csv.find("two_stage,self_distill,psnr_db,ssim,probe_accuracy") != std::string::npos);
  CHECK(csv.find("# teacher_probe=") != std::string::npos);
  CHECK(csv.find("no,no,") != std::string::npos);
  CHECK(csv.find("no,yes,") != std::string::npos);
  CHECK(csv.find("yes,yes,") != std::string::npos);
}

TEST_CASE("cluster_compare purity bounds, determinism and edge cases") {
  TrainConfig c = micro_config();
  TokenizerModel model(c.model_config());
  Dataset data = gen_dataset(96, 7, 16);
  std::vector<int> positions(data.count());
  std::iota(positions.begin(), positions.end(), 0);

  ClusterReport rep = cluster_compare(model, data, positions, 8, 1);
  CHECK(rep.purity_continuous >= 0.0);
  CHECK(rep.purity_continuous <= 1.0);
  CHECK(rep.purity_discrete >= 0.0);
  CHECK(rep.purity_discrete <= 1.0);
  CHECK(rep.assignments_continuous.size() == positions.size());

  // deterministic under a fixed seed
  ClusterReport again = cluster_compare(model, data, positions, 8, 1);
  CHECK(rep.assignments_continuous == again.assignments_continuous);
  CHECK(rep.purity_discrete == again.purity_discrete);

  // a single cluster collapses both purities to the majority share
  ClusterReport one = cluster_compare(model, data, positions, 1, 1);
  CHECK(one.purity_continuous == doctest::Approx(1.0 / kNumClasses));
  CHECK(one.purity_discrete == doctest::Approx(1.0 / kNumClasses));

  CHECK_THROWS_AS((void)cluster_compare(model, data, positions, 97, 1), std::invalid_argument);

  // bag-of-tokens rows are normalized histograms
  Mat bags = bag_of_tokens(model, data, positions);
  CHECK(bags.rows() == data.count());
  CHECK(bags.cols() == c.codebook_size);
  for (int i = 0; i < bags.rows(); ++i)
    CHECK(bags.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
}
