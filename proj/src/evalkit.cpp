#include "vqtok/evalkit.hpp"

#include <numeric>
#include <sstream>

namespace vqtok {

std::vector<CodebookAblationRow> ablate_codebook(const std::vector<std::pair<int, int>>& grid,
                                                 const TrainConfig& base,
                                                 const TokenizerModel* encoder_init) {
  std::vector<CodebookAblationRow> rows;
  for (auto [k, e] : grid) {
    CodebookAblationRow row;
    row.k = k;
    row.e = e;
    try {
      TrainConfig cfg = base;
      cfg.codebook_size = k;
      cfg.codebook_dim = e;
      cfg.validate();
      TrainSession session(cfg);
      if (encoder_init) session.load_encoder(*encoder_init);
      session.run();
      EvalSnapshot ev = session.evaluate();
      row.recon_loss = ev.recon_l2;
      row.psnr_db = ev.psnr_db;
      row.ssim = ev.ssim;
      row.ratio = ev.utilization;
    } catch (const std::exception& ex) {
      row.failed = true;
      row.error = ex.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string codebook_ablation_csv(const std::vector<CodebookAblationRow>& rows) {
  std::ostringstream out;
  out << "# rFID needs an external pretrained reference network; recon_loss and"
         " psnr_db are reported instead\n";
  out << "k,e,recon_loss,psnr_db,ssim,utilization\n";
  out.precision(6);
  for (const auto& r : rows) {
    if (r.failed) {
      out << r.k << "," << r.e << ",failed,failed,failed,failed\n";
      continue;
    }
    out << r.k << "," << r.e << "," << r.recon_loss << "," << r.psnr_db << "," << r.ssim << ","
        << r.ratio << "\n";
  }
  return out.str();
}

StrategyAblation strategy_ablation(const TokenizerModel& encoder_init,
                                   const StrategyOptions& opts) {
  StrategyAblation result;
  if (opts.stage1.stage != 1 || opts.stage2.stage != 2)
    throw std::invalid_argument("strategy_ablation: stage configs must be stage 1 and stage 2");
  int e2e_steps =
      opts.e2e_steps > 0 ? opts.e2e_steps : opts.stage1.total_steps + opts.stage2.total_steps;

  // the frozen pretext encoder is the teacher every row is measured against
  {
    TrainSession probe_session(opts.stage1);  // only for its dataset split
    Dataset labelled = probe_session.train_data();
    result.teacher_probe = linear_probe(encoder_init, labelled).accuracy;
  }

  auto run_joint = [&](bool distill) {
    TrainConfig cfg = opts.stage2;
    cfg.total_steps = e2e_steps;
    if (!distill) cfg.distillation_weight = 0.0f;
    TrainSession session(cfg, TrainSession::Mode::JointE2E);
    session.load_encoder(encoder_init);
    session.run();
    EvalSnapshot ev = session.evaluate();
    StrategyRow row;
    row.two_stage = false;
    row.self_distill = distill;
    row.psnr_db = ev.psnr_db;
    row.ssim = ev.ssim;
    row.probe_accuracy = linear_probe(session.model(), session.train_data()).accuracy;
    return row;
  };
  result.rows.push_back(run_joint(false));
  result.rows.push_back(run_joint(true));

  // two-stage with distillation
  {
    TrainSession stage1(opts.stage1);
    stage1.load_encoder(encoder_init);
    uint64_t enc_before = stage1.encoder_checksum();
    stage1.run();
    result.stage1_encoder_frozen = stage1.encoder_checksum() == enc_before;
    EvalSnapshot ev1 = stage1.evaluate();
    result.stage1_psnr = ev1.psnr_db;
    result.stage1_ssim = ev1.ssim;

    TrainSession stage2(opts.stage2);
    stage2.adopt_stage1_model(stage1.model());
    uint64_t teacher_before = stage2.teacher_checksum();
    stage2.run();
    result.stage2_teacher_frozen = stage2.teacher_checksum() == teacher_before;
    EvalSnapshot ev2 = stage2.evaluate();
    StrategyRow row;
    row.two_stage = true;
    row.self_distill = true;
    row.psnr_db = ev2.psnr_db;
    row.ssim = ev2.ssim;
    row.probe_accuracy = linear_probe(stage2.model(), stage2.train_data()).accuracy;
    result.rows.push_back(row);
    result.two_stage_model = std::make_shared<TokenizerModel>(std::move(stage2.model()));
  }
  return result;
}

std::string strategy_ablation_csv(const StrategyAblation& result) {
  std::ostringstream out;
  out.precision(6);
  out << "# teacher_probe=" << result.teacher_probe << "\n";
  out << "# rFID needs an external pretrained reference network; psnr_db is reported instead\n";
  out << "two_stage,self_distill,psnr_db,ssim,probe_accuracy\n";
  for (const auto& r : result.rows)
    out << (r.two_stage ? "yes" : "no") << "," << (r.self_distill ? "yes" : "no") << ","
        << r.psnr_db << "," << r.ssim << "," << r.probe_accuracy << "\n";
  return out.str();
}

Mat bag_of_tokens(const TokenizerModel& model, const Dataset& data,
                  std::span<const int> positions, int batch_size) {
  const int n = model.tokens_per_image();
  Mat out = Mat::Zero(static_cast<Eigen::Index>(positions.size()), model.cfg.k);
  for (size_t begin = 0; begin < positions.size(); begin += batch_size) {
    size_t count = std::min<size_t>(batch_size, positions.size() - begin);
    std::vector<int> chunk(positions.begin() + begin, positions.begin() + begin + count);
    std::vector<int> idx = model.encode_indices(data.batch(chunk));
    for (size_t i = 0; i < count; ++i)
      for (int j = 0; j < n; ++j)
        out(static_cast<Eigen::Index>(begin + i), idx[i * n + j]) += 1.0f / n;
  }
  return out;
}

ClusterReport cluster_compare(const TokenizerModel& model, const Dataset& data,
                              std::span<const int> positions, int n_clusters, uint64_t seed) {
  if (n_clusters > static_cast<int>(positions.size()))
    throw std::invalid_argument("cluster_compare: n_clusters exceeds dataset size");
  std::vector<int64_t> ids;
  std::vector<int> labels;
  for (int p : positions) {
    ids.push_back(data.ids[p]);
    labels.push_back(data.labels[p]);
  }

  ClusterReport rep;
  Mat cont = pooled_features(model, data, positions);
  rep.assignments_continuous = kmeans_assign(cont, ids, n_clusters, seed);
  rep.purity_continuous = purity(rep.assignments_continuous, labels, n_clusters);

  Mat bags = bag_of_tokens(model, data, positions);
  rep.assignments_discrete = kmeans_assign(bags, ids, n_clusters, seed);
  rep.purity_discrete = purity(rep.assignments_discrete, labels, n_clusters);
  return rep;
}

}  // namespace vqtok
