#include "vqtok/vfm_pretext.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace vqtok {

namespace {

int argmax_row(const Mat& logits, int row) {
  int best = 0;
  for (int c = 1; c < logits.cols(); ++c)
    if (logits(row, c) > logits(row, best)) best = c;
  return best;
}

}  // namespace

PretrainResult pretrain_encoder(TokenizerModel& model, const Dataset& data,
                                const PretrainOptions& opts) {
  if (data.count() == 0) throw std::invalid_argument("pretrain_encoder: empty dataset");
  std::set<int> distinct(data.labels.begin(), data.labels.end());
  if (distinct.size() < 2)
    throw std::invalid_argument("pretrain_encoder: degenerate single-class dataset");
  int num_classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;

  // head lives in its own store so the returned model stays tokenizer-only
  ParamStore head_ps;
  Param& hw = head_ps.create("head.w", ParamGroup::Head, model.cfg.enc.d, num_classes);
  Param& hb = head_ps.create("head.b", ParamGroup::Head, 1, num_classes);

  model.params.set_trainable(ParamGroup::Encoder, true);
  AdamW opt{0.9f, 0.999f, 1e-8f, opts.weight_decay, 0};
  Rng rng(opts.seed ^ 0x70726574657874ULL);
  const int n = model.tokens_per_image();

  std::vector<Param*> trainables = model.params.group(ParamGroup::Encoder);
  trainables.push_back(&hw);
  trainables.push_back(&hb);

  for (int step = 0; step < opts.steps; ++step) {
    std::vector<int> positions(opts.batch_size);
    for (auto& p : positions)
      p = static_cast<int>(rng.below(static_cast<uint32_t>(data.count())));
    ImageBatch imgs = data.batch(positions);
    auto targets = std::make_shared<std::vector<int>>();
    for (int p : positions) targets->push_back(data.labels[p]);

    Tape t;
    Var x = t.input(patchify(imgs, model.cfg.enc.p));
    Var z = model.net->encode_trunk(t, x, imgs.b);
    Var pooled = t.row_block_mean(z, n);
    Var logits = t.add_rowvec(t.matmul(pooled, t.param(hw)), t.param(hb));
    Var loss = t.cross_entropy_rows(logits, targets, nullptr);
    model.params.zero_grads();
    head_ps.zero_grads();
    t.backward(loss);
    clip_global_norm(trainables, opts.max_grad_norm);
    opt.step(trainables, opts.lr);
  }

  // train-set head accuracy (also the 0-step chance baseline: a zero head
  // predicts class 0 everywhere)
  int correct = 0;
  const int chunk = 128;
  for (int begin = 0; begin < data.count(); begin += chunk) {
    int count = std::min(chunk, data.count() - begin);
    std::vector<int> positions(count);
    std::iota(positions.begin(), positions.end(), begin);
    Tape t;
    t.set_inference(true);
    Var x = t.input(patchify(data.batch(positions), model.cfg.enc.p));
    Var z = model.net->encode_trunk(t, x, count);
    Var pooled = t.row_block_mean(z, n);
    Var logits = t.add_rowvec(t.matmul(pooled, t.param(hw)), t.param(hb));
    for (int i = 0; i < count; ++i)
      correct += argmax_row(t.val(logits), i) == data.labels[begin + i] ? 1 : 0;
  }
  return {static_cast<double>(correct) / data.count()};
}

ProbeModel fit_probe(const Mat& features, std::span<const int> labels, int num_classes) {
  if (features.rows() == 0) throw std::invalid_argument("fit_probe: empty feature set");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw ShapeError("fit_probe: label count mismatch");
  ProbeModel probe;
  probe.num_classes = num_classes;
  probe.w = Mat::Zero(features.cols(), num_classes);
  probe.b = Mat::Zero(1, num_classes);

  // rotation-invariant step size: depends only on the feature norms
  float scale = features.array().square().sum() / static_cast<float>(features.rows());
  float lr = 2.0f / (scale + 1.0f);
  const int max_iters = 1500;
  const float tol = 1e-5f;
  const float inv_n = 1.0f / static_cast<float>(features.rows());

  for (int it = 0; it < max_iters; ++it) {
    Mat logits = features * probe.w;
    logits.rowwise() += probe.b.row(0);
    // softmax minus one-hot
    for (int i = 0; i < logits.rows(); ++i) {
      float m = logits.row(i).maxCoeff();
      Eigen::ArrayXf e = (logits.row(i).array() - m).exp();
      logits.row(i) = (e / e.sum()).matrix();
      logits(i, labels[i]) -= 1.0f;
    }
    Mat gw = features.transpose() * logits * inv_n;
    Mat gb = logits.colwise().sum() * inv_n;
    probe.w -= lr * gw;
    probe.b -= lr * gb;
    if (gw.cwiseAbs().maxCoeff() < tol && gb.cwiseAbs().maxCoeff() < tol) break;
  }
  return probe;
}

double probe_accuracy(const ProbeModel& probe, const Mat& features, std::span<const int> labels) {
  if (features.rows() == 0) throw std::invalid_argument("probe_accuracy: empty feature set");
  Mat logits = features * probe.w;
  logits.rowwise() += probe.b.row(0);
  int correct = 0;
  for (int i = 0; i < logits.rows(); ++i)
    correct += argmax_row(logits, i) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(features.rows());
}

Mat pooled_features(const TokenizerModel& model, const Dataset& data,
                    std::span<const int> positions) {
  const int n = model.tokens_per_image();
  Mat out(static_cast<Eigen::Index>(positions.size()), model.cfg.enc.d);
  const int chunk = 128;
  for (size_t begin = 0; begin < positions.size(); begin += chunk) {
    size_t count = std::min<size_t>(chunk, positions.size() - begin);
    std::vector<int> slice(positions.begin() + begin, positions.begin() + begin + count);
    LatentFeatures lf = model.net->encode(data.batch(slice));
    for (size_t i = 0; i < count; ++i)
      out.row(static_cast<Eigen::Index>(begin + i)) =
          lf.continuous.middleRows(static_cast<Eigen::Index>(i) * n, n).colwise().mean();
  }
  return out;
}

ProbeResult linear_probe(const TokenizerModel& model, const Dataset& data) {
  std::vector<int> train_pos, held_pos;
  for (int i = 0; i < data.count(); ++i)
    (data.ids[i] % 5 == 4 ? held_pos : train_pos).push_back(i);
  if (train_pos.empty() || held_pos.empty())
    throw std::invalid_argument("linear_probe: empty split");

  int num_classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  Mat train_feats = pooled_features(model, data, train_pos);
  Mat held_feats = pooled_features(model, data, held_pos);
  std::vector<int> train_labels, held_labels;
  for (int p : train_pos) train_labels.push_back(data.labels[p]);
  for (int p : held_pos) held_labels.push_back(data.labels[p]);

  ProbeModel probe = fit_probe(train_feats, train_labels, num_classes);
  return {probe_accuracy(probe, held_feats, held_labels), num_classes};
}

}  // namespace vqtok
