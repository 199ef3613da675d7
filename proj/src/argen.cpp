#include "vqtok/argen.hpp"

#include "vqtok/serial.hpp"

#include <numeric>
#include <sstream>

namespace vqtok {

TokenSequence build_sequence(const Vocab& vocab, int class_id, std::span<const int> indices,
                             int rows, int cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("build_sequence: bad grid");
  if (static_cast<int>(indices.size()) != rows * cols)
    throw std::invalid_argument("build_sequence: index count does not match grid");
  TokenSequence seq;
  seq.rows = rows;
  seq.cols = cols;
  seq.ids.reserve(3 + indices.size());
  seq.ids.push_back(Vocab::kBos);
  seq.ids.push_back(vocab.class_token(class_id));
  seq.ids.push_back(Vocab::kBoi);
  for (int idx : indices) seq.ids.push_back(vocab.visual_token(idx));
  return seq;
}

std::vector<int> strip_sequence(const Vocab& vocab, const TokenSequence& seq) {
  if (seq.length() != 3 + seq.rows * seq.cols)
    throw std::invalid_argument("strip_sequence: malformed sequence");
  std::vector<int> indices;
  indices.reserve(seq.rows * seq.cols);
  for (int i = 3; i < seq.length(); ++i) indices.push_back(vocab.visual_index(seq.ids[i]));
  return indices;
}

void ArConfig::validate() const {
  if (width < 1 || depth < 1 || heads < 1 || width % heads != 0)
    throw std::invalid_argument("ArConfig: bad transformer shape");
  if (classes < 1 || k < 2 || rows < 1 || cols < 1)
    throw std::invalid_argument("ArConfig: bad vocabulary/grid");
  if (lr <= 0.0f || total_steps < 0 || batch_size < 1 || warmup_steps < 0)
    throw std::invalid_argument("ArConfig: bad optimizer settings");
}

ConfigMap ArConfig::to_map() const {
  ConfigMap m;
  auto put = [&m](const std::string& key, auto v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    m[key] = os.str();
  };
  put("width", width);
  put("depth", depth);
  put("heads", heads);
  put("mlp_ratio", mlp_ratio);
  put("classes", classes);
  put("codebook_size", k);
  put("rows", rows);
  put("cols", cols);
  put("init_seed", init_seed);
  put("learning_rate", lr);
  put("weight_decay", weight_decay);
  put("beta1", beta1);
  put("beta2", beta2);
  put("adam_eps", adam_eps);
  put("warmup_steps", warmup_steps);
  put("max_grad_norm", max_grad_norm);
  put("global_batch_size", batch_size);
  put("total_steps", total_steps);
  put("train_seed", train_seed);
  m["scheduler"] = "constant";
  m["optimizer"] = "adamw";
  return m;
}

ArConfig ArConfig::from_map(const ConfigMap& m) {
  static const std::vector<std::string> keys = {
      "width", "depth", "heads", "mlp_ratio", "classes", "codebook_size", "rows", "cols",
      "init_seed", "learning_rate", "weight_decay", "beta1", "beta2", "adam_eps",
      "warmup_steps", "max_grad_norm", "global_batch_size", "total_steps", "train_seed",
      "scheduler", "optimizer"};
  for (const auto& [k2, v] : m)
    if (std::find(keys.begin(), keys.end(), k2) == keys.end())
      throw std::invalid_argument("ar config: unknown key '" + k2 + "'");
  ArConfig c;
  auto geti = [&](const char* k2, int d) {
    auto it = m.find(k2);
    return it == m.end() ? d : std::stoi(it->second);
  };
  auto getf = [&](const char* k2, float d) {
    auto it = m.find(k2);
    return it == m.end() ? d : std::stof(it->second);
  };
  auto getu = [&](const char* k2, uint64_t d) {
    auto it = m.find(k2);
    return it == m.end() ? d : std::stoull(it->second);
  };
  c.width = geti("width", c.width);
  c.depth = geti("depth", c.depth);
  c.heads = geti("heads", c.heads);
  c.mlp_ratio = getf("mlp_ratio", c.mlp_ratio);
  c.classes = geti("classes", c.classes);
  c.k = geti("codebook_size", c.k);
  c.rows = geti("rows", c.rows);
  c.cols = geti("cols", c.cols);
  c.init_seed = getu("init_seed", c.init_seed);
  c.lr = getf("learning_rate", c.lr);
  c.weight_decay = getf("weight_decay", c.weight_decay);
  c.beta1 = getf("beta1", c.beta1);
  c.beta2 = getf("beta2", c.beta2);
  c.adam_eps = getf("adam_eps", c.adam_eps);
  c.warmup_steps = geti("warmup_steps", c.warmup_steps);
  c.max_grad_norm = getf("max_grad_norm", c.max_grad_norm);
  c.batch_size = geti("global_batch_size", c.batch_size);
  c.total_steps = geti("total_steps", c.total_steps);
  c.train_seed = getu("train_seed", c.train_seed);
  auto sched = m.find("scheduler");
  if (sched != m.end() && sched->second != "constant")
    throw std::invalid_argument("ar config: scheduler must be constant");
  auto opt = m.find("optimizer");
  if (opt != m.end() && opt->second != "adamw")
    throw std::invalid_argument("ar config: optimizer must be adamw");
  c.validate();
  return c;
}

ArModel::ArModel(const ArConfig& config) : cfg(config) {
  cfg.validate();
  vocab.classes = cfg.classes;
  vocab.n_visual = cfg.k;
  Rng rng(cfg.init_seed ^ 0x617267656eULL);
  tok_emb_ = &params.create("ar.tok_emb", ParamGroup::Decoder, vocab.total(), cfg.width);
  init_normal(*tok_emb_, rng, 0.02f);
  pos_emb_ = &params.create("ar.pos_emb", ParamGroup::Decoder, cfg.seq_len(), cfg.width);
  init_normal(*pos_emb_, rng, 0.02f);
  for (int i = 0; i < cfg.depth; ++i)
    blocks_.push_back(TransformerBlock::make(params, "ar.blk" + std::to_string(i),
                                             ParamGroup::Decoder, cfg.width, cfg.heads,
                                             cfg.mlp_ratio, true, rng));
  ln_f_ = LayerNorm::make(params, "ar.ln_f", ParamGroup::Decoder, cfg.width);
  head_ = Linear::make(params, "ar.head", ParamGroup::Decoder, cfg.width, vocab.total(), rng);
  // near-uniform initial logits so the first loss sits at ln(vocab)
  head_.w->value *= 0.01f;
}

Var ArModel::logits(Tape& t, std::span<const int> flat_ids, int batch) const {
  const int L = cfg.seq_len();
  if (static_cast<int>(flat_ids.size()) != batch * L)
    throw std::invalid_argument("ar logits: flat id count does not match batch");
  auto idx = std::make_shared<std::vector<int>>(flat_ids.begin(), flat_ids.end());
  for (int id : *idx)
    if (id < 0 || id >= vocab.total()) throw std::invalid_argument("ar logits: token out of range");
  Var h = t.gather_rows(t.param(*tok_emb_), idx);
  h = t.add_rowtile(h, t.param(*pos_emb_), batch);
  for (const auto& blk : blocks_) h = blk(t, h, batch, L);
  h = ln_f_(t, h);
  return head_(t, h);
}

Var ArModel::ntp_loss(Tape& t, std::span<const TokenSequence> batch) const {
  if (batch.empty()) throw std::invalid_argument("ntp_loss: empty batch");
  const int L = cfg.seq_len();
  std::vector<int> flat;
  auto targets = std::make_shared<std::vector<int>>();
  auto mask = std::make_shared<std::vector<float>>();
  for (const TokenSequence& seq : batch) {
    if (seq.rows != cfg.rows || seq.cols != cfg.cols || seq.length() != L)
      throw std::invalid_argument("ntp_loss: sequence grid inconsistent with model");
    for (int tpos = 0; tpos < L; ++tpos) {
      flat.push_back(seq.ids[tpos]);
      if (tpos + 1 < L) {
        int target = seq.ids[tpos + 1];
        targets->push_back(target);
        mask->push_back(vocab.is_visual(target) ? 1.0f : 0.0f);
      } else {
        targets->push_back(0);
        mask->push_back(0.0f);
      }
    }
  }
  Var lg = logits(t, flat, static_cast<int>(batch.size()));
  return t.cross_entropy_rows(lg, targets, mask);
}

NtpTrainStats ntp_train(ArModel& model, std::span<const TokenSequence> sequences) {
  if (sequences.empty()) throw std::invalid_argument("ntp_train: no sequences");
  for (const TokenSequence& s : sequences)
    if (s.rows != model.cfg.rows || s.cols != model.cfg.cols)
      throw std::invalid_argument("ntp_train: sequences of inconsistent grid");

  const ArConfig& cfg = model.cfg;
  AdamW opt{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay, 0};
  Rng rng(cfg.train_seed ^ 0x6e7470ULL);
  auto all = model.params.all();

  NtpTrainStats stats;
  for (int step = 0; step < cfg.total_steps; ++step) {
    std::vector<TokenSequence> batch;
    for (int i = 0; i < cfg.batch_size; ++i)
      batch.push_back(sequences[rng.below(static_cast<uint32_t>(sequences.size()))]);
    Tape t;
    Var loss = model.ntp_loss(t, batch);
    double v = t.val(loss)(0, 0);
    if (!std::isfinite(v)) throw std::runtime_error("ntp_train: non-finite loss");
    stats.loss_curve.push_back(v);
    if (step == 0) stats.initial_loss = v;
    model.params.zero_grads();
    t.backward(loss);
    clip_global_norm(all, cfg.max_grad_norm);
    float lr = cfg.lr;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
      lr *= static_cast<float>(step + 1) / cfg.warmup_steps;
    opt.step(all, lr);
  }
  if (!stats.loss_curve.empty()) {
    size_t window = std::min<size_t>(100, stats.loss_curve.size());
    stats.final_loss = std::accumulate(stats.loss_curve.end() - window, stats.loss_curve.end(),
                                       0.0) / window;
  }
  return stats;
}

namespace {

// incremental single-token decoding state: cached K/V per block
struct KvCache {
  std::vector<Mat> k, v;
  int len = 0;
};

}  // namespace

TokenSequence ArModel::sample(int class_id, int rows, int cols, float temperature, int top_k,
                              uint64_t seed) const {
  if (rows != cfg.rows || cols != cfg.cols)
    throw std::invalid_argument("sample: grid does not match model");
  if (!(temperature > 0.0f)) throw std::invalid_argument("sample: temperature must be > 0");
  if (top_k < 1 || top_k > vocab.n_visual)
    throw std::invalid_argument("sample: top_k must be in [1, k]");

  // plain Eigen incremental forward with a KV cache; no tape needed
  const int L = cfg.seq_len();
  const int dh = cfg.width / cfg.heads;
  KvCache cache;
  cache.k.assign(cfg.depth, Mat::Zero(L, cfg.width));
  cache.v.assign(cfg.depth, Mat::Zero(L, cfg.width));

  auto layer_norm_row = [](const Eigen::RowVectorXf& x, const Param& g, const Param& b) {
    float mu = x.mean();
    float var = (x.array() - mu).square().mean();
    float inv = 1.0f / std::sqrt(var + 1e-5f);
    return (((x.array() - mu) * inv).matrix().cwiseProduct(g.value.row(0)) + b.value.row(0))
        .eval();
  };

  auto forward_token = [&](int token, int pos) -> Eigen::RowVectorXf {
    Eigen::RowVectorXf h = tok_emb_->value.row(token) + pos_emb_->value.row(pos);
    for (int bi = 0; bi < cfg.depth; ++bi) {
      const TransformerBlock& blk = blocks_[bi];
      Eigen::RowVectorXf nx = layer_norm_row(h, *blk.ln1.gamma, *blk.ln1.beta);
      Eigen::RowVectorXf qkv = nx * blk.qkv.w->value + blk.qkv.b->value.row(0);
      Eigen::RowVectorXf q = qkv.segment(0, cfg.width);
      cache.k[bi].row(pos) = qkv.segment(cfg.width, cfg.width);
      cache.v[bi].row(pos) = qkv.segment(2 * cfg.width, cfg.width);
      Eigen::RowVectorXf ctx(cfg.width);
      float scale = 1.0f / std::sqrt(static_cast<float>(dh));
      for (int head = 0; head < cfg.heads; ++head) {
        auto qh = q.segment(head * dh, dh);
        auto kh = cache.k[bi].block(0, head * dh, pos + 1, dh);
        auto vh = cache.v[bi].block(0, head * dh, pos + 1, dh);
        Eigen::VectorXf scores = (kh * qh.transpose()) * scale;
        float m = scores.maxCoeff();
        Eigen::ArrayXf e = (scores.array() - m).exp();
        Eigen::VectorXf probs = (e / e.sum()).matrix();
        ctx.segment(head * dh, dh) = (probs.transpose() * vh).row(0);
      }
      h += ctx * blk.proj.w->value + blk.proj.b->value.row(0);
      Eigen::RowVectorXf mx = layer_norm_row(h, *blk.ln2.gamma, *blk.ln2.beta);
      Eigen::RowVectorXf f = mx * blk.fc1.w->value + blk.fc1.b->value.row(0);
      for (int i = 0; i < f.size(); ++i) {
        float v = f(i);
        f(i) = 0.5f * v * (1.0f + std::erf(v * 0.7071067811865476f));
      }
      h += f * blk.fc2.w->value + blk.fc2.b->value.row(0);
    }
    Eigen::RowVectorXf nx = layer_norm_row(h, *ln_f_.gamma, *ln_f_.beta);
    return nx * head_.w->value + head_.b->value.row(0);
  };

  Rng rng(seed);
  TokenSequence seq;
  seq.rows = rows;
  seq.cols = cols;
  seq.ids = {Vocab::kBos, vocab.class_token(class_id), Vocab::kBoi};

  Eigen::RowVectorXf lg;
  for (int pos = 0; pos < L - 1; ++pos) {
    lg = forward_token(seq.ids[pos], pos);
    if (pos < 2) continue;  // prefix positions: next token is forced anyway

    // restrict to the visual slice
    Eigen::RowVectorXf visual = lg.segment(vocab.n_text(), vocab.n_visual);
    int next_index;
    if (top_k == 1 || temperature < 1e-6f) {
      int best = 0;
      for (int i = 1; i < visual.size(); ++i)
        if (visual(i) > visual(best)) best = i;
      next_index = best;
    } else {
      std::vector<int> order(visual.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return visual(a) > visual(b); });
      order.resize(top_k);
      double mx = visual(order[0]);
      std::vector<double> weights(top_k);
      double total = 0.0;
      for (int i = 0; i < top_k; ++i) {
        weights[i] = std::exp((visual(order[i]) - mx) / temperature);
        total += weights[i];
      }
      double u = rng.next_double() * total;
      double acc = 0.0;
      next_index = order[top_k - 1];
      for (int i = 0; i < top_k; ++i) {
        acc += weights[i];
        if (u < acc) {
          next_index = order[i];
          break;
        }
      }
    }
    seq.ids.push_back(vocab.visual_token(next_index));
  }
  return seq;
}

void save_ar_checkpoint(const std::string& path, const ArModel& model) {
  CheckpointSections sections;
  std::ostringstream cfg_text;
  for (const auto& [k, v] : model.cfg.to_map()) cfg_text << k << " = " << v << "\n";
  sections.set(SectionId::Config, cfg_text.str());
  sections.set(SectionId::NamedArrays, serialize_named_arrays(model.params));
  write_checkpoint_file(path, sections);
}

ArModel load_ar_checkpoint(const std::string& path) {
  CheckpointSections sections = read_checkpoint_file(path);
  ArConfig cfg = ArConfig::from_map(parse_config_text(sections.get(SectionId::Config)));
  ArModel model(cfg);
  load_named_arrays(sections.get(SectionId::NamedArrays), model.params);
  return model;
}

std::vector<TokenSequence> tokenize_dataset(const TokenizerModel& tokenizer, const Dataset& data,
                                            const Vocab& vocab, int batch_size) {
  const int n = tokenizer.tokens_per_image();
  const int rows = tokenizer.net->grid_rows();
  const int cols = tokenizer.net->grid_cols();
  std::vector<TokenSequence> out;
  out.reserve(data.count());
  for (int begin = 0; begin < data.count(); begin += batch_size) {
    int count = std::min(batch_size, data.count() - begin);
    std::vector<int> positions(count);
    std::iota(positions.begin(), positions.end(), begin);
    std::vector<int> idx = tokenizer.encode_indices(data.batch(positions));
    for (int i = 0; i < count; ++i) {
      std::span<const int> slice(idx.data() + static_cast<size_t>(i) * n, n);
      out.push_back(build_sequence(vocab, data.labels[begin + i], slice, rows, cols));
    }
  }
  return out;
}

}  // namespace vqtok
