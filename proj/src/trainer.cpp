#include "vqtok/trainer.hpp"

#include "vqtok/serial.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

namespace vqtok {

namespace {

constexpr double kPi = 3.14159265358979323846;

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      // table rows
      "stage", "resolution", "freeze_encoder", "codebook_size", "codebook_dim",
      "discriminator_start_steps", "discriminator_weight", "distillation_weight",
      "perceptual_loss_weight", "perceptual_model", "augmentation", "encoder_lr", "decoder_lr",
      "end_lr", "scheduler", "weight_decay", "discriminator_lr", "optimizer", "beta1", "beta2",
      "adam_eps", "warmup_steps", "mixed_precision", "max_grad_norm", "global_batch_size",
      "total_steps",
      // desk extras
      "seed", "patch_size", "hidden_dim", "depth", "heads", "mlp_ratio", "commitment_beta",
      "train_entries", "stage1_gan", "eval_interval", "train_images", "eval_images", "data_seed",
      "perceptual_seed"};
  return keys;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " must be true/false");
}

}  // namespace

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw std::invalid_argument("config: stage must be 1 or 2");
  if (scheduler != "cosine" && scheduler != "constant")
    throw std::invalid_argument("config: scheduler must be cosine or constant");
  if (warmup_steps > total_steps)
    throw std::invalid_argument("config: warmup_steps must be <= total_steps");
  if (total_steps < 1 || global_batch_size < 1)
    throw std::invalid_argument("config: steps and batch size must be positive");
  if (decoder_lr <= 0.0f) throw std::invalid_argument("config: decoder_lr must be > 0");
  if (stage == 2 && encoder_lr <= 0.0f)
    throw std::invalid_argument("config: stage 2 requires encoder_lr > 0");
  if (end_lr < 0.0f || end_lr > decoder_lr)
    throw std::invalid_argument("config: end_lr must be in [0, decoder_lr]");
  if (max_grad_norm <= 0.0f) throw std::invalid_argument("config: max_grad_norm must be > 0");
  if (eval_images < 1 || train_images < kNumClasses)
    throw std::invalid_argument("config: dataset sizes too small");
  if (commitment_beta < 0.0f) throw std::invalid_argument("config: commitment_beta must be >= 0");
  weights().validate();
  model_config().enc.validate();
}

ConfigMap TrainConfig::to_map() const {
  ConfigMap m;
  auto put = [&m](const std::string& k, auto v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    m[k] = os.str();
  };
  put("stage", stage);
  m["freeze_encoder"] = stage == 1 ? "true" : "false";
  put("resolution", resolution);
  put("codebook_size", codebook_size);
  put("codebook_dim", codebook_dim);
  put("discriminator_start_steps", discriminator_start_steps);
  put("discriminator_weight", discriminator_weight);
  put("distillation_weight", distillation_weight);
  put("perceptual_loss_weight", perceptual_loss_weight);
  m["perceptual_model"] = "seeded_proxy";
  m["augmentation"] = "none";
  put("encoder_lr", encoder_lr);
  put("decoder_lr", decoder_lr);
  put("end_lr", end_lr);
  m["scheduler"] = scheduler;
  put("weight_decay", weight_decay);
  put("discriminator_lr", discriminator_lr);
  m["optimizer"] = "adamw";
  put("beta1", beta1);
  put("beta2", beta2);
  put("adam_eps", adam_eps);
  put("warmup_steps", warmup_steps);
  m["mixed_precision"] = "fp32";
  put("max_grad_norm", max_grad_norm);
  put("global_batch_size", global_batch_size);
  put("total_steps", total_steps);
  put("seed", seed);
  put("patch_size", patch_size);
  put("hidden_dim", hidden_dim);
  put("depth", depth);
  put("heads", heads);
  put("mlp_ratio", mlp_ratio);
  put("commitment_beta", commitment_beta);
  m["train_entries"] = train_entries ? "true" : "false";
  m["stage1_gan"] = stage1_gan ? "true" : "false";
  put("eval_interval", eval_interval);
  put("train_images", train_images);
  put("eval_images", eval_images);
  put("data_seed", data_seed);
  put("perceptual_seed", perceptual_seed);
  return m;
}

TrainConfig TrainConfig::from_map(const ConfigMap& m) {
  const auto& keys = known_keys();
  for (const auto& [k, v] : m)
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw std::invalid_argument("config: unknown key '" + k + "'");

  TrainConfig c;
  auto geti = [&](const char* k, int dflt) {
    auto it = m.find(k);
    return it == m.end() ? dflt : std::stoi(it->second);
  };
  auto getf = [&](const char* k, float dflt) {
    auto it = m.find(k);
    return it == m.end() ? dflt : std::stof(it->second);
  };
  auto getu = [&](const char* k, uint64_t dflt) {
    auto it = m.find(k);
    return it == m.end() ? dflt : std::stoull(it->second);
  };
  auto gets = [&](const char* k, std::string dflt) {
    auto it = m.find(k);
    return it == m.end() ? dflt : it->second;
  };
  auto getb = [&](const char* k, bool dflt) {
    auto it = m.find(k);
    return it == m.end() ? dflt : parse_bool(it->second, k);
  };

  c.stage = geti("stage", c.stage);
  c.resolution = geti("resolution", c.resolution);
  c.codebook_size = geti("codebook_size", c.codebook_size);
  c.codebook_dim = geti("codebook_dim", c.codebook_dim);
  c.discriminator_start_steps = geti("discriminator_start_steps", c.discriminator_start_steps);
  c.discriminator_weight = getf("discriminator_weight", c.discriminator_weight);
  c.distillation_weight = getf("distillation_weight", c.distillation_weight);
  c.perceptual_loss_weight = getf("perceptual_loss_weight", c.perceptual_loss_weight);
  c.encoder_lr = getf("encoder_lr", c.encoder_lr);
  c.decoder_lr = getf("decoder_lr", c.decoder_lr);
  c.end_lr = getf("end_lr", c.end_lr);
  c.scheduler = gets("scheduler", c.scheduler);
  c.weight_decay = getf("weight_decay", c.weight_decay);
  c.discriminator_lr = getf("discriminator_lr", c.discriminator_lr);
  c.beta1 = getf("beta1", c.beta1);
  c.beta2 = getf("beta2", c.beta2);
  c.adam_eps = getf("adam_eps", c.adam_eps);
  c.warmup_steps = geti("warmup_steps", c.warmup_steps);
  c.max_grad_norm = getf("max_grad_norm", c.max_grad_norm);
  c.global_batch_size = geti("global_batch_size", c.global_batch_size);
  c.total_steps = geti("total_steps", c.total_steps);
  c.seed = getu("seed", c.seed);
  c.patch_size = geti("patch_size", c.patch_size);
  c.hidden_dim = geti("hidden_dim", c.hidden_dim);
  c.depth = geti("depth", c.depth);
  c.heads = geti("heads", c.heads);
  c.mlp_ratio = getf("mlp_ratio", c.mlp_ratio);
  c.commitment_beta = getf("commitment_beta", c.commitment_beta);
  c.train_entries = getb("train_entries", c.train_entries);
  c.stage1_gan = getb("stage1_gan", c.stage1_gan);
  c.eval_interval = geti("eval_interval", c.eval_interval);
  c.train_images = geti("train_images", c.train_images);
  c.eval_images = geti("eval_images", c.eval_images);
  c.data_seed = getu("data_seed", c.data_seed);
  c.perceptual_seed = getu("perceptual_seed", c.perceptual_seed);

  // rows that only exist in one supported flavor at desk scale
  std::string opt = gets("optimizer", "adamw");
  if (opt != "adamw") throw std::invalid_argument("config: optimizer must be adamw");
  std::string pm = gets("perceptual_model", "seeded_proxy");
  if (pm != "seeded_proxy")
    throw std::invalid_argument("config: perceptual_model must be seeded_proxy");
  std::string aug = gets("augmentation", "none");
  if (aug != "none") throw std::invalid_argument("config: augmentation must be none");
  std::string mp = gets("mixed_precision", "fp32");
  if (mp != "fp32") throw std::invalid_argument("config: mixed_precision must be fp32");
  if (m.count("freeze_encoder")) {
    bool freeze = parse_bool(m.at("freeze_encoder"), "freeze_encoder");
    if (freeze != (c.stage == 1))
      throw std::invalid_argument("config: freeze_encoder contradicts stage");
  }
  c.validate();
  return c;
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.image_size = resolution;
  mc.enc.p = patch_size;
  mc.enc.d = hidden_dim;
  mc.enc.depth = depth;
  mc.enc.heads = heads;
  mc.enc.mlp_ratio = mlp_ratio;
  mc.e = codebook_dim;
  mc.k = codebook_size;
  mc.beta = commitment_beta;
  mc.train_entries = train_entries;
  mc.init_seed = seed;
  mc.perceptual_seed = perceptual_seed;
  return mc;
}

LossWeights TrainConfig::weights() const {
  LossWeights w;
  w.lambda_g = discriminator_weight;
  w.lambda_d = distillation_weight;
  w.perceptual_weight = perceptual_loss_weight;
  w.beta = commitment_beta;
  return w;
}

double lr_shape_at(const TrainConfig& cfg, int64_t step) {
  if (step < 0 || step > cfg.total_steps)
    throw std::invalid_argument("lr_at: step outside [0, total_steps]");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return static_cast<double>(step) / cfg.warmup_steps;
  if (cfg.scheduler == "constant") return 1.0;
  double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  double progress = span <= 0.0 ? 1.0 : static_cast<double>(step - cfg.warmup_steps) / span;
  double floor = static_cast<double>(cfg.end_lr) / cfg.decoder_lr;
  return floor + 0.5 * (1.0 - floor) * (1.0 + std::cos(kPi * progress));
}

double lr_at(const TrainConfig& cfg, int64_t step) {
  // exact anchors: the peak at the warmup joint, end_lr at the final step
  if (cfg.scheduler == "cosine" && step == cfg.total_steps) return cfg.end_lr;
  return cfg.decoder_lr * lr_shape_at(cfg, step);
}

// ---- session ----

TrainSession::TrainSession(const TrainConfig& cfg, Mode mode) : cfg_(cfg), mode_(mode) {
  cfg_.validate();
  if (mode_ == Mode::Stage1 && cfg_.stage != 1)
    throw std::invalid_argument("TrainSession: stage-1 mode needs stage=1 config");
  if (mode_ != Mode::Stage1 && cfg_.stage != 2)
    throw std::invalid_argument("TrainSession: joint modes need stage=2 config");

  model_ = std::make_unique<TokenizerModel>(cfg_.model_config());
  Rng disc_rng(cfg_.seed ^ 0x64697363ULL);
  disc_ = std::make_unique<Discriminator>(model_->params, cfg_.resolution, disc_rng);
  proxy_ = std::make_unique<PerceptualProxy>(cfg_.resolution, cfg_.perceptual_seed);
  opt_enc_ = AdamW{cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay, 0};
  opt_dec_ = AdamW{cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay, 0};
  opt_disc_ = AdamW{cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay, 0};
  rng_.reseed(cfg_.seed ^ 0x747261696eULL);
  build_data();
  apply_freeze_rules();
  if (mode_ == Mode::JointE2E) snapshot_teacher();
}

void TrainSession::build_data() {
  Dataset full = gen_dataset(cfg_.train_images + cfg_.eval_images, cfg_.data_seed,
                             cfg_.resolution);
  size_t stride = static_cast<size_t>(cfg_.resolution) * cfg_.resolution * 3;
  auto slice = [&](int begin, int count) {
    Dataset d;
    d.image_size = full.image_size;
    d.pixels.assign(full.pixels.begin() + begin * stride,
                    full.pixels.begin() + (begin + count) * stride);
    d.labels.assign(full.labels.begin() + begin, full.labels.begin() + begin + count);
    d.ids.assign(full.ids.begin() + begin, full.ids.begin() + begin + count);
    return d;
  };
  train_data_ = slice(0, cfg_.train_images);
  eval_data_ = slice(cfg_.train_images, cfg_.eval_images);
}

void TrainSession::apply_freeze_rules() {
  model_->params.set_trainable(ParamGroup::Encoder, encoder_trains());
  model_->cb_entries->trainable = cfg_.train_entries;
}

void TrainSession::snapshot_teacher() {
  teacher_ = std::make_unique<TokenizerModel>(model_->cfg);
  for (Param& p : teacher_->params) {
    const Param* src = model_->params.find(p.name);
    if (src) p.value = src->value;
  }
  teacher_->cb_entries->value = model_->cb_entries->value;
  teacher_->cb_proj->value = model_->cb_proj->value;
  teacher_->params.set_trainable(ParamGroup::Encoder, false);
}

void TrainSession::load_encoder(const TokenizerModel& pretrained) {
  if (step_ != 0) throw std::invalid_argument("load_encoder: session already started");
  for (Param& p : model_->params) {
    if (p.group != ParamGroup::Encoder) continue;
    const Param* src = pretrained.params.find(p.name);
    if (!src) throw std::invalid_argument("load_encoder: missing parameter " + p.name);
    if (src->value.rows() != p.value.rows() || src->value.cols() != p.value.cols())
      throw ShapeError("load_encoder: shape mismatch for " + p.name);
    p.value = src->value;
  }
  zi_cache_valid_ = false;
  if (mode_ == Mode::JointE2E) snapshot_teacher();
}

void TrainSession::adopt_stage1_model(const TokenizerModel& stage1) {
  if (mode_ != Mode::Stage2)
    throw std::invalid_argument("adopt_stage1_model: only stage-2 sessions adopt checkpoints");
  if (step_ != 0) throw std::invalid_argument("adopt_stage1_model: session already started");
  for (Param& p : model_->params) {
    if (p.group == ParamGroup::Discriminator) continue;
    const Param* src = stage1.params.find(p.name);
    if (!src) throw std::invalid_argument("adopt_stage1_model: missing parameter " + p.name);
    if (src->value.rows() != p.value.rows() || src->value.cols() != p.value.cols())
      throw ShapeError("adopt_stage1_model: shape mismatch for " + p.name);
    p.value = src->value;
  }
  model_->cb_entries->value = stage1.cb_entries->value;
  model_->cb_proj->value = stage1.cb_proj->value;
  snapshot_teacher();
}

void TrainSession::rebuild_zi_cache() {
  int n = model_->tokens_per_image();
  int d = cfg_.hidden_dim;
  zi_cache_ = Mat(static_cast<Eigen::Index>(train_data_.count()) * n, d);
  const int chunk = 64;
  std::vector<int> positions(chunk);
  for (int begin = 0; begin < train_data_.count(); begin += chunk) {
    int count = std::min(chunk, train_data_.count() - begin);
    positions.resize(count);
    std::iota(positions.begin(), positions.end(), begin);
    LatentFeatures lf = model_->net->encode(train_data_.batch(positions));
    zi_cache_.middleRows(static_cast<Eigen::Index>(begin) * n, count * n) = lf.continuous;
  }
  zi_cache_valid_ = true;
}

bool TrainSession::gan_active() const {
  if (cfg_.discriminator_start_steps < 0) return false;
  if (mode_ == Mode::Stage1 && !cfg_.stage1_gan) return false;
  return step_ >= cfg_.discriminator_start_steps;
}

void TrainSession::log(const std::string& key, double value) {
  metrics_.push_back({step_, key, value});
}

void TrainSession::nan_abort(const LossBreakdown& parts) {
  std::string path = (std::filesystem::temp_directory_path() / "vqtok_nan_snapshot.ckpt").string();
  try {
    save(path);
  } catch (...) {
    path = "<snapshot failed>";
  }
  std::ostringstream msg;
  msg << "non-finite loss at step " << step_ << " (l2=" << parts.l2 << " quant=" << parts.quant
      << "); diagnostic snapshot: " << path;
  throw std::runtime_error(msg.str());
}

StepRecord TrainSession::step_once() {
  if (mode_ == Mode::Stage1 && !zi_cache_valid_) rebuild_zi_cache();

  const int b = cfg_.global_batch_size;
  const int n = model_->tokens_per_image();
  std::vector<int> positions(b);
  for (int i = 0; i < b; ++i)
    positions[i] = static_cast<int>(rng_.below(static_cast<uint32_t>(train_data_.count())));

  ImageBatch imgs = train_data_.batch(positions);
  Mat x_tokens = patchify(imgs, cfg_.patch_size);

  StepRecord rec;
  bool gan = gan_active();

  Tape t;
  Var x = t.input(x_tokens);
  Var z_i;
  if (mode_ == Mode::Stage1) {
    Mat z(static_cast<Eigen::Index>(b) * n, cfg_.hidden_dim);
    for (int i = 0; i < b; ++i)
      z.middleRows(static_cast<Eigen::Index>(i) * n, n) =
          zi_cache_.middleRows(static_cast<Eigen::Index>(positions[i]) * n, n);
    z_i = t.input(z);
  } else {
    z_i = model_->net->encode_trunk(t, x, b);
  }

  Var distill;
  if (mode_ != Mode::Stage1 && cfg_.distillation_weight > 0.0f) {
    if (!teacher_) throw std::invalid_argument("stage 2 requires an adopted stage-1 checkpoint");
    Tape tt;
    tt.set_inference(true);
    Var tz = teacher_->net->encode_trunk(tt, tt.input(x_tokens), b);
    distill = t.mse(z_i, t.input(tt.val(tz)));
  }

  Var zc = model_->net->to_code(t, z_i);
  Var cw = model_->projected_codebook(t);
  QuantizeVars qv = quantize_on_tape(t, zc, cw);
  Var st = t.straight_through(zc, qv.quantized);
  Var zb = model_->net->to_bottleneck(t, st);
  Var x_rec = model_->net->decode_tokens(t, zb, b);

  Var l2 = t.mse(x_rec, x);
  Var perc = proxy_->loss(t, x_rec, x, b, cfg_.patch_size);
  Var quant = t.add(qv.codebook_loss, t.scale(qv.commitment_loss, cfg_.commitment_beta));

  Var total = t.add(l2, t.scale(perc, cfg_.perceptual_loss_weight));
  total = t.add(total, quant);
  Var gen;
  if (gan) {
    gen = hinge_gen_loss(t, disc_->score_map(t, x_rec, b, cfg_.patch_size));
    total = t.add(total, t.scale(gen, cfg_.discriminator_weight));
  }
  if (distill.valid()) total = t.add(total, t.scale(distill, cfg_.distillation_weight));

  rec.losses.l2 = t.val(l2)(0, 0);
  rec.losses.perceptual = t.val(perc)(0, 0);
  rec.losses.quant = t.val(quant)(0, 0);
  rec.losses.adversarial = gen.valid() ? t.val(gen)(0, 0) : 0.0;
  rec.losses.distill = distill.valid() ? t.val(distill)(0, 0) : 0.0;
  rec.losses.total = t.val(total)(0, 0);
  if (!std::isfinite(rec.losses.total)) nan_abort(rec.losses);

  model_->params.zero_grads();
  t.backward(total);

  // one clip over the whole generator side, then per-group learning rates
  std::vector<Param*> gen_params;
  for (Param& p : model_->params)
    if (p.trainable && p.group != ParamGroup::Discriminator) gen_params.push_back(&p);
  rec.grad_norm = clip_global_norm(gen_params, cfg_.max_grad_norm);

  double shape = lr_shape_at(cfg_, std::min<int64_t>(step_, cfg_.total_steps));
  auto dec_group = model_->params.group(ParamGroup::Decoder);
  auto cb_group = model_->params.group(ParamGroup::Codebook);
  dec_group.insert(dec_group.end(), cb_group.begin(), cb_group.end());
  opt_dec_.step(dec_group, static_cast<float>(cfg_.decoder_lr * shape));
  if (encoder_trains()) {
    auto enc_group = model_->params.group(ParamGroup::Encoder);
    opt_enc_.step(enc_group, static_cast<float>(cfg_.encoder_lr * shape));
  }

  if (gan) {
    // discriminator update on the same batch, reconstruction detached; the
    // generator pass also left gradients on the disc params, so clear first
    auto disc_group = model_->params.group(ParamGroup::Discriminator);
    for (Param* p : disc_group) p->zero_grad();
    Tape td;
    Var real_scores = disc_->score_map(td, td.input(x_tokens), b, cfg_.patch_size);
    Var fake_scores = disc_->score_map(td, td.input(t.val(x_rec)), b, cfg_.patch_size);
    Var dloss = hinge_disc_loss(td, real_scores, fake_scores);
    rec.disc_loss = td.val(dloss)(0, 0);
    if (!std::isfinite(rec.disc_loss)) nan_abort(rec.losses);
    td.backward(dloss);
    clip_global_norm(disc_group, cfg_.max_grad_norm);
    opt_disc_.step(disc_group, static_cast<float>(cfg_.discriminator_lr * shape));
    rec.disc_updated = true;
  }

  ++step_;
  return rec;
}

void TrainSession::run(const std::function<void(int64_t, const StepRecord&)>& on_step) {
  if (step_ == 0) {
    EvalSnapshot ev = evaluate();
    log("eval_psnr", ev.psnr_db);
    log("eval_ssim", ev.ssim);
    log("eval_util", ev.utilization);
    log("eval_l2", ev.recon_l2);
  }
  while (step_ < cfg_.total_steps) {
    StepRecord rec = step_once();
    log("loss_total", rec.losses.total);
    log("loss_l2", rec.losses.l2);
    log("loss_quant", rec.losses.quant);
    if (rec.losses.distill != 0.0) log("loss_distill", rec.losses.distill);
    if (rec.disc_updated) log("loss_disc", rec.disc_loss);
    if (on_step) on_step(step_, rec);
    if (cfg_.eval_interval > 0 &&
        (step_ % cfg_.eval_interval == 0 || step_ == cfg_.total_steps)) {
      EvalSnapshot ev = evaluate();
      log("eval_psnr", ev.psnr_db);
      log("eval_ssim", ev.ssim);
      log("eval_util", ev.utilization);
      log("eval_l2", ev.recon_l2);
    }
  }
}

EvalSnapshot TrainSession::evaluate() {
  std::vector<int> positions(eval_data_.count());
  std::iota(positions.begin(), positions.end(), 0);
  return evaluate_tokenizer(*model_, eval_data_, positions);
}

EvalSnapshot evaluate_tokenizer(const TokenizerModel& model, const Dataset& data,
                                std::span<const int> positions, int batch_size) {
  EvalSnapshot out;
  std::vector<int> all_indices;
  double psnr_acc = 0.0, ssim_acc = 0.0, l2_acc = 0.0;
  int count = 0;
  for (size_t begin = 0; begin < positions.size(); begin += batch_size) {
    size_t cnt = std::min<size_t>(batch_size, positions.size() - begin);
    std::vector<int> chunk(positions.begin() + begin, positions.begin() + begin + cnt);
    ImageBatch x = data.batch(chunk);
    std::vector<int> idx = model.encode_indices(x);
    all_indices.insert(all_indices.end(), idx.begin(), idx.end());
    ImageBatch rec = model.decode_indices(idx, x.b);
    ReconReport rep = recon_report(x, rec);
    psnr_acc += rep.psnr_db * x.b;
    ssim_acc += rep.ssim * x.b;
    l2_acc += static_cast<double>(l2_recon(x, rec)) * x.b;
    count += x.b;
  }
  out.psnr_db = psnr_acc / count;
  out.ssim = ssim_acc / count;
  out.recon_l2 = l2_acc / count;
  out.utilization = utilization(model.cfg.k, all_indices).ratio;
  return out;
}

uint64_t TrainSession::encoder_checksum() const {
  auto enc = const_cast<ParamStore&>(model_->params).group(ParamGroup::Encoder);
  return checksum(enc);
}

uint64_t TrainSession::teacher_checksum() const {
  if (!teacher_) return 0;
  auto enc = const_cast<ParamStore&>(teacher_->params).group(ParamGroup::Encoder);
  return checksum(enc);
}

// ---- checkpointing ----

namespace {

void write_moments(std::ostream& out, const ParamStore& ps) {
  uint32_t count = static_cast<uint32_t>(ps.size());
  serial::write_pod<uint32_t>(out, count);
  for (const Param& p : ps) {
    serial::write_string(out, p.name);
    serial::write_mat(out, p.m);
    serial::write_mat(out, p.v);
  }
}

void read_moments(std::istream& in, ParamStore& ps) {
  uint32_t count = serial::read_pod<uint32_t>(in, "moment count");
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = serial::read_string(in, "moment name");
    Mat m = serial::read_mat(in, "m");
    Mat v = serial::read_mat(in, "v");
    Param* p = ps.find(name);
    if (!p) throw LoadError("checkpoint: moments for unknown param " + name);
    p->m = std::move(m);
    p->v = std::move(v);
  }
}

void write_group_values(std::ostream& out, ParamStore& ps, ParamGroup g) {
  auto params = ps.group(g);
  serial::write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (Param* p : params) {
    serial::write_string(out, p->name);
    serial::write_mat(out, p->value);
  }
}

void read_group_values(std::istream& in, ParamStore& ps) {
  uint32_t count = serial::read_pod<uint32_t>(in, "group count");
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = serial::read_string(in, "group param name");
    Mat value = serial::read_mat(in, name.c_str());
    Param* p = ps.find(name);
    if (!p) throw LoadError("checkpoint: unknown param " + name);
    p->value = std::move(value);
  }
}

}  // namespace

void TrainSession::save(const std::string& path) const {
  CheckpointSections sections;
  {
    std::ostringstream cfg_text;
    for (const auto& [k, v] : model_->cfg.to_map()) cfg_text << k << " = " << v << "\n";
    sections.set(SectionId::Config, cfg_text.str());
  }
  {
    std::ostringstream cfg_text;
    for (const auto& [k, v] : cfg_.to_map()) cfg_text << k << " = " << v << "\n";
    sections.set(SectionId::TrainConfigText, cfg_text.str());
  }
  sections.set(SectionId::NamedArrays, serialize_named_arrays(model_->params));
  {
    std::ostringstream cb(std::ios::binary);
    write_codebook_segment(cb, model_->codebook());
    sections.set(SectionId::CodebookSegment, cb.str());
  }
  {
    std::ostringstream st(std::ios::binary);
    serial::write_pod<uint64_t>(st, static_cast<uint64_t>(step_));
    serial::write_pod<uint32_t>(st, static_cast<uint32_t>(mode_));
    auto rst = rng_.state();
    serial::write_pod<uint64_t>(st, rst.state);
    serial::write_pod<uint64_t>(st, rst.inc);
    serial::write_pod<uint64_t>(st, static_cast<uint64_t>(opt_enc_.t));
    serial::write_pod<uint64_t>(st, static_cast<uint64_t>(opt_dec_.t));
    serial::write_pod<uint64_t>(st, static_cast<uint64_t>(opt_disc_.t));
    write_moments(st, model_->params);
    write_group_values(st, model_->params, ParamGroup::Discriminator);
    serial::write_pod<uint64_t>(st, metrics_.size());
    for (const MetricEntry& m : metrics_) {
      serial::write_pod<uint64_t>(st, static_cast<uint64_t>(m.step));
      serial::write_string(st, m.key);
      serial::write_pod<double>(st, m.value);
    }
    sections.set(SectionId::TrainerState, st.str());
  }
  if (teacher_) sections.set(SectionId::TeacherArrays, serialize_named_arrays(teacher_->params));
  write_checkpoint_file(path, sections);
}

TrainSession TrainSession::load(const std::string& path) {
  CheckpointSections sections = read_checkpoint_file(path);
  TrainConfig cfg = TrainConfig::from_map(parse_config_text(sections.get(SectionId::TrainConfigText)));

  std::istringstream st(sections.get(SectionId::TrainerState), std::ios::binary);
  uint64_t step = serial::read_pod<uint64_t>(st, "step");
  Mode mode = static_cast<Mode>(serial::read_pod<uint32_t>(st, "mode"));

  TrainSession s(cfg, mode);
  load_named_arrays(sections.get(SectionId::NamedArrays), s.model_->params);
  {
    std::istringstream cb(sections.get(SectionId::CodebookSegment), std::ios::binary);
    CodebookState cbs = read_codebook_segment(cb);
    cbs.beta = cfg.commitment_beta;
    cbs.train_entries = cfg.train_entries;
    s.model_->set_codebook(cbs);
  }
  s.step_ = static_cast<int64_t>(step);
  Rng::State rst;
  rst.state = serial::read_pod<uint64_t>(st, "rng state");
  rst.inc = serial::read_pod<uint64_t>(st, "rng inc");
  s.rng_.set_state(rst);
  s.opt_enc_.t = static_cast<int64_t>(serial::read_pod<uint64_t>(st, "opt_enc t"));
  s.opt_dec_.t = static_cast<int64_t>(serial::read_pod<uint64_t>(st, "opt_dec t"));
  s.opt_disc_.t = static_cast<int64_t>(serial::read_pod<uint64_t>(st, "opt_disc t"));
  read_moments(st, s.model_->params);
  read_group_values(st, s.model_->params);
  uint64_t metric_count = serial::read_pod<uint64_t>(st, "metric count");
  s.metrics_.clear();
  for (uint64_t i = 0; i < metric_count; ++i) {
    MetricEntry m;
    m.step = static_cast<int64_t>(serial::read_pod<uint64_t>(st, "metric step"));
    m.key = serial::read_string(st, "metric key");
    m.value = serial::read_pod<double>(st, "metric value");
    s.metrics_.push_back(std::move(m));
  }

  if (sections.has(SectionId::TeacherArrays)) {
    s.teacher_ = std::make_unique<TokenizerModel>(s.model_->cfg);
    load_named_arrays(sections.get(SectionId::TeacherArrays), s.teacher_->params);
    s.teacher_->params.set_trainable(ParamGroup::Encoder, false);
  } else if (mode != Mode::Stage1) {
    throw LoadError("checkpoint: stage-2 state without a teacher snapshot");
  }
  s.apply_freeze_rules();
  return s;
}

}  // namespace vqtok
