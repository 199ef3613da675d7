// Command-line front end: one subcommand per pipeline stage, from pretext
// pretraining through tokenizer training, reconstruction, ablation harnesses,
// clustering and autoregressive generation.

#include "vqtok/argen.hpp"
#include "vqtok/evalkit.hpp"
#include "vqtok/metrics.hpp"
#include "vqtok/model.hpp"
#include "vqtok/png_io.hpp"
#include "vqtok/serial.hpp"
#include "vqtok/trainer.hpp"
#include "vqtok/vfm_pretext.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace vqtok;

namespace {

/// Bad invocations and unreadable inputs exit 1; failures during real work
/// exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::optional<int> steps;
};

ConfigMap load_config_with_overrides(const CommonOpts& opts) {
  if (opts.config_path.empty()) throw UsageError("missing --config");
  if (!fs::exists(opts.config_path))
    throw UsageError("config file not found: " + opts.config_path);
  ConfigMap cfg;
  try {
    cfg = parse_config_file(opts.config_path);
  } catch (const std::exception& ex) {
    throw UsageError(std::string("config parse error: ") + ex.what());
  }
  for (const std::string& kv : opts.overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got: " + kv);
    cfg[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (opts.seed) cfg["seed"] = std::to_string(*opts.seed);
  if (opts.steps) cfg["total_steps"] = std::to_string(*opts.steps);
  return cfg;
}

fs::path resolve_out_dir(const CommonOpts& opts, const std::string& command) {
  if (!opts.out_dir.empty()) return opts.out_dir;
  if (const char* root = std::getenv("VQTOK_OUT_ROOT")) return fs::path(root) / command;
  throw UsageError("missing --out (or set VQTOK_OUT_ROOT)");
}

/// Creates the output directory and records the resolved configuration,
/// seed and source revision before any heavy work starts.
class Run {
 public:
  Run(const std::string& command, const fs::path& out_dir, const ConfigMap& resolved,
      const std::vector<std::string>& argv) {
    out_ = out_dir;
    fs::create_directories(out_);
    json manifest;
    manifest["command"] = command;
    manifest["git_describe"] = VQTOK_GIT_DESCRIBE;
    manifest["argv"] = argv;
    json cfg = json::object();
    for (const auto& [k, v] : resolved) cfg[k] = v;
    manifest["config"] = cfg;
    auto it = resolved.find("seed");
    manifest["seed"] = it == resolved.end() ? "0" : it->second;
    std::ofstream mf(out_ / "manifest.json");
    mf << manifest.dump(2) << "\n";
    metrics_.open(out_ / "metrics.jsonl");
  }

  const fs::path& dir() const { return out_; }

  void metric(json line) { metrics_ << line.dump() << "\n"; }
  void flush() { metrics_.flush(); }

 private:
  fs::path out_;
  std::ofstream metrics_;
};

TokenizerModel require_model(const std::string& path) {
  if (path.empty()) throw UsageError("missing --ckpt");
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return load_model_checkpoint(path);
}

ImageBatch load_png_batch(const std::vector<std::string>& paths) {
  if (paths.empty()) throw UsageError("no input images");
  PngImage first = read_png_rgb8(paths[0]);
  ImageBatch batch = ImageBatch::zeros(static_cast<int>(paths.size()), first.h, first.w);
  for (size_t i = 0; i < paths.size(); ++i) {
    PngImage img = i == 0 ? std::move(first) : read_png_rgb8(paths[i]);
    if (img.h != batch.h || img.w != batch.w)
      throw UsageError("input images must share one size");
    ImageBatch one = normalize(img.rgb, 1, img.h, img.w);
    std::copy(one.pixels.begin(), one.pixels.end(),
              batch.pixels.begin() + i * one.pixels.size());
  }
  return batch;
}

std::vector<std::string> collect_inputs(const std::string& input) {
  if (input.empty()) throw UsageError("missing --input");
  if (!fs::exists(input)) throw UsageError("input not found: " + input);
  std::vector<std::string> paths;
  if (fs::is_directory(input)) {
    for (const auto& entry : fs::directory_iterator(input))
      if (entry.path().extension() == ".png") paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw UsageError("no .png files in " + input);
  } else {
    paths.push_back(input);
  }
  return paths;
}

void log_step(Run& run, int64_t step, const StepRecord& rec) {
  json line;
  line["step"] = step;
  line["total"] = rec.losses.total;
  line["l2"] = rec.losses.l2;
  line["perceptual"] = rec.losses.perceptual;
  line["quant"] = rec.losses.quant;
  if (rec.losses.distill != 0.0) line["distill"] = rec.losses.distill;
  if (rec.disc_updated) {
    line["adversarial"] = rec.losses.adversarial;
    line["disc"] = rec.disc_loss;
  }
  line["grad_norm"] = rec.grad_norm;
  run.metric(line);
}

void log_eval(Run& run, const TrainSession& session) {
  const auto& ms = session.metrics();
  for (auto it = ms.rbegin(); it != ms.rend() && it->step == session.step(); ++it) {
    if (it->key.rfind("eval_", 0) == 0) {
      json line;
      line["step"] = it->step;
      line[it->key] = it->value;
      run.metric(line);
    }
  }
}

// ---- pretext configuration ----

struct PretextConfig {
  int images = 4096;
  uint64_t data_seed = 77;
  TrainConfig arch;  // reuses the tokenizer architecture keys
  PretrainOptions opts;
};

PretextConfig parse_pretext_config(ConfigMap m) {
  PretextConfig pc;
  auto take = [&m](const char* key, auto dflt) {
    auto it = m.find(key);
    if (it == m.end()) return dflt;
    using T = decltype(dflt);
    T value{};
    if constexpr (std::is_same_v<T, int>)
      value = std::stoi(it->second);
    else if constexpr (std::is_same_v<T, float>)
      value = std::stof(it->second);
    else
      value = static_cast<T>(std::stoull(it->second));
    m.erase(it);
    return value;
  };
  pc.images = take("images", 4096);
  pc.data_seed = take("data_seed", static_cast<uint64_t>(77));
  pc.opts.steps = take("steps", 800);
  pc.opts.lr = take("learning_rate", 1e-3f);
  pc.opts.batch_size = take("global_batch_size", 64);
  pc.opts.weight_decay = take("weight_decay", 0.0f);
  pc.opts.max_grad_norm = take("max_grad_norm", 1.0f);
  pc.opts.seed = take("seed", static_cast<uint64_t>(0));
  TrainConfig arch;
  arch.resolution = take("resolution", 32);
  arch.patch_size = take("patch_size", 4);
  arch.hidden_dim = take("hidden_dim", 64);
  arch.depth = take("depth", 4);
  arch.heads = take("heads", 4);
  arch.mlp_ratio = take("mlp_ratio", 4.0f);
  arch.codebook_dim = take("codebook_dim", 96);
  arch.codebook_size = take("codebook_size", 256);
  arch.seed = pc.opts.seed;
  if (!m.empty())
    throw UsageError("pretext config: unknown key '" + m.begin()->first + "'");
  pc.arch = arch;
  return pc;
}

// ---- subcommand bodies ----

int cmd_pretrain(const CommonOpts& common, const std::vector<std::string>& argv) {
  ConfigMap resolved = load_config_with_overrides(common);
  PretextConfig pc = parse_pretext_config(resolved);
  fs::path out = resolve_out_dir(common, "pretrain");
  Run run("pretrain", out, resolved, argv);

  Dataset data = gen_dataset(pc.images, pc.data_seed, pc.arch.resolution);
  TokenizerModel model(pc.arch.model_config());
  PretrainResult res = pretrain_encoder(model, data, pc.opts);
  ProbeResult probe = linear_probe(model, data);

  run.metric({{"head_accuracy", res.head_accuracy}, {"probe_accuracy", probe.accuracy}});
  save_model_checkpoint((run.dir() / "encoder.ckpt").string(), model);
  std::cout << "pretrain: head_accuracy=" << res.head_accuracy
            << " probe_accuracy=" << probe.accuracy << "\n"
            << "encoder checkpoint: " << (run.dir() / "encoder.ckpt").string() << "\n";
  return 0;
}

int cmd_train(int stage, const CommonOpts& common, const std::string& ckpt,
              const std::vector<std::string>& argv) {
  ConfigMap resolved = load_config_with_overrides(common);
  resolved["stage"] = std::to_string(stage);
  TrainConfig cfg;
  try {
    cfg = TrainConfig::from_map(resolved);
  } catch (const std::exception& ex) {
    throw UsageError(std::string("config error: ") + ex.what());
  }
  if (ckpt.empty())
    throw UsageError(stage == 1 ? "missing --ckpt (pretext encoder checkpoint)"
                                : "missing --ckpt (stage-1 checkpoint)");
  if (!fs::exists(ckpt)) throw UsageError("checkpoint not found: " + ckpt);
  TokenizerModel init = load_model_checkpoint(ckpt);

  std::string name = stage == 1 ? "train-stage1" : "train-stage2";
  fs::path out = resolve_out_dir(common, name);
  Run run(name, out, resolved, argv);

  TrainSession session(cfg);
  if (stage == 1)
    session.load_encoder(init);
  else
    session.adopt_stage1_model(init);
  uint64_t frozen_before = stage == 1 ? session.encoder_checksum() : session.teacher_checksum();

  int64_t last_eval = -1;
  session.run([&](int64_t step, const StepRecord& rec) {
    log_step(run, step, rec);
    if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0 && step != last_eval) {
      log_eval(run, session);
      last_eval = step;
      std::cout << "step " << step << " total=" << rec.losses.total << "\n";
      run.flush();
    }
  });
  log_eval(run, session);

  uint64_t frozen_after = stage == 1 ? session.encoder_checksum() : session.teacher_checksum();
  if (frozen_before != frozen_after)
    throw std::runtime_error("freeze contract violated during training");

  EvalSnapshot ev = session.evaluate();
  run.metric({{"final_psnr", ev.psnr_db},
              {"final_ssim", ev.ssim},
              {"final_utilization", ev.utilization}});
  std::string ckpt_name = stage == 1 ? "stage1.ckpt" : "stage2.ckpt";
  session.save((run.dir() / ckpt_name).string());
  std::cout << name << ": psnr=" << ev.psnr_db << " ssim=" << ev.ssim
            << " utilization=" << ev.utilization << "\n"
            << "checkpoint: " << (run.dir() / ckpt_name).string() << "\n";
  return 0;
}

int cmd_reconstruct(const CommonOpts& common, const std::string& ckpt, const std::string& input,
                    const std::vector<std::string>& argv) {
  TokenizerModel model = require_model(ckpt);
  std::vector<std::string> paths = collect_inputs(input);
  fs::path out = resolve_out_dir(common, "reconstruct");
  Run run("reconstruct", out, model.cfg.to_map(), argv);

  ImageBatch x = load_png_batch(paths);
  if (x.h != model.cfg.image_size || x.w != model.cfg.image_size)
    throw std::runtime_error("input size does not match the checkpoint resolution");
  ImageBatch rec = model.reconstruct(x);
  ReconReport rep = recon_report(x, rec);
  write_comparison_png((run.dir() / "reconstruction.png").string(), x, rec);
  run.metric({{"psnr", rep.psnr_db}, {"ssim", rep.ssim}, {"images", x.b}});
  std::cout << "reconstruct: psnr=" << rep.psnr_db << " ssim=" << rep.ssim << " images=" << x.b
            << "\n"
            << "mosaic: " << (run.dir() / "reconstruction.png").string() << "\n";
  return 0;
}

int cmd_encode(const CommonOpts& common, const std::string& ckpt, const std::string& input,
               const std::vector<std::string>& argv) {
  TokenizerModel model = require_model(ckpt);
  std::vector<std::string> paths = collect_inputs(input);
  fs::path out = resolve_out_dir(common, "encode");
  Run run("encode", out, model.cfg.to_map(), argv);

  ImageBatch x = load_png_batch(paths);
  if (x.h != model.cfg.image_size || x.w != model.cfg.image_size)
    throw std::runtime_error("input size does not match the checkpoint resolution");
  std::vector<int> idx = model.encode_indices(x);
  TokenStreamFile f;
  f.k = static_cast<uint32_t>(model.cfg.k);
  f.rows = static_cast<uint16_t>(model.net->grid_rows());
  f.cols = static_cast<uint16_t>(model.net->grid_cols());
  f.indices.assign(idx.begin(), idx.end());
  std::string token_path = (run.dir() / "tokens.vqts").string();
  write_tokens(token_path, f);
  run.metric({{"images", x.b}, {"tokens_per_image", model.tokens_per_image()}});
  std::cout << "encode: " << x.b << " images -> " << token_path << "\n";
  return 0;
}

int cmd_decode(const CommonOpts& common, const std::string& ckpt, const std::string& tokens,
               const std::vector<std::string>& argv) {
  TokenizerModel model = require_model(ckpt);
  if (tokens.empty() || !fs::exists(tokens)) throw UsageError("missing --tokens file");
  fs::path out = resolve_out_dir(common, "decode");
  Run run("decode", out, model.cfg.to_map(), argv);

  TokenStreamFile f = read_tokens(tokens);
  if (static_cast<int>(f.k) != model.cfg.k || f.rows != model.net->grid_rows() ||
      f.cols != model.net->grid_cols())
    throw std::runtime_error("token stream grid does not match the checkpoint");
  int n = f.rows * f.cols;
  for (uint32_t i = 0; i < f.count(); ++i) {
    std::vector<int> idx(f.indices.begin() + static_cast<size_t>(i) * n,
                         f.indices.begin() + static_cast<size_t>(i + 1) * n);
    ImageBatch img = model.decode_indices(idx, 1);
    std::vector<uint8_t> rgb = denormalize(img);
    char name[32];
    std::snprintf(name, sizeof(name), "decoded_%05u.png", i);
    write_png_rgb8((run.dir() / name).string(), img.w, img.h, rgb.data());
  }
  run.metric({{"images", f.count()}});
  std::cout << "decode: " << f.count() << " images -> " << run.dir().string() << "\n";
  return 0;
}

std::vector<std::pair<int, int>> parse_grid(const std::string& grid) {
  // "256x16,256x32" -> {(256,16),(256,32)}
  std::vector<std::pair<int, int>> cells;
  std::istringstream in(grid);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    size_t x = cell.find('x');
    if (x == std::string::npos) throw UsageError("grid cells must look like KxE: " + cell);
    cells.emplace_back(std::stoi(cell.substr(0, x)), std::stoi(cell.substr(x + 1)));
  }
  if (cells.empty()) throw UsageError("empty --grid");
  return cells;
}

int cmd_ablate_codebook(const CommonOpts& common, const std::string& ckpt,
                        const std::string& grid, const std::vector<std::string>& argv) {
  ConfigMap resolved = load_config_with_overrides(common);
  resolved["stage"] = "1";
  TrainConfig cfg;
  try {
    cfg = TrainConfig::from_map(resolved);
  } catch (const std::exception& ex) {
    throw UsageError(std::string("config error: ") + ex.what());
  }
  std::optional<TokenizerModel> init;
  if (!ckpt.empty()) init = require_model(ckpt);
  auto cells = parse_grid(grid);
  fs::path out = resolve_out_dir(common, "ablate-codebook");
  Run run("ablate-codebook", out, resolved, argv);

  auto rows = ablate_codebook(cells, cfg, init ? &*init : nullptr);
  std::string csv = codebook_ablation_csv(rows);
  std::ofstream((run.dir() / "codebook_ablation.csv")) << csv;
  for (const auto& r : rows)
    run.metric({{"k", r.k},
                {"e", r.e},
                {"psnr", r.failed ? 0.0 : r.psnr_db},
                {"utilization", r.failed ? 0.0 : r.ratio},
                {"failed", r.failed}});
  std::cout << csv;
  return 0;
}

int cmd_ablate_strategy(const CommonOpts& common, const std::string& stage2_config,
                        const std::string& ckpt, const std::vector<std::string>& argv) {
  ConfigMap resolved1 = load_config_with_overrides(common);
  resolved1["stage"] = "1";
  if (stage2_config.empty() || !fs::exists(stage2_config))
    throw UsageError("missing --stage2-config");
  ConfigMap resolved2 = parse_config_file(stage2_config);
  resolved2["stage"] = "2";

  StrategyOptions opts;
  try {
    opts.stage1 = TrainConfig::from_map(resolved1);
    opts.stage2 = TrainConfig::from_map(resolved2);
  } catch (const std::exception& ex) {
    throw UsageError(std::string("config error: ") + ex.what());
  }
  TokenizerModel init = require_model(ckpt);
  fs::path out = resolve_out_dir(common, "ablate-strategy");
  ConfigMap merged = resolved1;
  for (const auto& [k, v] : resolved2) merged["stage2." + k] = v;
  Run run("ablate-strategy", out, merged, argv);

  StrategyAblation result = strategy_ablation(init, opts);
  std::string csv = strategy_ablation_csv(result);
  std::ofstream((run.dir() / "strategy_ablation.csv")) << csv;
  for (const auto& r : result.rows)
    run.metric({{"two_stage", r.two_stage},
                {"self_distill", r.self_distill},
                {"psnr", r.psnr_db},
                {"probe", r.probe_accuracy}});
  run.metric({{"teacher_probe", result.teacher_probe}});
  std::cout << csv;
  return 0;
}

int cmd_cluster(const CommonOpts& common, const std::string& ckpt, int clusters, int images,
                uint64_t data_seed, uint64_t seed, const std::vector<std::string>& argv) {
  TokenizerModel model = require_model(ckpt);
  fs::path out = resolve_out_dir(common, "cluster");
  ConfigMap resolved = model.cfg.to_map();
  resolved["n_clusters"] = std::to_string(clusters);
  resolved["images"] = std::to_string(images);
  resolved["data_seed"] = std::to_string(data_seed);
  resolved["seed"] = std::to_string(seed);
  Run run("cluster", out, resolved, argv);

  Dataset data = gen_dataset(images, data_seed, model.cfg.image_size);
  std::vector<int> positions(data.count());
  std::iota(positions.begin(), positions.end(), 0);
  ClusterReport rep = cluster_compare(model, data, positions, clusters, seed);
  run.metric({{"purity_continuous", rep.purity_continuous},
              {"purity_discrete", rep.purity_discrete}});
  std::ofstream csv(run.dir() / "cluster.csv");
  csv << "representation,purity\ncontinuous," << rep.purity_continuous << "\ndiscrete,"
      << rep.purity_discrete << "\n";
  std::cout << "cluster: purity_continuous=" << rep.purity_continuous
            << " purity_discrete=" << rep.purity_discrete << "\n";
  return 0;
}

int cmd_ar_train(const CommonOpts& common, const std::string& tokenizer_ckpt, int images,
                 uint64_t data_seed, const std::vector<std::string>& argv) {
  ConfigMap resolved = load_config_with_overrides(common);
  TokenizerModel tokenizer = require_model(tokenizer_ckpt);
  ArConfig cfg;
  try {
    ConfigMap ar_map = resolved;
    ar_map.erase("images");
    ar_map.erase("data_seed");
    if (auto it = resolved.find("images"); it != resolved.end()) images = std::stoi(it->second);
    if (auto it = resolved.find("data_seed"); it != resolved.end())
      data_seed = std::stoull(it->second);
    cfg = ArConfig::from_map(ar_map);
  } catch (const std::exception& ex) {
    throw UsageError(std::string("config error: ") + ex.what());
  }
  if (cfg.k != tokenizer.cfg.k || cfg.rows != tokenizer.net->grid_rows() ||
      cfg.cols != tokenizer.net->grid_cols())
    throw UsageError("ar config grid/vocabulary does not match the tokenizer checkpoint");
  fs::path out = resolve_out_dir(common, "ar-train");
  Run run("ar-train", out, resolved, argv);

  Dataset data = gen_dataset(images, data_seed, tokenizer.cfg.image_size);
  ArModel model(cfg);
  std::vector<TokenSequence> sequences = tokenize_dataset(tokenizer, data, model.vocab);
  NtpTrainStats stats = ntp_train(model, sequences);
  run.metric({{"initial_loss", stats.initial_loss},
              {"final_loss", stats.final_loss},
              {"ln_k", std::log(static_cast<double>(cfg.k))}});
  save_ar_checkpoint((run.dir() / "argen.ckpt").string(), model);
  std::cout << "ar-train: initial_loss=" << stats.initial_loss
            << " final_loss=" << stats.final_loss << " ln(k)=" << std::log((double)cfg.k) << "\n"
            << "checkpoint: " << (run.dir() / "argen.ckpt").string() << "\n";
  return 0;
}

int cmd_ar_sample(const CommonOpts& common, const std::string& ar_ckpt,
                  const std::string& tokenizer_ckpt, int class_id, int count, float temperature,
                  int top_k, uint64_t seed, const std::vector<std::string>& argv) {
  if (ar_ckpt.empty() || !fs::exists(ar_ckpt)) throw UsageError("missing --ar-ckpt");
  TokenizerModel tokenizer = require_model(tokenizer_ckpt);
  ArModel model = load_ar_checkpoint(ar_ckpt);
  if (top_k <= 0) top_k = model.cfg.k;  // default: full visual vocabulary
  if (class_id < 0 || class_id >= model.cfg.classes) throw UsageError("--class-id out of range");
  if (count < 1) throw UsageError("--n must be positive");
  fs::path out = resolve_out_dir(common, "ar-sample");
  ConfigMap resolved = model.cfg.to_map();
  resolved["class_id"] = std::to_string(class_id);
  resolved["n"] = std::to_string(count);
  resolved["temperature"] = std::to_string(temperature);
  resolved["top_k"] = std::to_string(top_k);
  resolved["seed"] = std::to_string(seed);
  Run run("ar-sample", out, resolved, argv);

  int n = model.cfg.rows * model.cfg.cols;
  ImageBatch images = ImageBatch::zeros(count, tokenizer.cfg.image_size,
                                        tokenizer.cfg.image_size);
  TokenStreamFile f;
  f.k = static_cast<uint32_t>(model.cfg.k);
  f.rows = static_cast<uint16_t>(model.cfg.rows);
  f.cols = static_cast<uint16_t>(model.cfg.cols);
  size_t stride = images.pixels.size() / count;
  for (int i = 0; i < count; ++i) {
    TokenSequence seq = model.sample(class_id, model.cfg.rows, model.cfg.cols, temperature,
                                     top_k, seed + static_cast<uint64_t>(i));
    std::vector<int> idx = strip_sequence(model.vocab, seq);
    for (int v : idx) f.indices.push_back(static_cast<uint32_t>(v));
    f.class_ids.push_back(static_cast<uint32_t>(class_id));
    ImageBatch img = tokenizer.decode_indices(idx, 1);
    std::copy(img.pixels.begin(), img.pixels.end(), images.pixels.begin() + i * stride);
  }
  write_tokens((run.dir() / "samples.vqts").string(), f);
  int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count)))));
  write_grid_png((run.dir() / "samples.png").string(), images, cols);
  run.metric({{"samples", count}, {"class_id", class_id}, {"tokens_per_image", n}});
  std::cout << "ar-sample: " << count << " samples -> " << run.dir().string() << "\n";
  return 0;
}

int cmd_metrics(const CommonOpts& common, const std::string& a, const std::string& b,
                double range, const std::vector<std::string>& argv) {
  if (a.empty() || b.empty()) throw UsageError("metrics needs --a and --b");
  std::vector<std::string> pa = collect_inputs(a);
  std::vector<std::string> pb = collect_inputs(b);
  if (pa.size() != pb.size()) throw UsageError("image sets differ in size");
  fs::path out = resolve_out_dir(common, "metrics");
  ConfigMap resolved{{"a", a}, {"b", b}, {"range", std::to_string(range)}};
  Run run("metrics", out, resolved, argv);

  ImageBatch xa = load_png_batch(pa);
  ImageBatch xb = load_png_batch(pb);
  ReconReport rep = recon_report(xa, xb, range);
  run.metric({{"psnr", rep.psnr_db}, {"ssim", rep.ssim}, {"images", xa.b}});
  std::cout << "metrics: psnr=" << rep.psnr_db << " ssim=" << rep.ssim << " images=" << xa.b
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unified image tokenizer: projected-VQ autoencoder, two-stage training,"
               " ablations and a small autoregressive generator"};
  app.require_subcommand(1);
  std::vector<std::string> raw_argv(argv, argv + argc);

  CommonOpts common;
  std::string ckpt, input, tokens, grid, stage2_config, ar_ckpt, a_path, b_path;
  int clusters = 8, images = 1024, class_id = 0, count = 16, top_k = 0;
  float temperature = 1.0f;
  uint64_t data_seed = 77, sample_seed = 0;
  double range = 2.0;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) cmd->add_option("--config", common.config_path, "flat key=value config file");
    cmd->add_option("--out", common.out_dir, "output directory (or set VQTOK_OUT_ROOT)");
    cmd->add_option("--set", common.overrides, "override config entries, key=value")
        ->take_all();
    cmd->add_option("--seed", common.seed, "override the config seed");
    cmd->add_option("--steps", common.steps, "override total_steps");
  };

  CLI::App* pretrain = app.add_subcommand("pretrain", "pretext-train the encoder stand-in");
  add_common(pretrain, true);

  CLI::App* stage1 = app.add_subcommand("train-stage1", "frozen-encoder codebook+decoder run");
  add_common(stage1, true);
  stage1->add_option("--ckpt", ckpt, "pretext encoder checkpoint");

  CLI::App* stage2 = app.add_subcommand("train-stage2", "joint run with self-distillation");
  add_common(stage2, true);
  stage2->add_option("--ckpt", ckpt, "stage-1 checkpoint");

  CLI::App* reconstruct = app.add_subcommand("reconstruct", "round-trip images and report metrics");
  add_common(reconstruct, false);
  reconstruct->add_option("--ckpt", ckpt, "tokenizer checkpoint");
  reconstruct->add_option("--input", input, "png file or directory");

  CLI::App* encode = app.add_subcommand("encode", "images to a token stream");
  add_common(encode, false);
  encode->add_option("--ckpt", ckpt, "tokenizer checkpoint");
  encode->add_option("--input", input, "png file or directory");

  CLI::App* decode = app.add_subcommand("decode", "token stream to images");
  add_common(decode, false);
  decode->add_option("--ckpt", ckpt, "tokenizer checkpoint");
  decode->add_option("--tokens", tokens, "token stream file");

  CLI::App* abl_cb = app.add_subcommand("ablate-codebook", "sweep codebook size/dimension");
  add_common(abl_cb, true);
  abl_cb->add_option("--ckpt", ckpt, "pretext encoder checkpoint (optional)");
  abl_cb->add_option("--grid", grid, "cells as KxE, comma separated");

  CLI::App* abl_st = app.add_subcommand("ablate-strategy", "compare training strategies");
  add_common(abl_st, true);
  abl_st->add_option("--stage2-config", stage2_config, "stage-2 config file");
  abl_st->add_option("--ckpt", ckpt, "pretext encoder checkpoint");

  CLI::App* cluster = app.add_subcommand("cluster", "continuous vs discrete clustering");
  add_common(cluster, false);
  cluster->add_option("--ckpt", ckpt, "tokenizer checkpoint");
  cluster->add_option("--clusters", clusters, "cluster count");
  cluster->add_option("--images", images, "procedural images to cluster");
  cluster->add_option("--data-seed", data_seed, "dataset seed");
  cluster->add_option("--cluster-seed", sample_seed, "k-means init seed");

  CLI::App* ar_train = app.add_subcommand("ar-train", "train the token generator");
  add_common(ar_train, true);
  ar_train->add_option("--ckpt", ckpt, "tokenizer checkpoint");

  CLI::App* ar_sample = app.add_subcommand("ar-sample", "sample class-conditional images");
  add_common(ar_sample, false);
  ar_sample->add_option("--ar-ckpt", ar_ckpt, "generator checkpoint");
  ar_sample->add_option("--ckpt", ckpt, "tokenizer checkpoint");
  ar_sample->add_option("--class-id", class_id, "conditioning class");
  ar_sample->add_option("--n", count, "number of samples");
  ar_sample->add_option("--temperature", temperature, "sampling temperature");
  ar_sample->add_option("--top-k", top_k, "top-k cutoff (default: full vocabulary)");
  ar_sample->add_option("--sample-seed", sample_seed, "sampling seed");

  CLI::App* metrics = app.add_subcommand("metrics", "psnr/ssim between two image sets");
  add_common(metrics, false);
  metrics->add_option("--a", a_path, "first png file or directory");
  metrics->add_option("--b", b_path, "second png file or directory");
  metrics->add_option("--range", range, "dynamic range convention");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help exits 0, bad usage exits 1
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(common, raw_argv);
    if (stage1->parsed()) return cmd_train(1, common, ckpt, raw_argv);
    if (stage2->parsed()) return cmd_train(2, common, ckpt, raw_argv);
    if (reconstruct->parsed()) return cmd_reconstruct(common, ckpt, input, raw_argv);
    if (encode->parsed()) return cmd_encode(common, ckpt, input, raw_argv);
    if (decode->parsed()) return cmd_decode(common, ckpt, tokens, raw_argv);
    if (abl_cb->parsed()) return cmd_ablate_codebook(common, ckpt, grid, raw_argv);
    if (abl_st->parsed()) return cmd_ablate_strategy(common, stage2_config, ckpt, raw_argv);
    if (cluster->parsed())
      return cmd_cluster(common, ckpt, clusters, images, data_seed, sample_seed, raw_argv);
    if (ar_train->parsed()) return cmd_ar_train(common, ckpt, images, data_seed, raw_argv);
    if (ar_sample->parsed())
      return cmd_ar_sample(common, ar_ckpt, ckpt, class_id, count, temperature, top_k,
                           sample_seed, raw_argv);
    if (metrics->parsed()) return cmd_metrics(common, a_path, b_path, range, raw_argv);
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 1;
}
