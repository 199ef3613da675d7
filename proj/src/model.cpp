#include "vqtok/model.hpp"

#include "vqtok/serial.hpp"

#include <fstream>
#include <sstream>

namespace vqtok {

namespace {

std::string fmt_float(float v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

ConfigMap ModelConfig::to_map() const {
  ConfigMap m;
  m["image_size"] = std::to_string(image_size);
  m["patch_size"] = std::to_string(enc.p);
  m["hidden_dim"] = std::to_string(enc.d);
  m["depth"] = std::to_string(enc.depth);
  m["heads"] = std::to_string(enc.heads);
  m["mlp_ratio"] = fmt_float(enc.mlp_ratio);
  m["codebook_dim"] = std::to_string(e);
  m["codebook_size"] = std::to_string(k);
  m["commitment_beta"] = fmt_float(beta);
  m["train_entries"] = train_entries ? "true" : "false";
  m["init_seed"] = std::to_string(init_seed);
  m["perceptual_seed"] = std::to_string(perceptual_seed);
  return m;
}

ModelConfig ModelConfig::from_map(const ConfigMap& m) {
  ModelConfig c;
  auto get = [&](const char* key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw std::invalid_argument(std::string("model config: missing key ") + key);
    return it->second;
  };
  c.image_size = std::stoi(get("image_size"));
  c.enc.p = std::stoi(get("patch_size"));
  c.enc.d = std::stoi(get("hidden_dim"));
  c.enc.depth = std::stoi(get("depth"));
  c.enc.heads = std::stoi(get("heads"));
  c.enc.mlp_ratio = std::stof(get("mlp_ratio"));
  c.e = std::stoi(get("codebook_dim"));
  c.k = std::stoi(get("codebook_size"));
  c.beta = std::stof(get("commitment_beta"));
  c.train_entries = get("train_entries") == "true";
  c.init_seed = std::stoull(get("init_seed"));
  c.perceptual_seed = std::stoull(get("perceptual_seed"));
  return c;
}

TokenizerModel::TokenizerModel(const ModelConfig& config) : cfg(config) {
  cfg.enc.validate();
  Rng rng(cfg.init_seed);
  DecoderConfig dcfg;
  dcfg.d_dec = cfg.enc.d;
  dcfg.q = cfg.enc.p;
  dcfg.q_prime = cfg.enc.p;
  net = std::make_unique<Autoencoder>(params, cfg.enc, dcfg, cfg.image_size, cfg.image_size,
                                      cfg.e, rng);

  // codebook entries draw from their own stream so they are independent of
  // the network init order
  CodebookState st = init_codebook(cfg.k, cfg.e, cfg.init_seed ^ 0x636f6465626f6f6bULL);
  st.beta = cfg.beta;
  st.train_entries = cfg.train_entries;
  cb_entries = &params.create("codebook.entries", ParamGroup::Codebook, cfg.k, cfg.e);
  cb_proj = &params.create("codebook.proj", ParamGroup::Codebook, cfg.e, cfg.e);
  cb_entries->value = st.entries;
  cb_proj->value = st.projection;
  cb_entries->trainable = cfg.train_entries;
}

CodebookState TokenizerModel::codebook() const {
  CodebookState st;
  st.k = cfg.k;
  st.e = cfg.e;
  st.beta = cfg.beta;
  st.train_entries = cfg.train_entries;
  st.entries = cb_entries->value;
  st.projection = cb_proj->value;
  return st;
}

void TokenizerModel::set_codebook(const CodebookState& st) {
  if (st.k != cfg.k || st.e != cfg.e)
    throw ShapeError("set_codebook: dimensions do not match model config");
  cb_entries->value = st.entries;
  cb_proj->value = st.projection;
}

std::vector<int> TokenizerModel::encode_indices(const ImageBatch& img) const {
  LatentFeatures lf = net->encode(img);
  return quantize(codebook(), lf.codebook_space).indices;
}

ImageBatch TokenizerModel::decode_indices(std::span<const int> indices, int b) const {
  int n = tokens_per_image();
  if (static_cast<int>(indices.size()) != b * n)
    throw ShapeError("decode_indices: index count does not match grid");
  Mat codes = cb_entries->value * cb_proj->value;
  Mat z_q(b * n, cfg.e);
  for (size_t i = 0; i < indices.size(); ++i) {
    int idx = indices[i];
    if (idx < 0 || idx >= cfg.k) throw std::invalid_argument("decode_indices: index out of range");
    z_q.row(static_cast<Eigen::Index>(i)) = codes.row(idx);
  }
  return net->decode(net->project_to_bottleneck(z_q), b);
}

ImageBatch TokenizerModel::reconstruct(const ImageBatch& img) const {
  return decode_indices(encode_indices(img), img.b);
}

// ---- checkpoint container ----

const std::string& CheckpointSections::get(SectionId id) const {
  auto it = payloads.find(static_cast<uint32_t>(id));
  if (it == payloads.end())
    throw LoadError("checkpoint: missing section " + std::to_string(static_cast<uint32_t>(id)));
  return it->second;
}

void write_checkpoint_file(const std::string& path, const CheckpointSections& sections) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("checkpoint: cannot open " + path + " for writing");
  serial::write_magic(out, "VQCK");
  serial::write_pod<uint32_t>(out, kCheckpointVersion);
  serial::write_pod<uint32_t>(out, static_cast<uint32_t>(sections.payloads.size()));
  for (const auto& [id, bytes] : sections.payloads) {
    serial::write_pod<uint32_t>(out, id);
    serial::write_pod<uint64_t>(out, bytes.size());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw LoadError("checkpoint: write failed for " + path);
}

CheckpointSections read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint: cannot open " + path);
  serial::expect_magic(in, "VQCK", "checkpoint");
  uint32_t version = serial::read_pod<uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  uint32_t count = serial::read_pod<uint32_t>(in, "section count");
  CheckpointSections sections;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t id = serial::read_pod<uint32_t>(in, "section id");
    uint64_t len = serial::read_pod<uint64_t>(in, "section length");
    std::string bytes(len, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(len));
    if (!in) throw LoadError("checkpoint: truncated section " + std::to_string(id));
    sections.payloads[id] = std::move(bytes);
  }
  return sections;
}

std::string serialize_named_arrays(const ParamStore& ps) {
  // codebook travels in its own segment, discriminator state with the trainer
  auto skip = [](const Param& p) {
    return p.group == ParamGroup::Codebook || p.group == ParamGroup::Discriminator;
  };
  std::ostringstream out(std::ios::binary);
  uint32_t count = 0;
  for (const Param& p : ps)
    if (!skip(p)) ++count;
  serial::write_pod<uint32_t>(out, count);
  for (const Param& p : ps) {
    if (skip(p)) continue;
    serial::write_string(out, p.name);
    serial::write_mat(out, p.value);
  }
  return out.str();
}

void load_named_arrays(const std::string& bytes, ParamStore& ps) {
  std::istringstream in(bytes, std::ios::binary);
  uint32_t count = serial::read_pod<uint32_t>(in, "array count");
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = serial::read_string(in, "array name");
    Mat value = serial::read_mat(in, name.c_str());
    Param* p = ps.find(name);
    if (!p) throw LoadError("checkpoint: unknown parameter " + name);
    if (p->value.rows() != value.rows() || p->value.cols() != value.cols())
      throw LoadError("checkpoint: shape mismatch for " + name);
    p->value = std::move(value);
  }
}

namespace {

std::string config_to_text(const ConfigMap& m) {
  std::ostringstream out;
  for (const auto& [k, v] : m) out << k << " = " << v << "\n";
  return out.str();
}

}  // namespace

void save_model_checkpoint(const std::string& path, const TokenizerModel& model) {
  CheckpointSections sections;
  sections.set(SectionId::Config, config_to_text(model.cfg.to_map()));
  sections.set(SectionId::NamedArrays, serialize_named_arrays(model.params));
  std::ostringstream cb(std::ios::binary);
  write_codebook_segment(cb, model.codebook());
  sections.set(SectionId::CodebookSegment, cb.str());
  write_checkpoint_file(path, sections);
}

TokenizerModel model_from_sections(const CheckpointSections& sections) {
  ModelConfig cfg = ModelConfig::from_map(parse_config_text(sections.get(SectionId::Config)));
  TokenizerModel model(cfg);
  load_named_arrays(sections.get(SectionId::NamedArrays), model.params);
  std::istringstream cb(sections.get(SectionId::CodebookSegment), std::ios::binary);
  CodebookState st = read_codebook_segment(cb);
  st.beta = cfg.beta;
  st.train_entries = cfg.train_entries;
  model.set_codebook(st);
  return model;
}

TokenizerModel load_model_checkpoint(const std::string& path) {
  return model_from_sections(read_checkpoint_file(path));
}

}  // namespace vqtok
