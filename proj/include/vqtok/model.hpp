#pragma once

#include "vqtok/autoencoder.hpp"
#include "vqtok/codebook.hpp"
#include "vqtok/datakit.hpp"
#include "vqtok/nn.hpp"

#include <memory>
#include <string>

namespace vqtok {

/// Everything needed to rebuild a tokenizer deterministically.
struct ModelConfig {
  int image_size = 32;
  EncoderConfig enc;          // p, d, depth, heads, mlp_ratio
  int e = 96;                 // codebook dimension
  int k = 256;                // codebook size
  float beta = 0.25f;         // commitment weight
  bool train_entries = false;
  uint64_t init_seed = 0;
  uint64_t perceptual_seed = 1234;

  ConfigMap to_map() const;
  static ModelConfig from_map(const ConfigMap& m);
};

/// Tokenizer bundle: parameter store, network wiring and the codebook
/// parameters ("codebook.entries" frozen by default, "codebook.proj"
/// trainable). Pure pipelines for encode/decode round trips live here so the
/// CLI, the trainer and the eval harness share one code path.
class TokenizerModel {
 public:
  explicit TokenizerModel(const ModelConfig& cfg);

  ModelConfig cfg;
  ParamStore params;
  std::unique_ptr<Autoencoder> net;
  Param* cb_entries = nullptr;
  Param* cb_proj = nullptr;

  /// Copy of the codebook parameters as the value-level quantizer state.
  CodebookState codebook() const;
  void set_codebook(const CodebookState& st);
  Var projected_codebook(Tape& t) const {
    return t.matmul(t.param(*cb_entries), t.param(*cb_proj));
  }

  int tokens_per_image() const { return net->n_tokens(); }

  /// Image -> codebook indices, n per image, row-major patch order.
  std::vector<int> encode_indices(const ImageBatch& img) const;
  /// Indices -> image through bottleneck projection and decoder.
  ImageBatch decode_indices(std::span<const int> indices, int b) const;
  /// encode_indices composed with decode_indices (bit-identical to running
  /// the two halves separately).
  ImageBatch reconstruct(const ImageBatch& img) const;
};

// ---- checkpoint container ----
// magic "VQCK", version u32, section count u32, then sections of
// (id u32, length u64, payload). Model checkpoints carry config text, named
// parameter arrays and the raw "VQRC" codebook segment; trainer checkpoints
// append optimizer/rng/progress sections on top.

inline constexpr uint32_t kCheckpointVersion = 1;

enum class SectionId : uint32_t {
  Config = 1,
  NamedArrays = 2,
  CodebookSegment = 3,
  TrainerState = 4,
  TeacherArrays = 5,
  TrainConfigText = 6,
};

struct CheckpointSections {
  std::map<uint32_t, std::string> payloads;
  bool has(SectionId id) const { return payloads.count(static_cast<uint32_t>(id)) > 0; }
  const std::string& get(SectionId id) const;
  void set(SectionId id, std::string bytes) { payloads[static_cast<uint32_t>(id)] = std::move(bytes); }
};

void write_checkpoint_file(const std::string& path, const CheckpointSections& sections);
CheckpointSections read_checkpoint_file(const std::string& path);

/// Named parameter arrays (everything except the codebook, which travels in
/// its own segment).
std::string serialize_named_arrays(const ParamStore& ps);
void load_named_arrays(const std::string& bytes, ParamStore& ps);

void save_model_checkpoint(const std::string& path, const TokenizerModel& model);
TokenizerModel load_model_checkpoint(const std::string& path);
/// Rebuild just the model from already-read sections (trainer checkpoints).
TokenizerModel model_from_sections(const CheckpointSections& sections);

}  // namespace vqtok
