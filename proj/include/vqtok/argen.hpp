#pragma once

#include "vqtok/model.hpp"
#include "vqtok/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace vqtok {

/// Token id space for the generator: control tokens first (BOS, BOI, one
/// token per class), then the visual vocabulary mapped one-to-one onto
/// codebook indices.
struct Vocab {
  static constexpr int kBos = 0;
  static constexpr int kBoi = 1;

  int classes = 8;
  int n_visual = 256;  // == codebook size

  int n_text() const { return 2 + classes; }
  int total() const { return n_text() + n_visual; }
  int class_token(int class_id) const {
    if (class_id < 0 || class_id >= classes)
      throw std::invalid_argument("vocab: class id out of range");
    return 2 + class_id;
  }
  bool is_visual(int token) const { return token >= n_text() && token < total(); }
  int visual_token(int index) const {
    if (index < 0 || index >= n_visual)
      throw std::invalid_argument("vocab: codebook index out of range");
    return n_text() + index;
  }
  int visual_index(int token) const {
    if (!is_visual(token)) throw std::invalid_argument("vocab: token is not visual");
    return token - n_text();
  }
};

/// [BOS, class token, BOI, visual tokens in row-major patch order].
struct TokenSequence {
  std::vector<int> ids;
  int rows = 0;
  int cols = 0;

  int length() const { return static_cast<int>(ids.size()); }
};

TokenSequence build_sequence(const Vocab& vocab, int class_id, std::span<const int> indices,
                             int rows, int cols);
/// Inverse of build_sequence: the codebook index vector.
std::vector<int> strip_sequence(const Vocab& vocab, const TokenSequence& seq);

struct ArConfig {
  int width = 128;
  int depth = 4;
  int heads = 4;
  float mlp_ratio = 2.0f;
  int classes = 8;
  int k = 256;       // visual vocabulary size
  int rows = 8;
  int cols = 8;
  uint64_t init_seed = 0;

  // optimizer rows (constant schedule with warmup)
  float lr = 1e-4f;
  float weight_decay = 0.0f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-15f;
  int warmup_steps = 100;
  float max_grad_norm = 1.0f;
  int batch_size = 32;
  int total_steps = 2000;
  uint64_t train_seed = 0;

  int seq_len() const { return 3 + rows * cols; }
  ConfigMap to_map() const;
  static ArConfig from_map(const ConfigMap& m);
  void validate() const;
};

/// Decoder-only causal transformer over the expanded vocabulary with learned
/// absolute positions. The NTP loss lands only on positions whose target is a
/// visual token.
class ArModel {
 public:
  explicit ArModel(const ArConfig& cfg);

  ArConfig cfg;
  Vocab vocab;
  ParamStore params;

  /// Logits over the full vocabulary for a flat (b*seq_len) token batch.
  Var logits(Tape& t, std::span<const int> flat_ids, int batch) const;

  /// Masked next-token loss for a batch of sequences.
  Var ntp_loss(Tape& t, std::span<const TokenSequence> batch) const;

  /// Ancestral sampling over the visual vocabulary with the condition prefix
  /// fixed. temperature below 1e-6 (or top_k == 1) decodes by argmax.
  TokenSequence sample(int class_id, int rows, int cols, float temperature, int top_k,
                       uint64_t seed) const;

 private:
  Param* tok_emb_ = nullptr;
  Param* pos_emb_ = nullptr;
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_f_;
  Linear head_;
};

struct NtpTrainStats {
  double initial_loss = 0.0;
  double final_loss = 0.0;          // smoothed over the last 100 steps
  std::vector<double> loss_curve;
};

/// Trains with the configured constant-after-warmup schedule. All sequences
/// must share one grid.
NtpTrainStats ntp_train(ArModel& model, std::span<const TokenSequence> sequences);

void save_ar_checkpoint(const std::string& path, const ArModel& model);
ArModel load_ar_checkpoint(const std::string& path);

/// Tokenize a labelled dataset into conditioned sequences.
std::vector<TokenSequence> tokenize_dataset(const TokenizerModel& tokenizer, const Dataset& data,
                                            const Vocab& vocab, int batch_size = 64);

}  // namespace vqtok
