#pragma once

#include "vqtok/datakit.hpp"
#include "vqtok/nn.hpp"
#include "vqtok/tape.hpp"

#include <memory>
#include <vector>

namespace vqtok {

struct EncoderConfig {
  int p = 4;             // patch size
  int d = 64;            // hidden width
  int depth = 4;
  int heads = 4;
  float mlp_ratio = 4.0f;

  void validate() const {
    if (p < 1 || d < 1 || depth < 1 || heads < 1 || mlp_ratio <= 0.0f)
      throw std::invalid_argument("EncoderConfig: non-positive field");
    if (d % heads != 0) throw std::invalid_argument("EncoderConfig: d must divide by heads");
  }
};

/// Decoder mirrors the encoder; q/q_prime set the output pixels per token
/// side and default to the encoder patch size so resolution is preserved.
struct DecoderConfig {
  int d_dec = 64;
  int q = 4;
  int q_prime = 4;
};

/// Continuous features and their codebook-space projection for one batch,
/// flattened to (b*n) rows in row-major patch order.
struct LatentFeatures {
  Mat continuous;      // (b*n) x d
  Mat codebook_space;  // (b*n) x e
  int b = 0;
  int n = 0;
};

// ---- patch layout plumbing ----

/// Flat permutation taking the (b,h,w,channels) tensor from patch layout
/// p_src to patch layout p_dst. Layout p: rows are tokens in (image, gy, gx)
/// order, columns are (py, px, channel). Pixel layout is exactly p == 1.
std::shared_ptr<const std::vector<int>> layout_map(int b, int h, int w, int channels, int p_src,
                                                   int p_dst);

/// Image batch to token matrix (b*n) x (3 p^2); exact inverse of unpatchify.
Mat patchify(const ImageBatch& img, int p);
ImageBatch unpatchify(const Mat& tokens, int b, int h, int w, int p);

// ---- the symmetric autoencoder ----

/// Patch-transformer encoder/decoder pair with learned positional embeddings,
/// pre-norm blocks and final layer norms, plus the two affine bridges into
/// and out of codebook space. Parameter groups: the encoder trunk ("enc.*")
/// is the freeze unit; bridges ("bridge.*") and the decoder ("dec.*") train
/// with the decoder learning rate.
class Autoencoder {
 public:
  Autoencoder(ParamStore& ps, const EncoderConfig& ecfg, const DecoderConfig& dcfg, int image_h,
              int image_w, int e, Rng& rng);

  int n_tokens() const { return gh_ * gw_; }
  int grid_rows() const { return gh_; }
  int grid_cols() const { return gw_; }
  int image_h() const { return h_; }
  int image_w() const { return w_; }
  const EncoderConfig& encoder_config() const { return ecfg_; }
  const DecoderConfig& decoder_config() const { return dcfg_; }
  int code_dim() const { return e_; }

  // tape paths (training and inference share these)
  Var encode_trunk(Tape& t, Var x_tokens, int b) const;  // -> (b*n) x d, Z_I
  Var to_code(Tape& t, Var z_i) const;                   // d -> e
  Var to_bottleneck(Tape& t, Var z_q) const;             // e -> d
  Var decode_tokens(Tape& t, Var z_bot, int b) const;    // -> (b*n) x (q*q'*3) in [-1,1]

  // pure wrappers
  LatentFeatures encode(const ImageBatch& img) const;
  Mat project_to_bottleneck(const Mat& z_q) const;
  ImageBatch decode(const Mat& z_bot, int b) const;

 private:
  EncoderConfig ecfg_;
  DecoderConfig dcfg_;
  int h_, w_, gh_, gw_, e_;

  Linear patch_embed_;
  Param* enc_pos_ = nullptr;
  std::vector<TransformerBlock> enc_blocks_;
  LayerNorm enc_ln_;
  Linear to_code_;
  Linear to_bot_;
  Param* dec_pos_ = nullptr;
  std::vector<TransformerBlock> dec_blocks_;
  LayerNorm dec_ln_;
  Linear dec_out_;
};

}  // namespace vqtok
