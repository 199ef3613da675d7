#include "vqtok/autoencoder.hpp"

#include <cstring>
#include <map>

namespace vqtok {

namespace {

// maps are shape-keyed and reused across steps
struct MapKey {
  int b, h, w, c, ps, pd;
  bool operator<(const MapKey& o) const {
    return std::tie(b, h, w, c, ps, pd) < std::tie(o.b, o.h, o.w, o.c, o.ps, o.pd);
  }
};

int64_t flat_index(int bi, int y, int x, int ch, int h, int w, int c, int p) {
  int gy = y / p, py = y % p;
  int gx = x / p, px = x % p;
  int gw = w / p;
  int64_t row = (static_cast<int64_t>(bi) * (h / p) + gy) * gw + gx;
  int64_t col = (static_cast<int64_t>(py) * p + px) * c + ch;
  return row * (static_cast<int64_t>(c) * p * p) + col;
}

}  // namespace

std::shared_ptr<const std::vector<int>> layout_map(int b, int h, int w, int channels, int p_src,
                                                   int p_dst) {
  if (p_src < 1 || p_dst < 1 || h % p_src || w % p_src || h % p_dst || w % p_dst)
    throw ShapeError("layout_map: dimensions not divisible by patch size");
  static std::map<MapKey, std::shared_ptr<const std::vector<int>>> cache;
  MapKey key{b, h, w, channels, p_src, p_dst};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(b) * h * w * channels);
  for (int bi = 0; bi < b; ++bi)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < channels; ++ch) {
          int64_t dst = flat_index(bi, y, x, ch, h, w, channels, p_dst);
          int64_t src = flat_index(bi, y, x, ch, h, w, channels, p_src);
          (*map)[dst] = static_cast<int>(src);
        }
  cache[key] = map;
  return map;
}

Mat patchify(const ImageBatch& img, int p) {
  if (p < 1 || img.h % p || img.w % p)
    throw ShapeError("patchify: image dims must divide by patch size");
  auto map = layout_map(img.b, img.h, img.w, 3, 1, p);
  int n = (img.h / p) * (img.w / p);
  Mat out(static_cast<Eigen::Index>(img.b) * n, 3 * p * p);
  for (size_t i = 0; i < map->size(); ++i) out.data()[i] = img.pixels[(*map)[i]];
  return out;
}

ImageBatch unpatchify(const Mat& tokens, int b, int h, int w, int p) {
  if (p < 1 || h % p || w % p) throw ShapeError("unpatchify: dims must divide by patch size");
  if (tokens.rows() != static_cast<Eigen::Index>(b) * (h / p) * (w / p) ||
      tokens.cols() != 3 * p * p)
    throw ShapeError("unpatchify: token matrix does not match grid");
  auto map = layout_map(b, h, w, 3, p, 1);
  ImageBatch img = ImageBatch::zeros(b, h, w);
  for (size_t i = 0; i < map->size(); ++i) img.pixels[i] = tokens.data()[(*map)[i]];
  return img;
}

Autoencoder::Autoencoder(ParamStore& ps, const EncoderConfig& ecfg, const DecoderConfig& dcfg,
                         int image_h, int image_w, int e, Rng& rng)
    : ecfg_(ecfg), dcfg_(dcfg), h_(image_h), w_(image_w), e_(e) {
  ecfg_.validate();
  if (image_h % ecfg.p || image_w % ecfg.p)
    throw std::invalid_argument("Autoencoder: image size must divide by patch size");
  if (dcfg_.d_dec != ecfg_.d)
    throw std::invalid_argument("Autoencoder: decoder width must equal encoder width");
  gh_ = image_h / ecfg.p;
  gw_ = image_w / ecfg.p;
  int n = gh_ * gw_;
  int d = ecfg.d;

  patch_embed_ = Linear::make(ps, "enc.patch", ParamGroup::Encoder, 3 * ecfg.p * ecfg.p, d, rng);
  enc_pos_ = &ps.create("enc.pos", ParamGroup::Encoder, n, d);
  init_normal(*enc_pos_, rng, 0.02f);
  for (int i = 0; i < ecfg.depth; ++i)
    enc_blocks_.push_back(TransformerBlock::make(ps, "enc.blk" + std::to_string(i),
                                                 ParamGroup::Encoder, d, ecfg.heads,
                                                 ecfg.mlp_ratio, false, rng));
  enc_ln_ = LayerNorm::make(ps, "enc.ln_f", ParamGroup::Encoder, d);

  to_code_ = Linear::make(ps, "bridge.to_code", ParamGroup::Decoder, d, e, rng);
  to_bot_ = Linear::make(ps, "bridge.to_bot", ParamGroup::Decoder, e, d, rng);

  dec_pos_ = &ps.create("dec.pos", ParamGroup::Decoder, n, d);
  init_normal(*dec_pos_, rng, 0.02f);
  for (int i = 0; i < ecfg.depth; ++i)
    dec_blocks_.push_back(TransformerBlock::make(ps, "dec.blk" + std::to_string(i),
                                                 ParamGroup::Decoder, d, ecfg.heads,
                                                 ecfg.mlp_ratio, false, rng));
  dec_ln_ = LayerNorm::make(ps, "dec.ln_f", ParamGroup::Decoder, d);
  dec_out_ = Linear::make(ps, "dec.out", ParamGroup::Decoder, d,
                          dcfg_.q * dcfg_.q_prime * 3, rng);
}

Var Autoencoder::encode_trunk(Tape& t, Var x_tokens, int b) const {
  if (t.val(x_tokens).cols() != 3 * ecfg_.p * ecfg_.p ||
      t.val(x_tokens).rows() != static_cast<Eigen::Index>(b) * n_tokens())
    throw ShapeError("encode_trunk: token matrix shape");
  Var h = patch_embed_(t, x_tokens);
  h = t.add_rowtile(h, t.param(*enc_pos_), b);
  for (const auto& blk : enc_blocks_) h = blk(t, h, b, n_tokens());
  return enc_ln_(t, h);
}

Var Autoencoder::to_code(Tape& t, Var z_i) const {
  if (t.val(z_i).cols() != ecfg_.d) throw ShapeError("to_code: expected d columns");
  return to_code_(t, z_i);
}

Var Autoencoder::to_bottleneck(Tape& t, Var z_q) const {
  if (t.val(z_q).cols() != e_) throw ShapeError("to_bottleneck: expected e columns");
  return to_bot_(t, z_q);
}

Var Autoencoder::decode_tokens(Tape& t, Var z_bot, int b) const {
  if (t.val(z_bot).cols() != ecfg_.d || t.val(z_bot).rows() != static_cast<Eigen::Index>(b) * n_tokens())
    throw ShapeError("decode_tokens: bottleneck shape does not match grid");
  Var h = t.add_rowtile(z_bot, t.param(*dec_pos_), b);
  for (const auto& blk : dec_blocks_) h = blk(t, h, b, n_tokens());
  h = dec_ln_(t, h);
  return t.tanh_act(dec_out_(t, h));
}

LatentFeatures Autoencoder::encode(const ImageBatch& img) const {
  Tape t;
  t.set_inference(true);
  Var x = t.input(patchify(img, ecfg_.p));
  Var z = encode_trunk(t, x, img.b);
  Var zc = to_code(t, z);
  LatentFeatures lf;
  lf.continuous = t.val(z);
  lf.codebook_space = t.val(zc);
  lf.b = img.b;
  lf.n = n_tokens();
  return lf;
}

Mat Autoencoder::project_to_bottleneck(const Mat& z_q) const {
  Tape t;
  t.set_inference(true);
  return t.val(to_bottleneck(t, t.input(z_q)));
}

ImageBatch Autoencoder::decode(const Mat& z_bot, int b) const {
  Tape t;
  t.set_inference(true);
  Var out = decode_tokens(t, t.input(z_bot), b);
  return unpatchify(t.val(out), b, gh_ * dcfg_.q, gw_ * dcfg_.q_prime, dcfg_.q);
}

}  // namespace vqtok
