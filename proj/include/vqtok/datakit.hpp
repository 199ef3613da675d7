#pragma once

#include "vqtok/rng.hpp"
#include "vqtok/tape.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vqtok {

inline constexpr int kNumClasses = 8;
inline constexpr int kNumPaletteColors = 8;
inline constexpr int kNumBackgrounds = 4;

/// Batch of images in [-1, 1], pixel-major layout (b, y, x, channel).
struct ImageBatch {
  int b = 0;
  int h = 0;
  int w = 0;
  std::vector<float> pixels;  // b*h*w*3

  float& at(int i, int y, int x, int c) { return pixels[((i * h + y) * w + x) * 3 + c]; }
  float at(int i, int y, int x, int c) const { return pixels[((i * h + y) * w + x) * 3 + c]; }
  size_t size() const { return pixels.size(); }

  static ImageBatch zeros(int b, int h, int w) {
    ImageBatch ib;
    ib.b = b;
    ib.h = h;
    ib.w = w;
    ib.pixels.assign(static_cast<size_t>(b) * h * w * 3, 0.0f);
    return ib;
  }
};

/// Full recipe for one rendered image; rendering is a pure function of the
/// spec and the image size.
struct ShapeSpec {
  int class_id = 0;    // [0, kNumClasses)
  int color = 0;       // [0, kNumPaletteColors)
  float cx = 0.5f;     // center, fraction of image size
  float cy = 0.5f;
  float scale = 0.3f;  // half-extent, fraction of image size
  float rotation = 0.0f;
  int background = 0;  // texture id, [0, kNumBackgrounds)
  int bg_col_a = 0;    // background shade picks
  int bg_col_b = 1;
  float bg_phase = 0.0f;
};

/// Anti-aliased render (3x3 supersampling) to 8-bit RGB, h*w*3.
std::vector<uint8_t> render_shape(const ShapeSpec& spec, int size);

/// Procedurally generated labelled corpus. `ids` are stable per-image
/// identities (generation order), used by order-invariant consumers.
struct Dataset {
  int image_size = 0;
  std::vector<uint8_t> pixels;  // count*h*w*3
  std::vector<int> labels;
  std::vector<int64_t> ids;

  int count() const { return static_cast<int>(labels.size()); }
  std::span<const uint8_t> raw_image(int i) const {
    size_t stride = static_cast<size_t>(image_size) * image_size * 3;
    return {pixels.data() + i * stride, stride};
  }
  /// Normalized batch gathered by dataset position.
  ImageBatch batch(std::span<const int> positions) const;
};

/// n class-balanced shape images. Deterministic per seed; n must be >= the
/// class count.
Dataset gen_dataset(int n, uint64_t seed, int size);

/// [0,255] u8 -> [-1,1] float, v/127.5 - 1. Input must be 3-channel.
ImageBatch normalize(std::span<const uint8_t> raw, int b, int h, int w, int channels = 3);
/// Inverse of normalize with clamping and round-to-nearest.
std::vector<uint8_t> denormalize(const ImageBatch& img);

// ---- token stream container ----
// header: magic "VQTS", version u32, k u32, rows u16, cols u16, count u32;
// payload: count*rows*cols u32 indices; then an optional block of count u32
// class ids (present iff the file has exactly that many trailing bytes).

inline constexpr uint32_t kTokenStreamVersion = 1;

struct TokenStreamFile {
  uint32_t k = 0;
  uint16_t rows = 0;
  uint16_t cols = 0;
  std::vector<uint32_t> indices;    // count * rows * cols
  std::vector<uint32_t> class_ids;  // empty or count entries

  uint32_t count() const {
    uint32_t per = static_cast<uint32_t>(rows) * cols;
    return per == 0 ? 0 : static_cast<uint32_t>(indices.size() / per);
  }
};

void write_tokens(const std::string& path, const TokenStreamFile& file);
TokenStreamFile read_tokens(const std::string& path);

/// Header byte count implied by the documented field list.
inline constexpr uint64_t kTokenStreamHeaderBytes = 4 + 4 + 4 + 2 + 2 + 4;

// ---- flat key=value config files ----

using ConfigMap = std::map<std::string, std::string>;

/// Parse "key = value" lines; '#' starts a comment; duplicate keys error.
ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::string& path);

}  // namespace vqtok
