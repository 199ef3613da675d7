#include "vqtok/datakit.hpp"

#include "vqtok/serial.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vqtok {

namespace {

struct Rgb {
  float r, g, b;
};

// bright shape palette
constexpr Rgb kPalette[kNumPaletteColors] = {
    {0.90f, 0.24f, 0.22f}, {0.27f, 0.78f, 0.31f}, {0.25f, 0.41f, 0.88f}, {0.94f, 0.78f, 0.20f},
    {0.82f, 0.27f, 0.78f}, {0.24f, 0.78f, 0.82f}, {0.96f, 0.55f, 0.16f}, {0.94f, 0.94f, 0.94f},
};

// darker background shades so shapes stay separable from any background
constexpr Rgb kBgPalette[kNumPaletteColors] = {
    {0.13f, 0.13f, 0.17f}, {0.24f, 0.17f, 0.12f}, {0.10f, 0.21f, 0.16f}, {0.20f, 0.11f, 0.20f},
    {0.09f, 0.15f, 0.24f}, {0.22f, 0.22f, 0.10f}, {0.16f, 0.10f, 0.10f}, {0.12f, 0.19f, 0.22f},
};

Rgb mix(const Rgb& a, const Rgb& b, float t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb background_at(const ShapeSpec& s, float fx, float fy) {
  const Rgb& a = kBgPalette[s.bg_col_a];
  const Rgb& b = kBgPalette[s.bg_col_b];
  switch (s.background) {
    case 0:  // vertical gradient
      return mix(a, b, fy);
    case 1:  // diagonal gradient
      return mix(a, b, 0.5f * (fx + fy));
    case 2: {  // coarse checker
      int gx = static_cast<int>(std::floor(fx * 4.0f + s.bg_phase));
      int gy = static_cast<int>(std::floor(fy * 4.0f + s.bg_phase));
      return ((gx + gy) & 1) ? b : a;
    }
    default: {  // horizontal stripes
      int band = static_cast<int>(std::floor(fy * 5.0f + s.bg_phase));
      return (band & 1) ? b : a;
    }
  }
}

// shape support in unit coordinates (|u| ~ 1 at the silhouette boundary)
bool inside_shape(int class_id, float ux, float uy) {
  float r2 = ux * ux + uy * uy;
  switch (class_id) {
    case 0:  // circle
      return r2 <= 1.0f;
    case 1:  // square
      return std::max(std::abs(ux), std::abs(uy)) <= 0.82f;
    case 2: {  // triangle, apex up
      float x0 = 0.0f, y0 = 1.05f, x1 = -0.95f, y1 = -0.70f, x2 = 0.95f, y2 = -0.70f;
      auto side = [&](float ax, float ay, float bx, float by) {
        return (bx - ax) * (uy - ay) - (by - ay) * (ux - ax);
      };
      float s0 = side(x0, y0, x1, y1);
      float s1 = side(x1, y1, x2, y2);
      float s2 = side(x2, y2, x0, y0);
      return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
    }
    case 3:  // diamond
      return std::abs(ux) + std::abs(uy) <= 1.0f;
    case 4:  // ring
      return r2 <= 1.0f && r2 >= 0.55f * 0.55f;
    case 5:  // plus
      return (std::abs(ux) <= 0.33f && std::abs(uy) <= 1.0f) ||
             (std::abs(uy) <= 0.33f && std::abs(ux) <= 1.0f);
    case 6: {  // five-point star
      float theta = std::atan2(uy, ux);
      float spike = std::fmod(theta * 5.0f / 6.2831853f + 5.0f, 1.0f);  // [0,1) per arm
      float tri = std::abs(spike - 0.5f) * 2.0f;                        // 1 at arm tip
      float boundary = 0.40f + 0.60f * tri;
      return std::sqrt(r2) <= boundary;
    }
    default:  // crescent
      return r2 <= 1.0f &&
             (ux - 0.55f) * (ux - 0.55f) + uy * uy >= 0.75f * 0.75f;
  }
}

}  // namespace

std::vector<uint8_t> render_shape(const ShapeSpec& spec, int size) {
  std::vector<uint8_t> out(static_cast<size_t>(size) * size * 3);
  float cosr = std::cos(spec.rotation);
  float sinr = std::sin(spec.rotation);
  float half = spec.scale * size;
  const Rgb& fg = kPalette[spec.color];
  const int ss = 3;  // supersamples per axis
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float fx = (x + 0.5f) / size;
      float fy = (y + 0.5f) / size;
      Rgb bg = background_at(spec, fx, fy);
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          float px = x + (sx + 0.5f) / ss - spec.cx * size;
          float py = y + (sy + 0.5f) / ss - spec.cy * size;
          float ux = (cosr * px + sinr * py) / half;
          float uy = (-sinr * px + cosr * py) / half;
          hits += inside_shape(spec.class_id, ux, uy) ? 1 : 0;
        }
      }
      float cov = static_cast<float>(hits) / (ss * ss);
      Rgb c = mix(bg, fg, cov);
      size_t o = (static_cast<size_t>(y) * size + x) * 3;
      out[o + 0] = static_cast<uint8_t>(std::lround(std::clamp(c.r, 0.0f, 1.0f) * 255.0f));
      out[o + 1] = static_cast<uint8_t>(std::lround(std::clamp(c.g, 0.0f, 1.0f) * 255.0f));
      out[o + 2] = static_cast<uint8_t>(std::lround(std::clamp(c.b, 0.0f, 1.0f) * 255.0f));
    }
  }
  return out;
}

Dataset gen_dataset(int n, uint64_t seed, int size) {
  if (n < kNumClasses)
    throw std::invalid_argument("gen_dataset: n must be >= the class count");
  Dataset ds;
  ds.image_size = size;
  ds.pixels.reserve(static_cast<size_t>(n) * size * size * 3);
  ds.labels.reserve(n);
  ds.ids.reserve(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    ShapeSpec spec;
    spec.class_id = i % kNumClasses;  // interleaved, so counts differ by at most one
    spec.color = static_cast<int>(rng.below(kNumPaletteColors));
    spec.cx = static_cast<float>(rng.uniform(0.34, 0.66));
    spec.cy = static_cast<float>(rng.uniform(0.34, 0.66));
    spec.scale = static_cast<float>(rng.uniform(0.20, 0.34));
    spec.rotation = static_cast<float>(rng.uniform(0.0, 6.2831853));
    spec.background = static_cast<int>(rng.below(kNumBackgrounds));
    spec.bg_col_a = static_cast<int>(rng.below(kNumPaletteColors));
    spec.bg_col_b = static_cast<int>(rng.below(kNumPaletteColors));
    spec.bg_phase = static_cast<float>(rng.uniform(0.0, 2.0));
    std::vector<uint8_t> img = render_shape(spec, size);
    ds.pixels.insert(ds.pixels.end(), img.begin(), img.end());
    ds.labels.push_back(spec.class_id);
    ds.ids.push_back(i);
  }
  return ds;
}

ImageBatch Dataset::batch(std::span<const int> positions) const {
  ImageBatch ib = ImageBatch::zeros(static_cast<int>(positions.size()), image_size, image_size);
  size_t stride = static_cast<size_t>(image_size) * image_size * 3;
  for (size_t i = 0; i < positions.size(); ++i) {
    auto src = raw_image(positions[i]);
    for (size_t j = 0; j < stride; ++j)
      ib.pixels[i * stride + j] = static_cast<float>(src[j]) / 127.5f - 1.0f;
  }
  return ib;
}

ImageBatch normalize(std::span<const uint8_t> raw, int b, int h, int w, int channels) {
  if (channels != 3) throw std::invalid_argument("normalize: expected 3-channel input");
  if (raw.size() != static_cast<size_t>(b) * h * w * 3)
    throw ShapeError("normalize: byte count does not match b*h*w*3");
  ImageBatch ib;
  ib.b = b;
  ib.h = h;
  ib.w = w;
  ib.pixels.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i)
    ib.pixels[i] = static_cast<float>(raw[i]) / 127.5f - 1.0f;
  return ib;
}

std::vector<uint8_t> denormalize(const ImageBatch& img) {
  std::vector<uint8_t> out(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    float v = std::clamp(img.pixels[i], -1.0f, 1.0f);
    out[i] = static_cast<uint8_t>(std::lround((v + 1.0f) * 127.5f));
  }
  return out;
}

void write_tokens(const std::string& path, const TokenStreamFile& file) {
  uint64_t per = static_cast<uint64_t>(file.rows) * file.cols;
  if (per == 0 || file.indices.size() % per != 0)
    throw std::invalid_argument("write_tokens: payload does not match grid");
  uint32_t count = static_cast<uint32_t>(file.indices.size() / per);
  if (!file.class_ids.empty() && file.class_ids.size() != count)
    throw std::invalid_argument("write_tokens: class block must have one id per sequence");
  for (uint32_t idx : file.indices)
    if (idx >= file.k) throw std::invalid_argument("write_tokens: index out of range");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("write_tokens: cannot open " + path);
  serial::write_magic(out, "VQTS");
  serial::write_pod<uint32_t>(out, kTokenStreamVersion);
  serial::write_pod<uint32_t>(out, file.k);
  serial::write_pod<uint16_t>(out, file.rows);
  serial::write_pod<uint16_t>(out, file.cols);
  serial::write_pod<uint32_t>(out, count);
  out.write(reinterpret_cast<const char*>(file.indices.data()),
            static_cast<std::streamsize>(4 * file.indices.size()));
  if (!file.class_ids.empty())
    out.write(reinterpret_cast<const char*>(file.class_ids.data()),
              static_cast<std::streamsize>(4 * file.class_ids.size()));
  if (!out) throw LoadError("write_tokens: write failed for " + path);
}

TokenStreamFile read_tokens(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("read_tokens: cannot open " + path);
  serial::expect_magic(in, "VQTS", "token stream");
  uint32_t version = serial::read_pod<uint32_t>(in, "token version");
  if (version != kTokenStreamVersion)
    throw LoadError("unsupported token stream version " + std::to_string(version));
  TokenStreamFile f;
  f.k = serial::read_pod<uint32_t>(in, "token k");
  f.rows = serial::read_pod<uint16_t>(in, "token rows");
  f.cols = serial::read_pod<uint16_t>(in, "token cols");
  uint32_t count = serial::read_pod<uint32_t>(in, "token count");
  uint64_t payload = static_cast<uint64_t>(count) * f.rows * f.cols;
  f.indices.resize(payload);
  in.read(reinterpret_cast<char*>(f.indices.data()), static_cast<std::streamsize>(4 * payload));
  if (!in) throw LoadError("read_tokens: truncated payload");
  // optional class block: either EOF now or exactly `count` more u32 words
  in.peek();
  if (!in.eof()) {
    f.class_ids.resize(count);
    in.read(reinterpret_cast<char*>(f.class_ids.data()),
            static_cast<std::streamsize>(4ull * count));
    if (!in) throw LoadError("read_tokens: truncated class block");
    in.peek();
    if (!in.eof()) throw LoadError("read_tokens: trailing bytes after class block");
  }
  for (uint32_t idx : f.indices)
    if (idx >= f.k) throw LoadError("read_tokens: index out of range for k");
  return f;
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    if (cfg.count(key))
      throw std::invalid_argument("config: duplicate key '" + key + "'");
    cfg[key] = value;
  }
  return cfg;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace vqtok
