#include "vqtok/png_io.hpp"

#include "vqtok/serial.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace vqtok {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_png_rgb8(const std::string& path, int w, int h, const uint8_t* rgb) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw LoadError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw LoadError("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw LoadError("write_png: encode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(rgb + static_cast<size_t>(y) * w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PngImage read_png_rgb8(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw LoadError("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("read_png: decode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // normalize any input to 8-bit RGB
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  PngImage img;
  img.w = static_cast<int>(png_get_image_width(png, info));
  img.h = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<size_t>(img.w) * img.h * 3);
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y) rows[y] = img.rgb.data() + static_cast<size_t>(y) * img.w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

namespace {

void blit(std::vector<uint8_t>& canvas, int canvas_w, const ImageBatch& img, int index, int x0,
          int y0) {
  std::vector<uint8_t> bytes = denormalize(img);
  size_t stride = static_cast<size_t>(img.h) * img.w * 3;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        canvas[((static_cast<size_t>(y0 + y) * canvas_w) + x0 + x) * 3 + c] =
            bytes[index * stride + (static_cast<size_t>(y) * img.w + x) * 3 + c];
}

}  // namespace

void write_comparison_png(const std::string& path, const ImageBatch& top,
                          const ImageBatch& bottom) {
  if (top.b != bottom.b || top.h != bottom.h || top.w != bottom.w)
    throw ShapeError("write_comparison_png: batch shapes differ");
  const int gutter = 2;
  int cw = top.b * top.w + (top.b - 1) * gutter;
  int ch = 2 * top.h + gutter;
  std::vector<uint8_t> canvas(static_cast<size_t>(cw) * ch * 3, 32);
  for (int i = 0; i < top.b; ++i) {
    int x0 = i * (top.w + gutter);
    blit(canvas, cw, top, i, x0, 0);
    blit(canvas, cw, bottom, i, x0, top.h + gutter);
  }
  write_png_rgb8(path, cw, ch, canvas.data());
}

void write_grid_png(const std::string& path, const ImageBatch& images, int cols) {
  if (images.b == 0 || cols <= 0) throw std::invalid_argument("write_grid_png: empty grid");
  const int gutter = 2;
  int rows = (images.b + cols - 1) / cols;
  int cw = cols * images.w + (cols - 1) * gutter;
  int ch = rows * images.h + (rows - 1) * gutter;
  std::vector<uint8_t> canvas(static_cast<size_t>(cw) * ch * 3, 32);
  for (int i = 0; i < images.b; ++i) {
    int r = i / cols;
    int c = i % cols;
    blit(canvas, cw, images, i, c * (images.w + gutter), r * (images.h + gutter));
  }
  write_png_rgb8(path, cw, ch, canvas.data());
}

}  // namespace vqtok
