#include "ragtrack/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace ragtrack {

namespace {

unsigned char quantize(double v) {
  const double s = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(std::clamp(s, 0.0, 255.0));
}

}  // namespace

void fill_rect(Image& img, double x, double y, double w, double h, double r, double g, double b) {
  const int x0 = std::max(0, static_cast<int>(std::lround(x)));
  const int y0 = std::max(0, static_cast<int>(std::lround(y)));
  const int x1 = std::min(img.w, static_cast<int>(std::lround(x + w)));
  const int y1 = std::min(img.h, static_cast<int>(std::lround(y + h)));
  for (int yy = y0; yy < y1; ++yy)
    for (int xx = x0; xx < x1; ++xx) {
      img.at(0, yy, xx) = r;
      img.at(1, yy, xx) = g;
      img.at(2, yy, xx) = b;
    }
}

Image box_blur3(const Image& img) {
  Image out(img.h, img.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
            acc += img.at(c, yy, xx);
            ++cnt;
          }
        out.at(c, y, x) = acc / cnt;
      }
  return out;
}

Image to_grayscale(const Image& img) {
  Image out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double g = (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0;
      out.at(0, y, x) = g;
      out.at(1, y, x) = g;
      out.at(2, y, x) = g;
    }
  return out;
}

Image rotate_nn(const Image& img, double degrees) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = (img.w - 1) / 2.0, cy = (img.h - 1) / 2.0;
  Image out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      // inverse rotation: sample the source at the back-rotated position
      const double dx = x - cx, dy = y - cy;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      const int ix = std::clamp(static_cast<int>(std::lround(sx)), 0, img.w - 1);
      const int iy = std::clamp(static_cast<int>(std::lround(sy)), 0, img.h - 1);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = img.at(c, iy, ix);
    }
  return out;
}

WindowPx clamp_window(double cx, double cy, double side, int frame_h, int frame_w) {
  side = std::min(side, static_cast<double>(std::min(frame_h, frame_w)));
  side = std::max(side, 2.0);
  WindowPx win;
  win.side = side;
  win.x = std::clamp(cx - side / 2.0, 0.0, frame_w - side);
  win.y = std::clamp(cy - side / 2.0, 0.0, frame_h - side);
  return win;
}

Image crop_resize(const Image& img, const WindowPx& win, int out_edge) {
  if (out_edge <= 0) throw std::invalid_argument("crop_resize: non-positive output edge");
  Image out(out_edge, out_edge);
  const double step = win.side / out_edge;
  for (int y = 0; y < out_edge; ++y)
    for (int x = 0; x < out_edge; ++x) {
      const double sx = win.x + (x + 0.5) * step - 0.5;
      const double sy = win.y + (y + 0.5) * step - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, img.w - 1);
      const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, img.h - 1);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const int y1 = std::min(y0 + 1, img.h - 1);
      const double fx = std::clamp(sx - x0, 0.0, 1.0);
      const double fy = std::clamp(sy - y0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(c, y0, x0) * (1.0 - fx) + img.at(c, y0, x1) * fx;
        const double bot = img.at(c, y1, x0) * (1.0 - fx) + img.at(c, y1, x1) * fx;
        out.at(c, y, x) = top * (1.0 - fy) + bot * fy;
      }
    }
  return out;
}

namespace {

struct PngWriteCtx {
  std::vector<unsigned char>* out;
};

void png_vector_write(png_structp png, png_bytep data, png_size_t len) {
  auto* ctx = static_cast<PngWriteCtx*>(png_get_io_ptr(png));
  ctx->out->insert(ctx->out->end(), data, data + len);
}

void png_vector_flush(png_structp) {}

}  // namespace

std::vector<unsigned char> encode_png(const Image& img) {
  if (img.h <= 0 || img.w <= 0) throw std::invalid_argument("encode_png: empty image");
  std::vector<unsigned char> bytes;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("encode_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("encode_png: png_create_info_struct failed");
  }
  std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("encode_png: libpng error");
  }
  PngWriteCtx ctx{&bytes};
  png_set_write_fn(png, &ctx, png_vector_write, png_vector_flush);
  png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      row[static_cast<std::size_t>(x) * 3 + 0] = quantize(img.at(0, y, x));
      row[static_cast<std::size_t>(x) * 3 + 1] = quantize(img.at(1, y, x));
      row[static_cast<std::size_t>(x) * 3 + 2] = quantize(img.at(2, y, x));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return bytes;
}

void write_png(const std::string& path, const Image& img) {
  const std::vector<unsigned char> bytes = encode_png(img);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  const std::size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw std::runtime_error("write_png: short write to " + path);
}

Image read_png(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    std::fclose(f);
    throw std::runtime_error("read_png: png_create_read_struct failed");
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    std::fclose(f);
    throw std::runtime_error("read_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    throw std::runtime_error("read_png: libpng error reading " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const int w = png_get_image_width(png, info);
  const int h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  std::vector<unsigned char> row(png_get_rowbytes(png, info));
  Image img(h, w);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      img.at(0, y, x) = row[static_cast<std::size_t>(x) * 3 + 0] / 255.0;
      img.at(1, y, x) = row[static_cast<std::size_t>(x) * 3 + 1] / 255.0;
      img.at(2, y, x) = row[static_cast<std::size_t>(x) * 3 + 2] / 255.0;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(f);
  return img;
}

}  // namespace ragtrack
