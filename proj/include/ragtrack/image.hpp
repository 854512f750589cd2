// Small image type plus the pixel plumbing the harness needs: PNG round-trips,
// window crops with bilinear resize, box blur, drawing.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ragtrack {

// Channel-major (3 x h x w) doubles in [0, 1].
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : h(height), w(width), v(static_cast<std::size_t>(3) * height * width, fill) {}

  double& at(int c, int y, int x) { return v[(static_cast<std::size_t>(c) * h + y) * w + x]; }
  double at(int c, int y, int x) const { return v[(static_cast<std::size_t>(c) * h + y) * w + x]; }
};

// Axis-aligned rectangle in frame pixels, top-left origin.
struct WindowPx {
  double x = 0, y = 0, side = 0;
};

void fill_rect(Image& img, double x, double y, double w, double h, double r, double g, double b);
Image box_blur3(const Image& img);
Image to_grayscale(const Image& img);
// Rotate around the image center by `degrees`, nearest-neighbor, clamped sampling.
Image rotate_nn(const Image& img, double degrees);

// Square window centered at (cx, cy) with side `side`, shifted to stay inside
// the frame (side is capped at the frame edge first).
WindowPx clamp_window(double cx, double cy, double side, int frame_h, int frame_w);
// Bilinear resample of the window contents to out_edge x out_edge.
Image crop_resize(const Image& img, const WindowPx& win, int out_edge);

void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);
std::vector<unsigned char> encode_png(const Image& img);

}  // namespace ragtrack
