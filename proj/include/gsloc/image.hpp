#ifndef GSLOC_IMAGE_HPP_
#define GSLOC_IMAGE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace gsloc {

// Row-major interleaved image, values in [0,1] for color, meters for depth.
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) {
    return data[(size_t(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(size_t(y) * width + x) * channels + c];
  }
  bool empty() const { return data.empty(); }
  size_t pixel_count() const { return size_t(width) * height; }

  double at_clamped(int x, int y, int c = 0) const {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return at(x, y, c);
  }

  double bilinear(double x, double y, int c = 0) const {
    const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    const double v00 = at_clamped(x0, y0, c), v10 = at_clamped(x0 + 1, y0, c);
    const double v01 = at_clamped(x0, y0 + 1, c), v11 = at_clamped(x0 + 1, y0 + 1, c);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
  }
};

inline Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  Image g(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      g.at(x, y) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                   0.114 * img.at(x, y, 2);
  return g;
}

// Area-average downsample to the given size.
Image downsample_area(const Image& img, int out_w, int out_h);

// Integer-factor box downsample (supersampled renders -> working resolution).
Image downsample_box(const Image& img, int factor);

}  // namespace gsloc

#endif
