#include "gsloc/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <stdexcept>

namespace gsloc {

namespace {
std::vector<int> png_params() {
  // Fixed compression level so encoded bytes are stable across runs.
  return {cv::IMWRITE_PNG_COMPRESSION, 6};
}
}  // namespace

void save_png8(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::runtime_error("save_png8: expected 1 or 3 channels");
  cv::Mat m(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height; ++y) {
    uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const double v = std::clamp(img.at(x, y, c), 0.0, 1.0);
        // OpenCV is BGR on disk order; store RGB -> BGR.
        const int cc = img.channels == 3 ? 2 - c : c;
        row[x * img.channels + cc] = uint8_t(std::lround(v * 255.0));
      }
    }
  }
  if (!cv::imwrite(path, m, png_params()))
    throw std::runtime_error("failed to write PNG: " + path);
}

Image load_png8(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw std::runtime_error("failed to read PNG: " + path);
  if (m.depth() != CV_8U)
    throw std::runtime_error("expected 8-bit PNG: " + path);
  const int ch = m.channels() >= 3 ? 3 : 1;
  Image img(m.cols, m.rows, ch);
  for (int y = 0; y < m.rows; ++y) {
    const uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < ch; ++c) {
        const int cc = ch == 3 ? 2 - c : c;
        img.at(x, y, c) = row[x * m.channels() + cc] / 255.0;
      }
  }
  return img;
}

void save_depth_png16(const std::string& path, const Image& depth_m) {
  if (depth_m.channels != 1)
    throw std::runtime_error("save_depth_png16: expected 1 channel");
  cv::Mat m(depth_m.height, depth_m.width, CV_16UC1);
  for (int y = 0; y < depth_m.height; ++y) {
    uint16_t* row = m.ptr<uint16_t>(y);
    for (int x = 0; x < depth_m.width; ++x) {
      const double mm = std::clamp(depth_m.at(x, y) * 1000.0, 0.0, 65535.0);
      row[x] = uint16_t(std::lround(mm));
    }
  }
  if (!cv::imwrite(path, m, png_params()))
    throw std::runtime_error("failed to write PNG: " + path);
}

Image load_depth_png16(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw std::runtime_error("failed to read PNG: " + path);
  if (m.type() != CV_16UC1)
    throw std::runtime_error("expected 16-bit single-channel PNG: " + path);
  Image img(m.cols, m.rows, 1);
  for (int y = 0; y < m.rows; ++y) {
    const uint16_t* row = m.ptr<uint16_t>(y);
    for (int x = 0; x < m.cols; ++x) img.at(x, y) = row[x] / 1000.0;
  }
  return img;
}

Image downsample_area(const Image& img, int out_w, int out_h) {
  Image out(out_w, out_h, img.channels);
  const double sx = double(img.width) / out_w, sy = double(img.height) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const int y0 = int(oy * sy), y1 = std::max(y0 + 1, int((oy + 1) * sy));
    for (int ox = 0; ox < out_w; ++ox) {
      const int x0 = int(ox * sx), x1 = std::max(x0 + 1, int((ox + 1) * sx));
      for (int c = 0; c < img.channels; ++c) {
        double sum = 0;
        for (int y = y0; y < y1 && y < img.height; ++y)
          for (int x = x0; x < x1 && x < img.width; ++x) sum += img.at(x, y, c);
        out.at(ox, oy, c) = sum / double((y1 - y0) * (x1 - x0));
      }
    }
  }
  return out;
}

Image downsample_box(const Image& img, int factor) {
  if (factor <= 1) return img;
  Image out(img.width / factor, img.height / factor, img.channels);
  const double inv = 1.0 / (factor * factor);
  for (int oy = 0; oy < out.height; ++oy)
    for (int ox = 0; ox < out.width; ++ox)
      for (int c = 0; c < img.channels; ++c) {
        double sum = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            sum += img.at(ox * factor + dx, oy * factor + dy, c);
        out.at(ox, oy, c) = sum * inv;
      }
  return out;
}

}  // namespace gsloc
