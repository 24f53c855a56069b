#ifndef GSLOC_IMAGE_IO_HPP_
#define GSLOC_IMAGE_IO_HPP_

#include <string>

#include "gsloc/image.hpp"

namespace gsloc {

// 8-bit PNG, 1 or 3 channels; values clamped to [0,1] and quantized.
void save_png8(const std::string& path, const Image& img);
Image load_png8(const std::string& path);

// 16-bit single-channel PNG storing depth in millimeters; 0 = invalid.
void save_depth_png16(const std::string& path, const Image& depth_m);
Image load_depth_png16(const std::string& path);

}  // namespace gsloc

#endif
