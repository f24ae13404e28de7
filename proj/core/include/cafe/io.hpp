#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cafe/model.hpp"
#include "cafe/vfl.hpp"

namespace cafe {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

// Unsigned-byte IDX with big-endian header.
IdxFile read_idx(const std::string& path);
void write_idx(const std::string& path, std::uint32_t magic, const std::vector<std::uint32_t>& dims,
               const std::vector<std::uint8_t>& bytes);

// Images scaled to [0,1]. `limit` = 0 keeps every sample.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t limit = 0,
                 std::size_t classes = 10);

struct Image8 {
  std::size_t width = 0, height = 0, channels = 1;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

std::uint8_t quantize(double v);
std::string png_version();

// Rows of `images` laid out as `layout`; 1 channel gives grayscale, 3 gives RGB.
void save_png_grid(const Tensor& images, const Shape3& layout, std::size_t cols, const std::string& path);
Image8 read_png(const std::string& path);
// Inverse of the grid layout; values are q/255.
Tensor split_grid(const Image8& img, const Shape3& layout, std::size_t count, std::size_t cols);

}  // namespace cafe
