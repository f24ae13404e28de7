#include "cafe/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>

namespace cafe {

namespace {
std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}
}  // namespace

IdxFile read_idx(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::io, "cannot open IDX file '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(buf.size() >= 4, ErrorCode::format, path + ": truncated IDX header");
  IdxFile idx;
  idx.magic = be32(buf.data());
  require(idx.magic == kIdxImagesMagic || idx.magic == kIdxLabelsMagic, ErrorCode::format,
          path + ": bad IDX magic");
  std::size_t ndim = idx.magic & 0xff;
  require(buf.size() >= 4 + 4 * ndim, ErrorCode::format, path + ": truncated IDX dimensions");
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    idx.dims.push_back(be32(buf.data() + 4 + 4 * i));
    count *= idx.dims.back();
  }
  std::size_t off = 4 + 4 * ndim;
  require(buf.size() - off >= count, ErrorCode::format,
          path + ": truncated IDX payload (" + std::to_string(buf.size() - off) + " of " + std::to_string(count) +
              " bytes)");
  idx.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(off),
                   buf.begin() + static_cast<std::ptrdiff_t>(off + count));
  return idx;
}

void write_idx(const std::string& path, std::uint32_t magic, const std::vector<std::uint32_t>& dims,
               const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::io, "cannot create IDX file '" + path + "'");
  auto put = [&](std::uint32_t v) {
    char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    f.write(b, 4);
  };
  put(magic);
  for (auto d : dims) put(d);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorCode::io, "write failed for '" + path + "'");
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t limit,
                 std::size_t classes) {
  auto im = read_idx(images_path);
  require(im.magic == kIdxImagesMagic && im.dims.size() == 3, ErrorCode::format,
          images_path + ": expected a 3-D image IDX (magic 0x803)");
  auto lb = read_idx(labels_path);
  require(lb.magic == kIdxLabelsMagic && lb.dims.size() == 1, ErrorCode::format,
          labels_path + ": expected a 1-D label IDX (magic 0x801)");
  require(lb.dims[0] == im.dims[0], ErrorCode::format, "image and label counts differ");
  std::size_t n = im.dims[0], h = im.dims[1], w = im.dims[2];
  if (limit && limit < n) n = limit;
  Dataset d;
  d.image = {1, h, w};
  d.classes = classes;
  d.x = Tensor({n, h * w});
  for (std::size_t i = 0; i < n * h * w; ++i) d.x[i] = im.bytes[i] / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    require(lb.bytes[i] < classes, ErrorCode::format, labels_path + ": label outside class range");
    d.y.push_back(lb.bytes[i]);
  }
  return d;
}

std::string png_version() { return PNG_LIBPNG_VER_STRING; }

std::uint8_t quantize(double v) {
  double c = std::min(1.0, std::max(0.0, std::isfinite(v) ? v : 0.0));
  return static_cast<std::uint8_t>(std::lround(255.0 * c));
}

namespace {
struct FileCloser {
  void operator()(FILE* f) const { if (f) std::fclose(f); }
};
}  // namespace

void save_png_grid(const Tensor& images, const Shape3& L, std::size_t cols, const std::string& path) {
  require(cols >= 1, ErrorCode::invalid_argument, "grid needs cols >= 1");
  require(L.c == 1 || L.c == 3, ErrorCode::invalid_argument, "PNG grids need 1 or 3 channels");
  require(images.rank() == 2 && images.cols() == L.size(), ErrorCode::dimension, "images do not match layout");
  std::size_t n = images.rows();
  std::size_t rows = (n + cols - 1) / cols;
  std::size_t W = cols * L.w, H = std::max<std::size_t>(rows, 1) * L.h;
  std::vector<std::uint8_t> px(W * H * L.c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t gy = (i / cols) * L.h, gx = (i % cols) * L.w;
    for (std::size_t c = 0; c < L.c; ++c)
      for (std::size_t y = 0; y < L.h; ++y)
        for (std::size_t x = 0; x < L.w; ++x)
          px[((gy + y) * W + gx + x) * L.c + c] = quantize(images(i, (c * L.h + y) * L.w + x));
  }

  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, ErrorCode::io, "cannot create PNG '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "libpng failed writing '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               L.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < H; ++y) png_write_row(png, px.data() + y * W * L.c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 read_png(const std::string& path) {
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, ErrorCode::io, "cannot open PNG '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::format, "libpng failed reading '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  Image8 img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  int type = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) != 8 || (type != PNG_COLOR_TYPE_GRAY && type != PNG_COLOR_TYPE_RGB)) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::format, path + ": only 8-bit gray or RGB PNGs are supported");
  }
  img.channels = type == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  img.pixels.resize(img.width * img.height * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width * img.channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Tensor split_grid(const Image8& img, const Shape3& L, std::size_t count, std::size_t cols) {
  require(img.channels == L.c, ErrorCode::dimension, "grid channel count does not match layout");
  Tensor out({count, L.size()});
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t gy = (i / cols) * L.h, gx = (i % cols) * L.w;
    require(gy + L.h <= img.height && gx + L.w <= img.width, ErrorCode::dimension, "grid smaller than count");
    for (std::size_t c = 0; c < L.c; ++c)
      for (std::size_t y = 0; y < L.h; ++y)
        for (std::size_t x = 0; x < L.w; ++x)
          out(i, (c * L.h + y) * L.w + x) = img.pixels[((gy + y) * img.width + gx + x) * L.c + c] / 255.0;
  }
  return out;
}

}  // namespace cafe
