#include "padet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace padet {

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_bmp(const std::string& path, const Tensor& image, int n) {
  const Shape4 s = image.shape;
  if (s.c != 3 || n < 0 || n >= s.n) {
    throw std::invalid_argument("write_bmp: expected 3-channel image, got " + s.str());
  }
  const int h = s.h, w = s.w;
  const int row_bytes = (w * 3 + 3) / 4 * 4;
  const std::uint32_t pixel_bytes = static_cast<std::uint32_t>(row_bytes) * h;
  std::vector<std::uint8_t> out;
  out.reserve(54 + pixel_bytes);
  out.push_back('B');
  out.push_back('M');
  put_u32(out, 54 + pixel_bytes);
  put_u32(out, 0);
  put_u32(out, 54);
  put_u32(out, 40);
  put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, static_cast<std::uint32_t>(h));
  put_u16(out, 1);
  put_u16(out, 24);
  put_u32(out, 0);  // BI_RGB
  put_u32(out, pixel_bytes);
  put_u32(out, 2835);
  put_u32(out, 2835);
  put_u32(out, 0);
  put_u32(out, 0);

  for (int y = h - 1; y >= 0; --y) {
    const size_t row_start = out.size();
    for (int x = 0; x < w; ++x) {
      out.push_back(to_byte(image.at(n, 2, y, x)));  // B
      out.push_back(to_byte(image.at(n, 1, y, x)));  // G
      out.push_back(to_byte(image.at(n, 0, y, x)));  // R
    }
    while (out.size() - row_start < static_cast<size_t>(row_bytes)) out.push_back(0);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_bmp: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

TensorRef read_bmp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_bmp: cannot open " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (data.size() < 54 || data[0] != 'B' || data[1] != 'M') {
    throw std::runtime_error("read_bmp: " + path + " is not a BMP file");
  }
  auto u32 = [&](size_t off) {
    return static_cast<std::uint32_t>(data[off]) | (data[off + 1] << 8) |
           (data[off + 2] << 16) | (static_cast<std::uint32_t>(data[off + 3]) << 24);
  };
  auto u16 = [&](size_t off) {
    return static_cast<std::uint16_t>(data[off] | (data[off + 1] << 8));
  };
  const std::uint32_t offset = u32(10);
  const int w = static_cast<std::int32_t>(u32(18));
  const int h = static_cast<std::int32_t>(u32(22));
  if (u16(28) != 24 || u32(30) != 0 || w <= 0 || h <= 0) {
    throw std::runtime_error("read_bmp: only 24-bit uncompressed BMP is supported");
  }
  const int row_bytes = (w * 3 + 3) / 4 * 4;
  if (data.size() < offset + static_cast<size_t>(row_bytes) * h) {
    throw std::runtime_error("read_bmp: truncated file " + path);
  }
  auto img = make_tensor({1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = data.data() + offset + static_cast<size_t>(row_bytes) * (h - 1 - y);
    for (int x = 0; x < w; ++x) {
      img->at(0, 2, y, x) = row[x * 3 + 0] / 255.0;
      img->at(0, 1, y, x) = row[x * 3 + 1] / 255.0;
      img->at(0, 0, y, x) = row[x * 3 + 2] / 255.0;
    }
  }
  return img;
}

void draw_box_outline(Tensor& image, int n, const Box& box,
                      const std::array<double, 3>& color) {
  const int h = image.shape.h, w = image.shape.w;
  const int x0 = std::clamp(static_cast<int>(std::lround(box.x_min())), 0, w - 1);
  const int x1 = std::clamp(static_cast<int>(std::lround(box.x_max())) - 1, 0, w - 1);
  const int y0 = std::clamp(static_cast<int>(std::lround(box.y_min())), 0, h - 1);
  const int y1 = std::clamp(static_cast<int>(std::lround(box.y_max())) - 1, 0, h - 1);
  for (int x = x0; x <= x1; ++x) {
    for (int c = 0; c < 3; ++c) {
      image.at(n, c, y0, x) = color[c];
      image.at(n, c, y1, x) = color[c];
    }
  }
  for (int y = y0; y <= y1; ++y) {
    for (int c = 0; c < 3; ++c) {
      image.at(n, c, y, x0) = color[c];
      image.at(n, c, y, x1) = color[c];
    }
  }
}

}  // namespace padet
