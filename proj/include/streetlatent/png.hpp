#pragma once

// Minimal 8-bit grayscale PNG codec on top of zlib. Output bytes are a pure
// function of the pixels: filter type 0 on every row, zlib level 9, no
// ancillary chunks.

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "streetlatent/error.hpp"
#include "streetlatent/scenegen.hpp"

namespace streetlatent::png {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

inline GrayImage to_gray(const RasterImage& img) {
  GrayImage g{kImageWidth, kImageHeight, std::vector<std::uint8_t>(kPixelCount)};
  const auto px = img.pixels();
  for (std::size_t i = 0; i < kPixelCount; ++i) g.pixels[i] = quantize(px[i]);
  return g;
}

inline RasterImage to_raster(const GrayImage& g) {
  if (g.width != kImageWidth || g.height != kImageHeight)
    throw InvalidArgument("expected a 64x64 image, got " + std::to_string(g.width) + "x" +
                          std::to_string(g.height));
  std::vector<double> px(kPixelCount);
  for (std::size_t i = 0; i < kPixelCount; ++i) px[i] = g.pixels[i] / 255.0;
  return RasterImage(std::move(px));
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

constexpr std::array<std::uint8_t, 8> kSignature{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const GrayImage& img) {
  using namespace detail;
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (img.width + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const auto* row = img.pixels.data() + static_cast<std::size_t>(y) * img.width;
    raw.insert(raw.end(), row, row + img.width);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw Error("zlib compression failed");
  z.resize(zlen);

  std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // 8-bit, grayscale, deflate, adaptive, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

inline std::vector<std::uint8_t> encode(const RasterImage& img) { return encode(to_gray(img)); }

inline GrayImage decode(const std::vector<std::uint8_t>& bytes) {
  using namespace detail;
  if (bytes.size() < 8 || !std::equal(kSignature.begin(), kSignature.end(), bytes.begin()))
    throw IoError("not a PNG file");
  GrayImage img;
  std::vector<std::uint8_t> zdata;
  std::size_t pos = 8;
  bool have_header = false;
  while (pos + 12 <= bytes.size()) {
    const std::uint32_t len = get_u32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw IoError("truncated PNG chunk");
    const std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    const std::uint8_t* data = &bytes[pos + 8];
    if (type == "IHDR") {
      if (len != 13) throw IoError("bad IHDR");
      img.width = static_cast<int>(get_u32(data));
      img.height = static_cast<int>(get_u32(data + 4));
      if (data[8] != 8 || data[9] != 0 || data[12] != 0)
        throw IoError("only 8-bit non-interlaced grayscale PNG is supported");
      have_header = true;
    } else if (type == "IDAT") {
      zdata.insert(zdata.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!have_header) throw IoError("PNG without IHDR");

  const std::size_t stride = static_cast<std::size_t>(img.width);
  uLongf rawlen = static_cast<uLongf>((stride + 1) * img.height);
  std::vector<std::uint8_t> raw(rawlen);
  if (uncompress(raw.data(), &rawlen, zdata.data(), static_cast<uLong>(zdata.size())) != Z_OK ||
      rawlen != raw.size())
    throw IoError("corrupt PNG image data");

  img.pixels.assign(stride * img.height, 0);
  for (int y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* in = &raw[y * (stride + 1) + 1];
    std::uint8_t* cur = &img.pixels[y * stride];
    const std::uint8_t* prev = y > 0 ? &img.pixels[(y - 1) * stride] : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x > 0 ? cur[x - 1] : 0;
      const int b = prev ? prev[x] : 0;
      const int c = (prev && x > 0) ? prev[x - 1] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = paeth(a, b, c); break;
        default: throw IoError("unknown PNG filter type");
      }
      cur[x] = static_cast<std::uint8_t>(in[x] + pred);
    }
  }
  return img;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline void write(const std::filesystem::path& path, const RasterImage& img) {
  write_file(path, encode(img));
}

inline RasterImage read(const std::filesystem::path& path) { return to_raster(decode(read_file(path))); }

}  // namespace streetlatent::png
