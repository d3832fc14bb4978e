#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pcnn/error.hpp"
#include "pcnn/tensor.hpp"

// Binary PPM (P6) decoding/encoding and the resize + center-crop
// preprocessing. Images are [3,H,W] tensors with values in [0,1].
namespace pcnn {

namespace detail {

// Reads one header token, skipping whitespace and '#' comments.
inline bool ppm_token(std::istream& is, std::string& out) {
  out.clear();
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (!std::isspace(ch)) break;
  }
  if (ch == EOF) return false;
  do {
    out.push_back(static_cast<char>(ch));
    ch = is.peek();
    if (ch == EOF || std::isspace(ch) || ch == '#') break;
    is.get();
  } while (true);
  return true;
}

}  // namespace detail

inline Tensor decode_ppm(std::istream& is, const std::string& name) {
  auto bad = [&](const std::string& what) -> void {
    fail(ErrorKind::decode, name + ": " + what);
  };
  std::string tok;
  if (!detail::ppm_token(is, tok)) bad("empty file");
  if (tok != "P6") bad("unsupported format '" + tok + "' (only binary PPM P6)");
  std::size_t dims[3] = {0, 0, 0};
  for (auto& d : dims) {
    if (!detail::ppm_token(is, tok)) bad("truncated header");
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(tok, &used);
      if (used != tok.size()) bad("bad header field '" + tok + "'");
      d = v;
    } catch (const std::logic_error&) {
      bad("bad header field '" + tok + "'");
    }
  }
  const std::size_t width = dims[0], height = dims[1], maxval = dims[2];
  if (width == 0 || height == 0) bad("zero image dimension");
  if (maxval == 0 || maxval > 255) bad("unsupported maxval " + std::to_string(maxval));
  if (!std::isspace(is.get())) bad("missing separator after header");

  std::vector<unsigned char> bytes(width * height * 3);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    bad("truncated pixel data");
  }
  Tensor img({3, height, width});
  const double scale = static_cast<double>(maxval);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const unsigned char b = bytes[(y * width + x) * 3 + c];
        if (b > maxval) bad("sample exceeds maxval");
        img[(c * height + y) * width + x] = b / scale;  // divide, as quantize_8bit does
      }
    }
  }
  return img;
}

inline Tensor load_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::decode, path.string() + ": cannot open");
  return decode_ppm(is, path.string());
}

inline unsigned char quantize_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void encode_ppm(std::ostream& os, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3) fail(ErrorKind::format, "PPM export needs a [3,H,W] image");
  const std::size_t h = img.dim(1), w = img.dim(2);
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> bytes(w * h * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) bytes[(y * w + x) * 3 + c] = quantize_byte(img[(c * h + y) * w + x]);
    }
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_image(const std::filesystem::path& path, const Tensor& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  encode_ppm(os, img);
  if (!os) fail(ErrorKind::io, "write failed for " + path.string());
}

/// Snaps every value to the nearest 8-bit level so a PPM round trip is exact.
inline void quantize_8bit(Tensor& img) {
  for (auto& v : img.values()) v = quantize_byte(v) / 255.0;
}

/// Bilinear resampling with half-pixel centres and edge clamping.
inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) fail(ErrorKind::format, "resize expects a [C,H,W] image");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (out_h == h && out_w == w) return img;
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = img.data() + ch * h * w;
        const double top = p[y0 * w + x0] * (1 - wx) + p[y0 * w + x1] * wx;
        const double bot = p[y1 * w + x0] * (1 - wx) + p[y1 * w + x1] * wx;
        out[(ch * out_h + y) * out_w + x] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

/// Resizes so the shorter side equals `side` (aspect preserved, longer side
/// rounded), then crops the centred side x side window with floor offsets.
inline Tensor resize_center_crop(const Tensor& img, std::size_t side) {
  if (img.rank() != 3) fail(ErrorKind::format, "resize_center_crop expects a [C,H,W] image");
  if (side == 0) fail(ErrorKind::config, "crop side must be positive");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::size_t rh, rw;
  if (h <= w) {
    rh = side;
    rw = std::max<std::size_t>(side, static_cast<std::size_t>(std::llround(
                                         static_cast<double>(w) * side / static_cast<double>(h))));
  } else {
    rw = side;
    rh = std::max<std::size_t>(side, static_cast<std::size_t>(std::llround(
                                         static_cast<double>(h) * side / static_cast<double>(w))));
  }
  const Tensor resized = resize_bilinear(img, rh, rw);
  const std::size_t y0 = (rh - side) / 2, x0 = (rw - side) / 2;
  if (rh == side && rw == side) return resized;
  Tensor out({c, side, side});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        out[(ch * side + y) * side + x] = resized[(ch * rh + y + y0) * rw + x + x0];
      }
    }
  }
  return out;
}

}  // namespace pcnn
