// Image helpers: (3, H, W) tensors with values in [0, 1], stored on disk as
// binary PPM (P6, 8-bit). Quantization to bytes is the only lossy step and
// is deterministic, so generated scenes round-trip bit-identically.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "leapd/tensor.hpp"

namespace leapd {

inline uint8_t to_byte(double v) {
  double c = std::min(1.0, std::max(0.0, v));
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

inline void write_ppm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.shape[0] != 3)
    throw std::invalid_argument("write_ppm: expects (3,H,W) tensor");
  std::size_t h = img.shape[1], w = img.shape[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) row[x * 3 + c] = to_byte(img(c, y, x));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 PPM file: " + path);
  auto next_int = [&in, &path]() {
    // Skips whitespace and `#` comments between header fields.
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string junk;
        std::getline(in, junk);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) throw std::runtime_error("bad PPM header: " + path);
    return v;
  };
  long w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw std::runtime_error("unsupported PPM maxval in " + path);
  in.get();  // the single whitespace after maxval
  Tensor img = Tensor::zeros({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  std::vector<uint8_t> row(static_cast<std::size_t>(w) * 3);
  for (long y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw std::runtime_error("truncated PPM data: " + path);
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
  }
  return img;
}

}  // namespace leapd
