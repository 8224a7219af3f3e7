#pragma once

// Binary PGM (P5) I/O. Images are written with maxval 65535 (16-bit,
// big-endian sample order per the PGM spec); masks with maxval 255 using
// values 0 and 255 only.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "mednca/kernels.hpp"
#include "mednca/tensor.hpp"

namespace mednca {

struct PgmError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace pgm_detail {

inline int next_token(std::istream& in, std::string& tok) {
  tok.clear();
  int c = in.get();
  // skip whitespace and comment lines
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return c;
}

inline long parse_header(std::istream& in, long& w, long& h) {
  std::string tok;
  next_token(in, tok);
  if (tok != "P5") throw PgmError("pgm: bad magic, expected P5");
  next_token(in, tok);
  w = std::stol(tok);
  next_token(in, tok);
  h = std::stol(tok);
  next_token(in, tok);
  const long maxval = std::stol(tok);
  if (w <= 0 || h <= 0) throw PgmError("pgm: bad dimensions");
  return maxval;
}

}  // namespace pgm_detail

// 16-bit image, values in [0,1].
template <typename T>
void write_pgm_image(const std::string& path, const Tensor<T>& image) {
  require(image.rank() == 3 && image.dim(0) == 1, "write_pgm_image: image must be 1xHxW");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PgmError("pgm: cannot open for writing: " + path);
  const i64 H = image.dim(1), W = image.dim(2);
  out << "P5\n" << W << " " << H << "\n65535\n";
  for (i64 i = 0; i < image.size(); ++i) {
    double v = std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    out.put(static_cast<char>(q >> 8));
    out.put(static_cast<char>(q & 0xff));
  }
  if (!out) throw PgmError("pgm: write failed: " + path);
}

template <typename T>
Tensor<T> read_pgm_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError("pgm: cannot open: " + path);
  long w = 0, h = 0;
  const long maxval = pgm_detail::parse_header(in, w, h);
  if (maxval != 65535) throw PgmError("pgm: unexpected maxval for image (want 65535)");
  Tensor<T> img({1, h, w});
  for (i64 i = 0; i < img.size(); ++i) {
    const int hi = in.get();
    const int lo = in.get();
    if (hi == EOF || lo == EOF) throw PgmError("pgm: truncated payload: " + path);
    img[i] = static_cast<T>((hi * 256 + lo) / 65535.0);
  }
  return img;
}

// 8-bit mask, values {0,1} stored as {0,255}.
template <typename T>
void write_pgm_mask(const std::string& path, const Tensor<T>& mask) {
  require(mask.rank() == 3 && mask.dim(0) == 1, "write_pgm_mask: mask must be 1xHxW");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PgmError("pgm: cannot open for writing: " + path);
  out << "P5\n" << mask.dim(2) << " " << mask.dim(1) << "\n255\n";
  for (i64 i = 0; i < mask.size(); ++i)
    out.put(mask[i] > T(0.5) ? static_cast<char>(255) : static_cast<char>(0));
  if (!out) throw PgmError("pgm: write failed: " + path);
}

template <typename T>
Tensor<T> read_pgm_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError("pgm: cannot open: " + path);
  long w = 0, h = 0;
  const long maxval = pgm_detail::parse_header(in, w, h);
  if (maxval != 255) throw PgmError("pgm: unexpected maxval for mask (want 255)");
  Tensor<T> mask({1, h, w});
  for (i64 i = 0; i < mask.size(); ++i) {
    const int v = in.get();
    if (v == EOF) throw PgmError("pgm: truncated payload: " + path);
    mask[i] = v >= 128 ? T(1) : T(0);
  }
  return mask;
}

}  // namespace mednca
