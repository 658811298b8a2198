#pragma once

// In-memory baseline JFIF codec: 8-bit, 4:2:0 chroma subsampling, standard
// quantization and Huffman tables, quality scaling as in common encoders.
// Encoder and decoder are both here so images can make a full lossy
// roundtrip without touching disk.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmvac/tensor.hpp"

namespace wmvac {
namespace jpegdetail {

inline constexpr std::array<std::uint8_t, 64> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

inline constexpr std::array<std::uint8_t, 64> kBaseLumaQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline constexpr std::array<std::uint8_t, 64> kBaseChromaQuant = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// counts per code length 1..16, then symbol values (standard tables)
inline constexpr std::array<std::uint8_t, 16> kDcLumaBits = {0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
inline constexpr std::array<std::uint8_t, 12> kDcLumaVals = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
inline constexpr std::array<std::uint8_t, 16> kDcChromaBits = {0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
inline constexpr std::array<std::uint8_t, 12> kDcChromaVals = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};

inline constexpr std::array<std::uint8_t, 16> kAcLumaBits = {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d};
inline constexpr std::array<std::uint8_t, 162> kAcLumaVals = {
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa};

inline constexpr std::array<std::uint8_t, 16> kAcChromaBits = {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77};
inline constexpr std::array<std::uint8_t, 162> kAcChromaVals = {
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
    0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
    0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
    0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa};

// quality 1..100 -> scaled table, clamped to [1,255]
inline std::array<std::uint16_t, 64> scale_quant(const std::array<std::uint8_t, 64>& base, int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<std::uint16_t, 64> out{};
  for (int i = 0; i < 64; ++i) {
    int v = (base[static_cast<std::size_t>(i)] * scale + 50) / 100;
    out[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(v < 1 ? 1 : (v > 255 ? 255 : v));
  }
  return out;
}

struct DctMatrix {
  double c[8][8];
  DctMatrix() {
    constexpr double kPi = 3.14159265358979323846;
    for (int u = 0; u < 8; ++u) {
      const double cu = (u == 0) ? std::sqrt(0.5) : 1.0;
      for (int x = 0; x < 8; ++x) c[u][x] = 0.5 * cu * std::cos((2 * x + 1) * u * kPi / 16.0);
    }
  }
};

inline const DctMatrix& dct_matrix() {
  static const DctMatrix m;
  return m;
}

// F = C * f * C^T
inline void fdct8x8(const double in[64], double out[64]) {
  const auto& m = dct_matrix();
  double tmp[64];
  for (int u = 0; u < 8; ++u)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += m.c[u][k] * in[k * 8 + x];
      tmp[u * 8 + x] = acc;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += tmp[u * 8 + k] * m.c[v][k];
      out[u * 8 + v] = acc;
    }
}

// f = C^T * F * C
inline void idct8x8(const double in[64], double out[64]) {
  const auto& m = dct_matrix();
  double tmp[64];
  for (int x = 0; x < 8; ++x)
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += m.c[k][x] * in[k * 8 + v];
      tmp[x * 8 + v] = acc;
    }
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += tmp[x * 8 + k] * m.c[k][y];
      out[x * 8 + y] = acc;
    }
}

// canonical Huffman codes from (bits, vals)
struct HuffEncoder {
  std::array<std::uint16_t, 256> code{};
  std::array<std::uint8_t, 256> size{};
  HuffEncoder(const std::uint8_t* bits, const std::uint8_t* vals, int nvals) {
    std::uint16_t current = 0;
    int k = 0;
    for (int len = 1; len <= 16; ++len) {
      for (int i = 0; i < bits[len - 1]; ++i) {
        if (k >= nvals) throw std::logic_error("huffman: table overflow");
        code[vals[k]] = current++;
        size[vals[k]] = static_cast<std::uint8_t>(len);
        ++k;
      }
      current = static_cast<std::uint16_t>(current << 1);
    }
  }
};

struct HuffDecoder {
  std::array<std::int32_t, 17> mincode{};
  std::array<std::int32_t, 17> maxcode{};
  std::array<std::int32_t, 17> valptr{};
  std::vector<std::uint8_t> vals;
  HuffDecoder() = default;
  HuffDecoder(const std::uint8_t* bits, const std::uint8_t* v, int nvals) : vals(v, v + nvals) {
    std::int32_t code = 0;
    int k = 0;
    for (int len = 1; len <= 16; ++len) {
      if (bits[len - 1] == 0) {
        maxcode[static_cast<std::size_t>(len)] = -1;
      } else {
        valptr[static_cast<std::size_t>(len)] = k;
        mincode[static_cast<std::size_t>(len)] = code;
        k += bits[len - 1];
        code += bits[len - 1];
        maxcode[static_cast<std::size_t>(len)] = code - 1;
      }
      code <<= 1;
    }
  }
};

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint32_t code, int nbits) {
    bits_ = (bits_ << nbits) | (code & ((1u << nbits) - 1u));
    count_ += nbits;
    while (count_ >= 8) {
      count_ -= 8;
      const std::uint8_t byte = static_cast<std::uint8_t>((bits_ >> count_) & 0xffu);
      out_.push_back(byte);
      if (byte == 0xff) out_.push_back(0x00);  // stuffing
    }
  }

  void flush() {
    if (count_ > 0) {
      const int rem = 8 - static_cast<int>(count_);  // top up to a byte boundary with ones
      put((1u << rem) - 1u, rem);
    }
  }

 private:
  std::vector<std::uint8_t>& out_;
  std::uint32_t bits_ = 0;
  std::uint32_t count_ = 0;
};

class BitReader {
 public:
  BitReader(const std::uint8_t* data, std::size_t size, std::size_t pos) : data_(data), size_(size), pos_(pos) {}

  int next_bit() {
    if (count_ == 0) {
      if (pos_ >= size_) throw std::runtime_error("jpeg_decode: truncated entropy-coded data");
      std::uint8_t byte = data_[pos_++];
      if (byte == 0xff) {
        if (pos_ >= size_) throw std::runtime_error("jpeg_decode: truncated after 0xFF");
        const std::uint8_t marker = data_[pos_++];
        if (marker == 0x00) {
          // stuffed byte
        } else if (marker == 0xd9) {
          throw std::runtime_error("jpeg_decode: scan data ended early (EOI inside scan)");
        } else {
          throw std::runtime_error("jpeg_decode: unexpected marker in scan data");
        }
      }
      bits_ = byte;
      count_ = 8;
    }
    --count_;
    return (bits_ >> count_) & 1;
  }

  int receive(int nbits) {
    int v = 0;
    for (int i = 0; i < nbits; ++i) v = (v << 1) | next_bit();
    return v;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_;
  std::uint32_t bits_ = 0;
  int count_ = 0;
};

inline int decode_symbol(BitReader& br, const HuffDecoder& t) {
  int len = 1;
  std::int32_t code = br.next_bit();
  while (t.maxcode[static_cast<std::size_t>(len)] < 0 || code > t.maxcode[static_cast<std::size_t>(len)]) {
    if (++len > 16) throw std::runtime_error("jpeg_decode: invalid Huffman code");
    code = (code << 1) | br.next_bit();
  }
  return t.vals[static_cast<std::size_t>(t.valptr[static_cast<std::size_t>(len)] + code -
                                         t.mincode[static_cast<std::size_t>(len)])];
}

inline int extend(int v, int size) {
  if (size == 0) return 0;
  return (v < (1 << (size - 1))) ? v - (1 << size) + 1 : v;
}

inline int bit_size(int v) {
  int a = v < 0 ? -v : v;
  int n = 0;
  while (a) {
    ++n;
    a >>= 1;
  }
  return n;
}

inline void emit_coefficient(BitWriter& bw, int v, int size) {
  if (v < 0) v += (1 << size) - 1;
  bw.put(static_cast<std::uint32_t>(v), size);
}

inline std::uint8_t clamp255(double v) {
  const long r = std::lround(v);
  return static_cast<std::uint8_t>(r < 0 ? 0 : (r > 255 ? 255 : r));
}

struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int width, int height) : w(width), h(height), v(static_cast<std::size_t>(width) * height, 0.0) {}
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void append_marker(std::vector<std::uint8_t>& out, std::uint8_t id) {
  out.push_back(0xff);
  out.push_back(id);
}

// level-shifted block -> quantized zigzag coefficients
inline void encode_block_coeffs(const Plane& plane, int bx, int by, const std::array<std::uint16_t, 64>& q,
                                int coeffs[64]) {
  double block[64];
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) block[y * 8 + x] = plane.at(by + y, bx + x) - 128.0;
  double freq[64];
  fdct8x8(block, freq);
  for (int i = 0; i < 64; ++i) {
    const int zz = kZigzag[static_cast<std::size_t>(i)];
    coeffs[i] = static_cast<int>(std::lround(freq[zz] / q[static_cast<std::size_t>(i)]));
  }
}

inline void huffman_encode_block(BitWriter& bw, const int coeffs[64], int& prev_dc, const HuffEncoder& dc,
                                 const HuffEncoder& ac) {
  const int diff = coeffs[0] - prev_dc;
  prev_dc = coeffs[0];
  const int dsize = bit_size(diff);
  bw.put(dc.code[static_cast<std::size_t>(dsize)], dc.size[static_cast<std::size_t>(dsize)]);
  if (dsize) emit_coefficient(bw, diff, dsize);

  int run = 0;
  for (int i = 1; i < 64; ++i) {
    if (coeffs[i] == 0) {
      ++run;
      continue;
    }
    while (run >= 16) {
      bw.put(ac.code[0xf0], ac.size[0xf0]);
      run -= 16;
    }
    const int asize = bit_size(coeffs[i]);
    const int sym = (run << 4) | asize;
    bw.put(ac.code[static_cast<std::size_t>(sym)], ac.size[static_cast<std::size_t>(sym)]);
    emit_coefficient(bw, coeffs[i], asize);
    run = 0;
  }
  if (run > 0) bw.put(ac.code[0x00], ac.size[0x00]);  // EOB
}

}  // namespace jpegdetail

inline std::vector<std::uint8_t> jpeg_encode(const Tensor& rgb, int quality) {
  using namespace jpegdetail;
  const Shape s = rgb.shape();
  if (s.n != 1 || s.c != 3) throw std::invalid_argument("jpeg_encode: expected 1x3xHxW, got " + s.str());
  if (quality < 1 || quality > 100)
    throw std::invalid_argument("jpeg_encode: quality must be in [1,100], got " + std::to_string(quality));

  const int w = s.w, h = s.h;
  const int pw = (w + 15) / 16 * 16, ph = (h + 15) / 16 * 16;

  // RGB [0,1] -> full-range YCbCr planes, edge-replicated to the MCU grid
  Plane py(pw, ph), pcb(pw, ph), pcr(pw, ph);
  for (int y = 0; y < ph; ++y) {
    const int sy = y < h ? y : h - 1;
    for (int x = 0; x < pw; ++x) {
      const int sx = x < w ? x : w - 1;
      const double r = 255.0 * rgb.at(0, 0, sy, sx);
      const double g = 255.0 * rgb.at(0, 1, sy, sx);
      const double b = 255.0 * rgb.at(0, 2, sy, sx);
      py.at(y, x) = 0.299 * r + 0.587 * g + 0.114 * b;
      pcb.at(y, x) = -0.168735892 * r - 0.331264108 * g + 0.5 * b + 128.0;
      pcr.at(y, x) = 0.5 * r - 0.418687589 * g - 0.081312411 * b + 128.0;
    }
  }
  // 4:2:0 subsample by 2x2 mean
  Plane scb(pw / 2, ph / 2), scr(pw / 2, ph / 2);
  for (int y = 0; y < ph / 2; ++y)
    for (int x = 0; x < pw / 2; ++x) {
      scb.at(y, x) = 0.25 * (pcb.at(2 * y, 2 * x) + pcb.at(2 * y, 2 * x + 1) + pcb.at(2 * y + 1, 2 * x) +
                             pcb.at(2 * y + 1, 2 * x + 1));
      scr.at(y, x) = 0.25 * (pcr.at(2 * y, 2 * x) + pcr.at(2 * y, 2 * x + 1) + pcr.at(2 * y + 1, 2 * x) +
                             pcr.at(2 * y + 1, 2 * x + 1));
    }

  const auto qluma = scale_quant(kBaseLumaQuant, quality);
  const auto qchroma = scale_quant(kBaseChromaQuant, quality);
  const HuffEncoder dc_l(kDcLumaBits.data(), kDcLumaVals.data(), 12);
  const HuffEncoder dc_c(kDcChromaBits.data(), kDcChromaVals.data(), 12);
  const HuffEncoder ac_l(kAcLumaBits.data(), kAcLumaVals.data(), 162);
  const HuffEncoder ac_c(kAcChromaBits.data(), kAcChromaVals.data(), 162);

  std::vector<std::uint8_t> out;
  append_marker(out, 0xd8);  // SOI

  append_marker(out, 0xe0);  // APP0 / JFIF
  append_u16(out, 16);
  const char jfif[5] = {'J', 'F', 'I', 'F', '\0'};
  for (char ch : jfif) out.push_back(static_cast<std::uint8_t>(ch));
  out.push_back(1);
  out.push_back(1);
  out.push_back(0);  // no density units
  append_u16(out, 1);
  append_u16(out, 1);
  out.push_back(0);
  out.push_back(0);  // no thumbnail

  for (int t = 0; t < 2; ++t) {  // DQT
    append_marker(out, 0xdb);
    append_u16(out, 67);
    out.push_back(static_cast<std::uint8_t>(t));
    const auto& q = t == 0 ? qluma : qchroma;
    for (int i = 0; i < 64; ++i) out.push_back(static_cast<std::uint8_t>(q[static_cast<std::size_t>(i)]));
  }

  append_marker(out, 0xc0);  // SOF0, baseline
  append_u16(out, 17);
  out.push_back(8);
  append_u16(out, static_cast<std::uint16_t>(h));
  append_u16(out, static_cast<std::uint16_t>(w));
  out.push_back(3);
  out.push_back(1); out.push_back(0x22); out.push_back(0);  // Y, 2x2 sampling
  out.push_back(2); out.push_back(0x11); out.push_back(1);  // Cb
  out.push_back(3); out.push_back(0x11); out.push_back(1);  // Cr

  auto emit_dht = [&out](std::uint8_t cls_id, const std::uint8_t* bits, const std::uint8_t* vals, int n) {
    append_marker(out, 0xc4);
    append_u16(out, static_cast<std::uint16_t>(2 + 1 + 16 + n));
    out.push_back(cls_id);
    for (int i = 0; i < 16; ++i) out.push_back(bits[i]);
    for (int i = 0; i < n; ++i) out.push_back(vals[i]);
  };
  emit_dht(0x00, kDcLumaBits.data(), kDcLumaVals.data(), 12);
  emit_dht(0x10, kAcLumaBits.data(), kAcLumaVals.data(), 162);
  emit_dht(0x01, kDcChromaBits.data(), kDcChromaVals.data(), 12);
  emit_dht(0x11, kAcChromaBits.data(), kAcChromaVals.data(), 162);

  append_marker(out, 0xda);  // SOS
  append_u16(out, 12);
  out.push_back(3);
  out.push_back(1); out.push_back(0x00);
  out.push_back(2); out.push_back(0x11);
  out.push_back(3); out.push_back(0x11);
  out.push_back(0);
  out.push_back(63);
  out.push_back(0);

  BitWriter bw(out);
  int dc_y = 0, dc_cb = 0, dc_cr = 0;
  int coeffs[64];
  for (int my = 0; my < ph; my += 16) {
    for (int mx = 0; mx < pw; mx += 16) {
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          encode_block_coeffs(py, mx + 8 * sx, my + 8 * sy, qluma, coeffs);
          huffman_encode_block(bw, coeffs, dc_y, dc_l, ac_l);
        }
      encode_block_coeffs(scb, mx / 2, my / 2, qchroma, coeffs);
      huffman_encode_block(bw, coeffs, dc_cb, dc_c, ac_c);
      encode_block_coeffs(scr, mx / 2, my / 2, qchroma, coeffs);
      huffman_encode_block(bw, coeffs, dc_cr, dc_c, ac_c);
    }
  }
  bw.flush();
  append_marker(out, 0xd9);  // EOI
  return out;
}

inline Tensor jpeg_decode(const std::uint8_t* data, std::size_t size) {
  using namespace jpegdetail;
  if (size < 4 || data[0] != 0xff || data[1] != 0xd8)
    throw std::runtime_error("jpeg_decode: missing SOI marker");

  std::array<std::array<std::uint16_t, 64>, 4> qtables{};
  std::array<HuffDecoder, 4> dc_tables, ac_tables;
  std::array<bool, 4> have_q{}, have_dc{}, have_ac{};

  int width = 0, height = 0;
  struct Comp {
    int id = 0, hs = 1, vs = 1, tq = 0, td = 0, ta = 0;
  };
  std::vector<Comp> comps;

  std::size_t pos = 2;
  auto need = [&](std::size_t n) {
    if (pos + n > size) throw std::runtime_error("jpeg_decode: truncated stream");
  };
  auto read_u16 = [&]() {
    need(2);
    const int v = (data[pos] << 8) | data[pos + 1];
    pos += 2;
    return v;
  };

  bool sos_reached = false;
  while (!sos_reached) {
    need(2);
    if (data[pos] != 0xff) throw std::runtime_error("jpeg_decode: expected marker");
    const std::uint8_t marker = data[pos + 1];
    pos += 2;
    if (marker == 0xd8) continue;
    if (marker == 0xd9) throw std::runtime_error("jpeg_decode: EOI before scan data");
    const int len = read_u16();
    if (len < 2) throw std::runtime_error("jpeg_decode: bad segment length");
    const std::size_t seg_end = pos + static_cast<std::size_t>(len) - 2;
    if (seg_end > size) throw std::runtime_error("jpeg_decode: truncated segment");
    switch (marker) {
      case 0xdb: {  // DQT
        while (pos < seg_end) {
          need(1);
          const int pq = data[pos] >> 4, tq = data[pos] & 0x0f;
          ++pos;
          if (tq > 3) throw std::runtime_error("jpeg_decode: bad quant table id");
          auto& q = qtables[static_cast<std::size_t>(tq)];
          for (int i = 0; i < 64; ++i) {
            if (pq == 0) {
              need(1);
              q[static_cast<std::size_t>(i)] = data[pos++];
            } else {
              need(2);
              q[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>((data[pos] << 8) | data[pos + 1]);
              pos += 2;
            }
          }
          have_q[static_cast<std::size_t>(tq)] = true;
        }
        break;
      }
      case 0xc0: {  // SOF0
        need(6);
        if (data[pos] != 8) throw std::runtime_error("jpeg_decode: only 8-bit precision supported");
        height = (data[pos + 1] << 8) | data[pos + 2];
        width = (data[pos + 3] << 8) | data[pos + 4];
        const int nc = data[pos + 5];
        pos += 6;
        if (nc != 3) throw std::runtime_error("jpeg_decode: only 3-component images supported");
        for (int i = 0; i < nc; ++i) {
          need(3);
          Comp c;
          c.id = data[pos];
          c.hs = data[pos + 1] >> 4;
          c.vs = data[pos + 1] & 0x0f;
          c.tq = data[pos + 2];
          pos += 3;
          comps.push_back(c);
        }
        if (comps[0].hs != 2 || comps[0].vs != 2 || comps[1].hs != 1 || comps[1].vs != 1 ||
            comps[2].hs != 1 || comps[2].vs != 1)
          throw std::runtime_error("jpeg_decode: only 4:2:0 sampling supported");
        break;
      }
      case 0xc4: {  // DHT
        while (pos < seg_end) {
          need(17);
          const int tc = data[pos] >> 4, th = data[pos] & 0x0f;
          ++pos;
          if (th > 3) throw std::runtime_error("jpeg_decode: bad huffman table id");
          std::uint8_t bits[16];
          int total = 0;
          for (int i = 0; i < 16; ++i) {
            bits[i] = data[pos + static_cast<std::size_t>(i)];
            total += bits[i];
          }
          pos += 16;
          need(static_cast<std::size_t>(total));
          HuffDecoder t(bits, data + pos, total);
          pos += static_cast<std::size_t>(total);
          if (tc == 0) {
            dc_tables[static_cast<std::size_t>(th)] = std::move(t);
            have_dc[static_cast<std::size_t>(th)] = true;
          } else {
            ac_tables[static_cast<std::size_t>(th)] = std::move(t);
            have_ac[static_cast<std::size_t>(th)] = true;
          }
        }
        break;
      }
      case 0xda: {  // SOS
        need(1);
        const int ns = data[pos++];
        if (ns != 3 || comps.size() != 3) throw std::runtime_error("jpeg_decode: bad SOS");
        for (int i = 0; i < ns; ++i) {
          need(2);
          const int cid = data[pos];
          const int td = data[pos + 1] >> 4, ta = data[pos + 1] & 0x0f;
          pos += 2;
          bool found = false;
          for (auto& c : comps)
            if (c.id == cid) {
              c.td = td;
              c.ta = ta;
              found = true;
            }
          if (!found) throw std::runtime_error("jpeg_decode: SOS references unknown component");
        }
        pos = seg_end;
        sos_reached = true;
        break;
      }
      case 0xc2:
      case 0xc1:
      case 0xc3:
        throw std::runtime_error("jpeg_decode: only baseline (SOF0) supported");
      case 0xdd:
        throw std::runtime_error("jpeg_decode: restart intervals not supported");
      default:
        pos = seg_end;  // APPn / COM / other: skip
        break;
    }
  }
  if (width <= 0 || height <= 0) throw std::runtime_error("jpeg_decode: missing SOF before SOS");
  for (const auto& c : comps) {
    if (!have_q[static_cast<std::size_t>(c.tq)] || !have_dc[static_cast<std::size_t>(c.td)] ||
        !have_ac[static_cast<std::size_t>(c.ta)])
      throw std::runtime_error("jpeg_decode: missing table referenced by component");
  }

  const int pw = (width + 15) / 16 * 16, ph = (height + 15) / 16 * 16;
  Plane py(pw, ph), scb(pw / 2, ph / 2), scr(pw / 2, ph / 2);

  BitReader br(data, size, pos);
  int pred[3] = {0, 0, 0};
  double freq[64], pix[64];

  auto decode_block = [&](int ci, Plane& plane, int bx, int by) {
    const Comp& c = comps[static_cast<std::size_t>(ci)];
    const auto& dc = dc_tables[static_cast<std::size_t>(c.td)];
    const auto& ac = ac_tables[static_cast<std::size_t>(c.ta)];
    const auto& q = qtables[static_cast<std::size_t>(c.tq)];
    int zz[64] = {0};
    const int dsize = decode_symbol(br, dc);
    const int diff = extend(br.receive(dsize), dsize);
    pred[ci] += diff;
    zz[0] = pred[ci];
    for (int i = 1; i < 64;) {
      const int sym = decode_symbol(br, ac);
      if (sym == 0x00) break;  // EOB
      if (sym == 0xf0) {       // ZRL
        i += 16;
        continue;
      }
      const int run = sym >> 4, asize = sym & 0x0f;
      i += run;
      if (i > 63) throw std::runtime_error("jpeg_decode: coefficient index out of range");
      zz[i] = extend(br.receive(asize), asize);
      ++i;
    }
    for (int i = 0; i < 64; ++i)
      freq[kZigzag[static_cast<std::size_t>(i)]] = static_cast<double>(zz[i]) * q[static_cast<std::size_t>(i)];
    idct8x8(freq, pix);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) plane.at(by + y, bx + x) = pix[y * 8 + x] + 128.0;
  };

  for (int my = 0; my < ph; my += 16)
    for (int mx = 0; mx < pw; mx += 16) {
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) decode_block(0, py, mx + 8 * sx, my + 8 * sy);
      decode_block(1, scb, mx / 2, my / 2);
      decode_block(2, scr, mx / 2, my / 2);
    }

  Tensor out(Shape{1, 3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double yy = py.at(y, x);
      const double cb = scb.at(y / 2, x / 2) - 128.0;  // chroma upsampled by replication
      const double cr = scr.at(y / 2, x / 2) - 128.0;
      out.at(0, 0, y, x) = clamp255(yy + 1.402 * cr) / 255.0f;
      out.at(0, 1, y, x) = clamp255(yy - 0.344136286 * cb - 0.714136286 * cr) / 255.0f;
      out.at(0, 2, y, x) = clamp255(yy + 1.772 * cb) / 255.0f;
    }
  return out;
}

inline Tensor jpeg_decode(const std::vector<std::uint8_t>& bytes) {
  return jpeg_decode(bytes.data(), bytes.size());
}

}  // namespace wmvac
