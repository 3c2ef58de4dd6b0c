#include "daclab/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "daclab/serialize.hpp"
#include "daclab/util.hpp"

namespace daclab {

namespace {

Image from_rgb8(int channels, int h, int w, const std::vector<std::uint8_t>& px) {
  // px is interleaved, `channels` per pixel; emit 3-channel planar float
  Image img = Image::make(3, h, w);
  int copy_c = std::min(channels, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* p = px.data() + (std::size_t(y) * w + x) * channels;
      for (int c = 0; c < 3; ++c) {
        std::uint8_t v = c < copy_c ? p[c] : p[0];
        img.at(c, y, x) = float(v) / 255.0f;
      }
    }
  return img;
}

std::uint8_t to_u8(float v) {
  float x = std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f;
  return std::uint8_t(std::min(255.0f, x));
}

}  // namespace

// ---------------------------------------------------------------- PPM (P6)

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      any = true;
    }
    if (!any) throw std::runtime_error("ppm: malformed header");
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw std::runtime_error("ppm: not a P6 file");
  pos = 2;
  long w = read_int(), h = read_int(), maxval = read_int();
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("ppm: unsupported dimensions or depth");
  ++pos;  // single whitespace after maxval
  std::size_t need = std::size_t(w) * h * 3;
  if (bytes.size() < pos + need) throw std::runtime_error("ppm: truncated pixel data");
  std::vector<std::uint8_t> px(bytes.begin() + pos, bytes.begin() + pos + need);
  return from_rgb8(3, int(h), int(w), px);
}

void write_ppm(const Image& img, const std::string& path) {
  if (img.c != 3) throw std::invalid_argument("ppm: only 3-channel images");
  std::string header = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) out.push_back(to_u8(img.at(c, y, x)));
  write_file_bytes(path, out);
}

// ---------------------------------------------------------------- inflate

namespace {

class BitReader {
 public:
  BitReader(const std::uint8_t* data, std::size_t len) : data_(data), len_(len) {}

  // LSB-first bit extraction per RFC 1951.
  std::uint32_t bits(int count) {
    while (bitcnt_ < count) {
      if (pos_ >= len_) throw std::runtime_error("inflate: unexpected end of stream");
      buf_ |= std::uint32_t(data_[pos_++]) << bitcnt_;
      bitcnt_ += 8;
    }
    std::uint32_t v = buf_ & ((1u << count) - 1);
    buf_ >>= count;
    bitcnt_ -= count;
    return v;
  }

  void align_byte() {
    buf_ = 0;
    bitcnt_ = 0;
  }

  std::uint8_t byte() {
    if (pos_ >= len_) throw std::runtime_error("inflate: unexpected end of stream");
    return data_[pos_++];
  }

 private:
  const std::uint8_t* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
  std::uint32_t buf_ = 0;
  int bitcnt_ = 0;
};

// Canonical Huffman decoding table (puff-style counts/symbols layout).
struct Huffman {
  std::vector<int> counts;   // counts[len] = number of codes of that length
  std::vector<int> symbols;  // symbols ordered by code

  static Huffman build(const std::vector<int>& lengths) {
    Huffman h;
    h.counts.assign(16, 0);
    for (int len : lengths)
      if (len) h.counts[len]++;
    std::vector<int> offsets(16, 0);
    for (int len = 1; len < 15; ++len) offsets[len + 1] = offsets[len] + h.counts[len];
    h.symbols.assign(offsets[15] + h.counts[15], 0);
    for (std::size_t sym = 0; sym < lengths.size(); ++sym)
      if (lengths[sym]) h.symbols[offsets[lengths[sym]]++] = int(sym);
    return h;
  }

  int decode(BitReader& br) const {
    int code = 0, first = 0, index = 0;
    for (int len = 1; len <= 15; ++len) {
      code |= int(br.bits(1));
      int count = counts[len];
      if (code - first < count) return symbols[index + (code - first)];
      index += count;
      first = (first + count) << 1;
      code <<= 1;
    }
    throw std::runtime_error("inflate: invalid huffman code");
  }
};

const int kLenBase[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,  15,  17,  19,  23, 27,
                          31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
const int kLenExtra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                           2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
const int kDistBase[30] = {1,    2,    3,    4,    5,    7,     9,     13,    17,   25,
                           33,   49,   65,   97,   129,  193,   257,   385,   513,  769,
                           1025, 1537, 2049, 3073, 4097, 6145,  8193,  12289, 16385, 24577};
const int kDistExtra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5,  5,  6,
                            6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

void inflate_block(BitReader& br, const Huffman& lit, const Huffman& dist,
                   std::vector<std::uint8_t>& out) {
  for (;;) {
    int sym = lit.decode(br);
    if (sym < 256) {
      out.push_back(std::uint8_t(sym));
    } else if (sym == 256) {
      return;
    } else {
      sym -= 257;
      if (sym >= 29) throw std::runtime_error("inflate: invalid length symbol");
      int len = kLenBase[sym] + int(br.bits(kLenExtra[sym]));
      int dsym = dist.decode(br);
      if (dsym >= 30) throw std::runtime_error("inflate: invalid distance symbol");
      std::size_t d = std::size_t(kDistBase[dsym]) + br.bits(kDistExtra[dsym]);
      if (d > out.size()) throw std::runtime_error("inflate: distance too far back");
      for (int i = 0; i < len; ++i) out.push_back(out[out.size() - d]);
    }
  }
}

Huffman fixed_literal_table() {
  std::vector<int> lengths(288);
  for (int i = 0; i < 144; ++i) lengths[i] = 8;
  for (int i = 144; i < 256; ++i) lengths[i] = 9;
  for (int i = 256; i < 280; ++i) lengths[i] = 7;
  for (int i = 280; i < 288; ++i) lengths[i] = 8;
  return Huffman::build(lengths);
}

Huffman fixed_distance_table() {
  return Huffman::build(std::vector<int>(30, 5));
}

}  // namespace

std::vector<std::uint8_t> inflate(const std::uint8_t* data, std::size_t len) {
  BitReader br(data, len);
  std::vector<std::uint8_t> out;
  for (;;) {
    std::uint32_t bfinal = br.bits(1);
    std::uint32_t btype = br.bits(2);
    if (btype == 0) {
      br.align_byte();
      std::uint32_t n = br.byte();
      n |= std::uint32_t(br.byte()) << 8;
      std::uint32_t nn = br.byte();
      nn |= std::uint32_t(br.byte()) << 8;
      if ((n ^ 0xffffu) != nn) throw std::runtime_error("inflate: stored length check failed");
      for (std::uint32_t i = 0; i < n; ++i) out.push_back(br.byte());
    } else if (btype == 1) {
      static const Huffman lit = fixed_literal_table();
      static const Huffman dist = fixed_distance_table();
      inflate_block(br, lit, dist, out);
    } else if (btype == 2) {
      int hlit = int(br.bits(5)) + 257;
      int hdist = int(br.bits(5)) + 1;
      int hclen = int(br.bits(4)) + 4;
      static const int order[19] = {16, 17, 18, 0, 8,  7, 9,  6, 10, 5,
                                    11, 4,  12, 3, 13, 2, 14, 1, 15};
      std::vector<int> cl_lengths(19, 0);
      for (int i = 0; i < hclen; ++i) cl_lengths[order[i]] = int(br.bits(3));
      Huffman cl = Huffman::build(cl_lengths);
      std::vector<int> lengths;
      while (int(lengths.size()) < hlit + hdist) {
        int sym = cl.decode(br);
        if (sym < 16) {
          lengths.push_back(sym);
        } else if (sym == 16) {
          if (lengths.empty()) throw std::runtime_error("inflate: repeat with no prior length");
          int rep = 3 + int(br.bits(2));
          for (int i = 0; i < rep; ++i) lengths.push_back(lengths.back());
        } else if (sym == 17) {
          int rep = 3 + int(br.bits(3));
          lengths.insert(lengths.end(), rep, 0);
        } else {
          int rep = 11 + int(br.bits(7));
          lengths.insert(lengths.end(), rep, 0);
        }
      }
      if (int(lengths.size()) != hlit + hdist)
        throw std::runtime_error("inflate: code length overflow");
      Huffman lit = Huffman::build(std::vector<int>(lengths.begin(), lengths.begin() + hlit));
      Huffman dist = Huffman::build(std::vector<int>(lengths.begin() + hlit, lengths.end()));
      inflate_block(br, lit, dist, out);
    } else {
      throw std::runtime_error("inflate: invalid block type");
    }
    if (bfinal) break;
  }
  return out;
}

// ---------------------------------------------------------------- PNG

namespace {

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

std::uint32_t adler32(const std::uint8_t* data, std::size_t len) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < len; ++i) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw std::runtime_error("png: bad signature");

  std::size_t pos = 8;
  int w = 0, h = 0, bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= bytes.size()) {
    std::uint32_t len = be32(bytes.data() + pos);
    std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
    const std::uint8_t* payload = bytes.data() + pos + 8;
    if (type == "IHDR") {
      if (len != 13) throw std::runtime_error("png: bad IHDR");
      w = int(be32(payload));
      h = int(be32(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[10] != 0 || payload[11] != 0) throw std::runtime_error("png: bad methods");
      if (payload[12] != 0) throw std::runtime_error("png: interlaced images unsupported");
      if (bit_depth != 8) throw std::runtime_error("png: only 8-bit depth supported");
      if (color_type != 0 && color_type != 2 && color_type != 6)
        throw std::runtime_error("png: unsupported color type " + std::to_string(color_type));
      saw_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) throw std::runtime_error("png: missing chunks");
  if (w <= 0 || h <= 0) throw std::runtime_error("png: bad dimensions");

  // zlib wrapper: 2-byte header, deflate stream, adler32
  if (idat.size() < 6) throw std::runtime_error("png: IDAT too short");
  if ((idat[0] & 0x0f) != 8) throw std::runtime_error("png: unknown zlib method");
  auto raw = inflate(idat.data() + 2, idat.size() - 6);
  std::uint32_t expect_adler = be32(idat.data() + idat.size() - 4);
  if (adler32(raw.data(), raw.size()) != expect_adler)
    throw std::runtime_error("png: adler32 mismatch");

  int channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
  std::size_t stride = std::size_t(w) * channels;
  if (raw.size() != (stride + 1) * std::size_t(h))
    throw std::runtime_error("png: decompressed size mismatch");

  std::vector<std::uint8_t> px(stride * h);
  std::vector<std::uint8_t> prior(stride, 0);
  for (int y = 0; y < h; ++y) {
    std::uint8_t filter = raw[std::size_t(y) * (stride + 1)];
    const std::uint8_t* src = raw.data() + std::size_t(y) * (stride + 1) + 1;
    std::uint8_t* dst = px.data() + std::size_t(y) * stride;
    for (std::size_t i = 0; i < stride; ++i) {
      int a = i >= std::size_t(channels) ? dst[i - channels] : 0;
      int b = prior[i];
      int c = i >= std::size_t(channels) ? prior[i - channels] : 0;
      int v;
      switch (filter) {
        case 0: v = src[i]; break;
        case 1: v = src[i] + a; break;
        case 2: v = src[i] + b; break;
        case 3: v = src[i] + (a + b) / 2; break;
        case 4: v = src[i] + paeth(a, b, c); break;
        default: throw std::runtime_error("png: unknown filter " + std::to_string(filter));
      }
      dst[i] = std::uint8_t(v & 0xff);
    }
    std::memcpy(prior.data(), dst, stride);
  }
  return from_rgb8(channels, h, w, px);
}

void write_png(const Image& img, const std::string& path) {
  if (img.c != 3) throw std::invalid_argument("png: only 3-channel images");
  std::vector<std::uint8_t> out;
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.insert(out.end(), sig, sig + 8);

  auto put_be32 = [](std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(std::uint8_t(x >> 24));
    v.push_back(std::uint8_t(x >> 16));
    v.push_back(std::uint8_t(x >> 8));
    v.push_back(std::uint8_t(x));
  };
  auto chunk = [&](const char* type, const std::vector<std::uint8_t>& payload) {
    put_be32(out, std::uint32_t(payload.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    put_be32(out, crc32(out.data() + start, out.size() - start));
  };

  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, std::uint32_t(img.w));
  put_be32(ihdr, std::uint32_t(img.h));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, default methods
  chunk("IHDR", ihdr);

  // scanlines with filter 0
  std::vector<std::uint8_t> raw;
  for (int y = 0; y < img.h; ++y) {
    raw.push_back(0);
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) raw.push_back(to_u8(img.at(c, y, x)));
  }

  // zlib stream with stored deflate blocks
  std::vector<std::uint8_t> z{0x78, 0x01};
  std::size_t off = 0;
  do {
    std::size_t n = std::min<std::size_t>(65535, raw.size() - off);
    bool final = off + n == raw.size();
    z.push_back(final ? 1 : 0);
    z.push_back(std::uint8_t(n & 0xff));
    z.push_back(std::uint8_t(n >> 8));
    z.push_back(std::uint8_t(~n & 0xff));
    z.push_back(std::uint8_t((~n >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + off, raw.begin() + off + n);
    off += n;
  } while (off < raw.size());
  put_be32(z, adler32(raw.data(), raw.size()));
  chunk("IDAT", z);
  chunk("IEND", {});
  write_file_bytes(path, out);
}

Image read_image(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P') return decode_png(bytes);
  throw std::runtime_error("unrecognized image format: " + path);
}

// ---------------------------------------------------------------- transforms

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: bad output size");
  if (out_h == img.h && out_w == img.w) return img;
  Image out = Image::make(img.c, out_h, out_w);
  double sy = double(img.h) / out_h;
  double sx = double(img.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int ya = std::clamp(y0, 0, img.h - 1);
    int yb = std::clamp(y0 + 1, 0, img.h - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int xa = std::clamp(x0, 0, img.w - 1);
      int xb = std::clamp(x0 + 1, 0, img.w - 1);
      for (int c = 0; c < img.c; ++c) {
        double top = img.at(c, ya, xa) * (1 - wx) + img.at(c, ya, xb) * wx;
        double bot = img.at(c, yb, xa) * (1 - wx) + img.at(c, yb, xb) * wx;
        out.at(c, y, x) = float(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image rotate_bilinear(const Image& img, double degrees) {
  if (degrees == 0.0) return img;
  double rad = degrees * 3.14159265358979323846 / 180.0;
  double cs = std::cos(rad), sn = std::sin(rad);
  double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
  Image out = Image::make(img.c, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      // inverse map into the source
      double dy = y - cy, dx = x - cx;
      double sy = cs * dy + sn * dx + cy;
      double sx = -sn * dy + cs * dx + cx;
      int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
      double wy = sy - y0, wx = sx - x0;
      int ya = std::clamp(y0, 0, img.h - 1), yb = std::clamp(y0 + 1, 0, img.h - 1);
      int xa = std::clamp(x0, 0, img.w - 1), xb = std::clamp(x0 + 1, 0, img.w - 1);
      for (int c = 0; c < img.c; ++c) {
        double top = img.at(c, ya, xa) * (1 - wx) + img.at(c, ya, xb) * wx;
        double bot = img.at(c, yb, xa) * (1 - wx) + img.at(c, yb, xb) * wx;
        out.at(c, y, x) = float(top * (1 - wy) + bot * wy);
      }
    }
  return out;
}

Image crop(const Image& img, int y0, int x0, int ch, int cw) {
  if (y0 < 0 || x0 < 0 || ch <= 0 || cw <= 0 || y0 + ch > img.h || x0 + cw > img.w)
    throw std::invalid_argument("crop: window outside image");
  Image out = Image::make(img.c, ch, cw);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

Image hflip(const Image& img) {
  Image out = Image::make(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) out.at(c, y, x) = img.at(c, y, img.w - 1 - x);
  return out;
}

}  // namespace daclab
