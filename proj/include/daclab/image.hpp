#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace daclab {

// Planar CHW float image, values in [0,1].
struct Image {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  float& at(int ch, int y, int x) { return data[(std::size_t(ch) * h + y) * w + x]; }
  float at(int ch, int y, int x) const { return data[(std::size_t(ch) * h + y) * w + x]; }

  static Image make(int c, int h, int w, float fill = 0.f) {
    return {c, h, w, std::vector<float>(std::size_t(c) * h * w, fill)};
  }
};

// Reads PNG (8-bit gray/RGB/RGBA, non-interlaced) or binary PPM (P6),
// dispatching on the file signature. Alpha is dropped; gray is replicated
// to three channels.
Image read_image(const std::string& path);

Image decode_ppm(const std::vector<std::uint8_t>& bytes);
Image decode_png(const std::vector<std::uint8_t>& bytes);

void write_ppm(const Image& img, const std::string& path);
void write_png(const Image& img, const std::string& path);

// Raw DEFLATE decompression (RFC 1951); used by the PNG reader and tested
// against the stored-block encoder.
std::vector<std::uint8_t> inflate(const std::uint8_t* data, std::size_t len);

Image resize_bilinear(const Image& img, int out_h, int out_w);

// Rotation about the image center, bilinear sampling, edge-clamped.
Image rotate_bilinear(const Image& img, double degrees);

Image crop(const Image& img, int y0, int x0, int ch, int cw);

Image hflip(const Image& img);

}  // namespace daclab
