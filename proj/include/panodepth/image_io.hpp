#pragma once

#include <string>
#include <string_view>

#include "panodepth/image.hpp"

namespace panodepth {

// In-memory codecs. Decoders throw ParseError carrying the failing byte offset.

// Binary "P6", maxval 255, 3 channels.
std::string encode_ppm(const Image8& img);
Image8 decode_ppm(std::string_view bytes);

// Binary "P5", maxval 255, 1 channel.
std::string encode_pgm(const Image8& img);
Image8 decode_pgm(std::string_view bytes);

// Grayscale "Pf" with scale -1.0 (little-endian float32), rows bottom-to-top.
std::string encode_pfm(const Image<float>& img);
Image<float> decode_pfm(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

// round(255 * clamp(c, 0, 1)) per channel.
Image8 quantize(const ColorImage& img);
ColorImage dequantize(const Image8& img);

void save_color(const std::string& path, const ColorImage& img);
ColorImage load_color(const std::string& path);
void save_depth(const std::string& path, const DepthMap& depth);
DepthMap load_depth(const std::string& path);
// Masks are stored as {0, 255}; in memory they are {0, 1}.
void save_mask(const std::string& path, const ValidityMask& mask);
ValidityMask load_mask(const std::string& path);

}  // namespace panodepth
