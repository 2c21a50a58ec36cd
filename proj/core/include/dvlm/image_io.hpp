#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvlm/vision.hpp"

namespace dvlm {

// 8-bit RGB raster, the exact-byte form used for rendering and PPM I/O.
struct RasterImage {
    size_t width = 0;
    size_t height = 0;
    std::vector<uint8_t> rgb;  // height * width * 3

    uint8_t& at(size_t y, size_t x, size_t c) { return rgb[(y * width + x) * 3 + c]; }
    uint8_t at(size_t y, size_t x, size_t c) const { return rgb[(y * width + x) * 3 + c]; }
};

ImageTensor to_image_tensor(const RasterImage& raster);

std::vector<uint8_t> encode_ppm(const RasterImage& raster);
RasterImage decode_ppm(const std::vector<uint8_t>& bytes);

void write_ppm_file(const std::string& path, const RasterImage& raster);
RasterImage read_ppm_file(const std::string& path);

std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(const std::string& text);

}  // namespace dvlm
