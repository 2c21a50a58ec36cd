#include "dvlm/image_io.hpp"

#include <cctype>
#include <fstream>

#include "dvlm/errors.hpp"

namespace dvlm {

ImageTensor to_image_tensor(const RasterImage& raster) {
    ImageTensor img;
    img.height = raster.height;
    img.width = raster.width;
    img.pixels.resize(raster.rgb.size());
    for (size_t i = 0; i < raster.rgb.size(); ++i) {
        img.pixels[i] = static_cast<double>(raster.rgb[i]) / 255.0;
    }
    return img;
}

std::vector<uint8_t> encode_ppm(const RasterImage& raster) {
    std::string header = "P6\n" + std::to_string(raster.width) + " " + std::to_string(raster.height) +
                         "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), raster.rgb.begin(), raster.rgb.end());
    return out;
}

namespace {

size_t parse_ppm_int(const std::vector<uint8_t>& b, size_t& pos, const char* what) {
    // Skip whitespace and '#' comment lines.
    while (pos < b.size()) {
        if (std::isspace(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    size_t v = 0;
    bool any = false;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos] - '0');
        ++pos;
        any = true;
    }
    if (!any) throw IoError(std::string("ppm: missing ") + what);
    return v;
}

}  // namespace

RasterImage decode_ppm(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw IoError("ppm: not a P6 file");
    }
    size_t pos = 2;
    RasterImage img;
    img.width = parse_ppm_int(bytes, pos, "width");
    img.height = parse_ppm_int(bytes, pos, "height");
    size_t maxval = parse_ppm_int(bytes, pos, "maxval");
    if (maxval != 255) throw IoError("ppm: only maxval 255 supported, got " + std::to_string(maxval));
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError("ppm: malformed header");
    ++pos;  // single whitespace after maxval
    size_t need = img.width * img.height * 3;
    if (bytes.size() - pos < need) {
        throw IoError("ppm: truncated payload, need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size() - pos));
    }
    img.rgb.assign(bytes.begin() + pos, bytes.begin() + pos + need);
    return img;
}

void write_ppm_file(const std::string& path, const RasterImage& raster) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    auto bytes = encode_ppm(raster);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

RasterImage read_ppm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_ppm(bytes);
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
}  // namespace

std::string base64_encode(const std::vector<uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= bytes.size()) {
        uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back(kB64[v & 63]);
        i += 3;
    }
    size_t rem = bytes.size() - i;
    if (rem == 1) {
        uint32_t v = bytes[i] << 16;
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (rem == 2) {
        uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
    std::vector<uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || std::isspace(static_cast<unsigned char>(c))) continue;
        int v = b64_value(c);
        if (v < 0) throw IoError(std::string("base64: invalid character '") + c + "'");
        acc = (acc << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((acc >> bits) & 0xff));
        }
    }
    return out;
}

}  // namespace dvlm
