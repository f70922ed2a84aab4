#include "lore/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lore/tensor_io.hpp"

namespace lore {

namespace {

// Reads one whitespace-delimited PPM header token, skipping '#' comments.
std::string header_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw io_error("malformed PPM header: unexpected end of file");
    return tok;
}

int header_int(std::istream& is, const char* what) {
    const std::string tok = header_token(is);
    try {
        size_t pos = 0;
        const int v = std::stoi(tok, &pos);
        if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw io_error(std::string("malformed PPM header field ") + what + ": '" + tok + "'");
    }
}

}  // namespace

uint8_t float_to_byte(float v) {
    const float p = (v + 1.0f) * 255.0f / 2.0f;
    const float r = std::floor(p + 0.5f);  // round half up
    return static_cast<uint8_t>(std::clamp(r, 0.0f, 255.0f));
}

Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open image: " + path);
    if (header_token(is) != "P6") throw io_error("not a binary PPM (P6): " + path);
    Image img;
    img.width = header_int(is, "width");
    img.height = header_int(is, "height");
    const int maxval = header_int(is, "maxval");
    if (maxval != 255) throw io_error("unsupported PPM maxval (want 255): " + path);
    // single whitespace byte separates header from payload; header_int already
    // consumed it as the token delimiter
    std::vector<uint8_t> bytes(img.pixel_count() * 3);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!is) throw io_error("truncated PPM payload: " + path);
    img.rgb.resize(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = byte_to_float(bytes[i]);
    return img;
}

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open image for write: " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> bytes(img.rgb.size());
    for (size_t i = 0; i < img.rgb.size(); ++i) bytes[i] = float_to_byte(img.rgb[i]);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw io_error("image write failed: " + path);
}

std::vector<uint8_t> read_mask_ppm(const std::string& path, int expect_w, int expect_h) {
    const Image img = read_ppm(path);
    if (img.width != expect_w || img.height != expect_h)
        throw io_error("mask has wrong dimensions: " + path);
    std::vector<uint8_t> mask(img.pixel_count(), 0);
    for (size_t i = 0; i < mask.size(); ++i) {
        const bool on = float_to_byte(img.rgb[3 * i]) != 0 ||
                        float_to_byte(img.rgb[3 * i + 1]) != 0 ||
                        float_to_byte(img.rgb[3 * i + 2]) != 0;
        mask[i] = on ? 1 : 0;
    }
    return mask;
}

void write_mask_ppm(const std::string& path, int w, int h, std::span<const uint8_t> mask) {
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.assign(static_cast<size_t>(w) * h * 3, -1.0f);
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) img.rgb[3 * i] = img.rgb[3 * i + 1] = img.rgb[3 * i + 2] = 1.0f;
    write_ppm(path, img);
}

}  // namespace lore
