#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lore {

// RGB image with float channels in [-1, 1], row-major (y, x, rgb).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;

    float& at(int y, int x, int c) { return rgb[(y * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return rgb[(y * width + x) * 3 + c]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Binary PPM ("P6", maxval 255). Byte p maps to 2p/255 - 1; writing applies
// the exact inverse with round-half-up, so write(read(f)) == f for any file
// this tool produced.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

inline float byte_to_float(uint8_t p) { return 2.0f * float(p) / 255.0f - 1.0f; }
uint8_t float_to_byte(float v);

// Boolean pixel mask stored as a PPM: any nonzero byte marks the pixel.
std::vector<uint8_t> read_mask_ppm(const std::string& path, int expect_w, int expect_h);
void write_mask_ppm(const std::string& path, int w, int h, std::span<const uint8_t> mask);

}  // namespace lore
