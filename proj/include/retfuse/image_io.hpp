#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace retfuse {

/// 8-bit RGB raster, row-major, interleaved (height x width x 3).
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    bool empty() const { return width <= 0 || height <= 0; }
    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const RgbImage&) const = default;
};

/// Decodes PNG, JPEG or binary PPM (P6), detected from the file signature.
RgbImage read_image(const std::filesystem::path& path);

/// Lossless PNG output. Encoding is deterministic for identical pixels.
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace retfuse
