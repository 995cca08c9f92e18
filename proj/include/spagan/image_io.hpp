#pragma once

#include "spagan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace spagan {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit interleaved RGB raster.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Decodes a PNG or JPEG file (detected by signature); grayscale is expanded to RGB.
RgbImage readImage(const std::filesystem::path& path);

/// Writes via a temporary file and rename.
void writePng(const std::filesystem::path& path, const RgbImage& image);

/// [0, 255] -> [-1, 1] after a bilinear resize to size x size.
Tensor<float> imageToTensor(const RgbImage& image, int size);

/// [-1, 1] -> [0, 255], rounding and clamping. Single-channel tensors become gray.
RgbImage tensorToImage(const Tensor<float>& t);

/// Bilinear resize with half-pixel centres.
Tensor<float> resizeBilinear(const Tensor<float>& t, int height, int width);

inline float pixelToUnit(double pixel) { return static_cast<float>(pixel / 127.5 - 1.0); }

/// Colour-mapped rendering of a [0, 1] map (blue -> red).
RgbImage heatmapImage(const Grid<float>& values);

/// Places images side by side with a one-pixel separator.
RgbImage hconcat(const std::vector<RgbImage>& images);

} // namespace spagan
