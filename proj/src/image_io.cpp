#include "spagan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <csetjmp>
#include <fstream>
#include <tuple>

#include <jpeglib.h>

namespace spagan {

namespace {

bool hasPrefix(const std::vector<unsigned char>& head, std::initializer_list<unsigned char> sig) {
    if (head.size() < sig.size()) {
        return false;
    }
    std::size_t i = 0;
    for (unsigned char b : sig) {
        if (head[i++] != b) {
            return false;
        }
    }
    return true;
}

RgbImage readPng(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
        throw ImageError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    RgbImage out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr) == 0) {
        std::string message = image.message;
        png_image_free(&image);
        throw ImageError("cannot decode PNG " + path.string() + ": " + message);
    }
    return out;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpegErrorExit(j_common_ptr info) {
    auto* mgr = reinterpret_cast<JpegErrorManager*>(info->err);
    std::longjmp(mgr->jump, 1);
}

RgbImage readJpeg(const std::filesystem::path& path) {
    std::FILE* file = std::fopen(path.c_str(), "rb");
    if (file == nullptr) {
        throw ImageError("cannot open " + path.string());
    }
    jpeg_decompress_struct info{};
    JpegErrorManager err{};
    info.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpegErrorExit;
    RgbImage out;
    if (setjmp(err.jump) != 0) {
        jpeg_destroy_decompress(&info);
        std::fclose(file);
        throw ImageError("cannot decode JPEG " + path.string());
    }
    jpeg_create_decompress(&info);
    jpeg_stdio_src(&info, file);
    jpeg_read_header(&info, TRUE);
    info.out_color_space = JCS_RGB;
    jpeg_start_decompress(&info);
    out.width = static_cast<int>(info.output_width);
    out.height = static_cast<int>(info.output_height);
    out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    while (info.output_scanline < info.output_height) {
        JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(info.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&info, &row, 1);
    }
    jpeg_finish_decompress(&info);
    jpeg_destroy_decompress(&info);
    std::fclose(file);
    return out;
}

} // namespace

RgbImage readImage(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ImageError("cannot open image " + path.string());
    }
    std::vector<unsigned char> head(8, 0);
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    if (hasPrefix(head, {0x89, 'P', 'N', 'G'})) {
        return readPng(path);
    }
    if (hasPrefix(head, {0xFF, 0xD8, 0xFF})) {
        return readJpeg(path);
    }
    throw ImageError("unrecognized image format: " + path.string());
}

void writePng(const std::filesystem::path& path, const RgbImage& image) {
    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(image.width);
    out.height = static_cast<png_uint_32>(image.height);
    out.format = PNG_FORMAT_RGB;
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    if (png_image_write_to_file(&out, tmp.c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
        throw ImageError("cannot write PNG " + path.string() + ": " + out.message);
    }
    std::filesystem::rename(tmp, path);
}

Tensor<float> resizeBilinear(const Tensor<float>& t, int height, int width) {
    if (t.height == height && t.width == width) {
        return t;
    }
    Tensor<float> out(t.channels, height, width);
    auto source = [](int dst, int in, int outSize) {
        const double s = (dst + 0.5) * in / outSize - 0.5;
        const double clamped = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const int lo = static_cast<int>(clamped);
        return std::tuple<int, int, float>{lo, std::min(lo + 1, in - 1), static_cast<float>(clamped - lo)};
    };
    for (int y = 0; y < height; ++y) {
        const auto [y0, y1, fy] = source(y, t.height, height);
        for (int x = 0; x < width; ++x) {
            const auto [x0, x1, fx] = source(x, t.width, width);
            for (int c = 0; c < t.channels; ++c) {
                const float top = (1 - fx) * t(c, y0, x0) + fx * t(c, y0, x1);
                const float bottom = (1 - fx) * t(c, y1, x0) + fx * t(c, y1, x1);
                out(c, y, x) = (1 - fy) * top + fy * bottom;
            }
        }
    }
    return out;
}

Tensor<float> imageToTensor(const RgbImage& image, int size) {
    Tensor<float> t(3, image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                t(c, y, x) = pixelToUnit(image.at(y, x, c));
            }
        }
    }
    Tensor<float> resized = resizeBilinear(t, size, size);
    resized.data = resized.data.cwiseMax(-1.0f).cwiseMin(1.0f);
    return resized;
}

RgbImage tensorToImage(const Tensor<float>& t) {
    if (t.channels != 1 && t.channels != 3) {
        throw ImageError("only 1- or 3-channel tensors can be rendered");
    }
    RgbImage out{t.width, t.height, std::vector<std::uint8_t>(static_cast<std::size_t>(t.width) * t.height * 3)};
    for (int y = 0; y < t.height; ++y) {
        for (int x = 0; x < t.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = t(t.channels == 1 ? 0 : c, y, x);
                const double pixel = std::clamp((static_cast<double>(v) + 1.0) * 127.5, 0.0, 255.0);
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(pixel));
            }
        }
    }
    return out;
}

RgbImage heatmapImage(const Grid<float>& values) {
    const int h = static_cast<int>(values.rows());
    const int w = static_cast<int>(values.cols());
    RgbImage out{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = std::clamp(static_cast<double>(values(y, x)), 0.0, 1.0);
            // Piecewise-linear jet: blue, cyan, yellow, red.
            const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
            const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
            const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
            out.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(255 * r));
            out.at(y, x, 1) = static_cast<std::uint8_t>(std::lround(255 * g));
            out.at(y, x, 2) = static_cast<std::uint8_t>(std::lround(255 * b));
        }
    }
    return out;
}

RgbImage hconcat(const std::vector<RgbImage>& images) {
    int width = 0;
    int height = 0;
    for (const auto& img : images) {
        width += img.width;
        height = std::max(height, img.height);
    }
    width += static_cast<int>(images.empty() ? 0 : images.size() - 1);
    RgbImage out{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3, 255)};
    int offset = 0;
    for (const auto& img : images) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                for (int c = 0; c < 3; ++c) {
                    out.at(y, offset + x, c) = img.at(y, x, c);
                }
            }
        }
        offset += img.width + 1;
    }
    return out;
}

} // namespace spagan
