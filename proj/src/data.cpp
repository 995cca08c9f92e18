#include "spagan/data.hpp"

#include "spagan/image_io.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <numbers>

namespace spagan {

namespace fs = std::filesystem;

namespace {

std::vector<Tensor<float>> collect(const std::vector<ImageRecord>& records) {
    std::vector<Tensor<float>> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back(r.pixels);
    }
    return out;
}

bool isImageFile(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<ImageRecord> loadDomain(const fs::path& dir, int imageSize, bool flip) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && isImageFile(entry.path())) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<ImageRecord> records;
    records.reserve(files.size());
    for (const auto& f : files) {
        RgbImage img;
        try {
            img = readImage(f);
        } catch (const ImageError& e) {
            throw DataError(std::string("undecodable image file ") + f.string() + ": " + e.what());
        }
        records.push_back({imageToTensor(img, imageSize), f.string(), flip});
    }
    return records;
}

void hsvToRgb(double h, double s, double v, double rgb[3]) {
    const double c = v * s;
    const double hp = std::fmod(h, 360.0) / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

// Shared backdrop: a muted grey with a low-contrast checker-like ripple.
Tensor<float> backgroundTexture(int size) {
    Tensor<float> bg(3, size, size);
    const double tint[3] = {0.02, 0.0, -0.02};
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double ripple = 0.12 * std::sin(2 * std::numbers::pi * y / 8.0) * std::cos(2 * std::numbers::pi * x / 8.0);
            for (int c = 0; c < 3; ++c) {
                bg(c, y, x) = static_cast<float>(-0.25 + ripple + tint[c]);
            }
        }
    }
    return bg;
}

enum class Shape { Circle, Square };

// Object area is drawn uniformly from [20%, 50%] of the image.
ImageRecord drawShape(Shape shape, int size, std::mt19937_64& rng, const Tensor<float>& background) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double area = (0.2 + 0.3 * unit(rng)) * size * size;
    double hue = 0;
    if (shape == Shape::Circle) {
        hue = 0.0 + 40.0 * unit(rng);
    } else {
        hue = 190.0 + 50.0 * unit(rng);
    }
    const double sat = 0.7 + 0.25 * unit(rng);
    const double val = 0.8 + 0.2 * unit(rng);
    double rgb[3];
    hsvToRgb(hue, sat, val, rgb);

    const double half = shape == Shape::Circle ? std::sqrt(area / std::numbers::pi) : 0.5 * std::sqrt(area);
    const double cy = half + (size - 2 * half) * unit(rng);
    const double cx = half + (size - 2 * half) * unit(rng);

    ImageRecord rec{background, shape == Shape::Circle ? "synthetic:circle" : "synthetic:square", false};
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dy = y + 0.5 - cy;
            const double dx = x + 0.5 - cx;
            const bool inside = shape == Shape::Circle ? dx * dx + dy * dy <= half * half
                                                       : std::abs(dx) <= half && std::abs(dy) <= half;
            if (inside) {
                for (int c = 0; c < 3; ++c) {
                    rec.pixels(c, y, x) = static_cast<float>(2.0 * rgb[c] - 1.0);
                }
            }
        }
    }
    return rec;
}

fs::path splitDir(const fs::path& root, Split split, bool domainX) {
    if (split == Split::Train) {
        return root / (domainX ? "trainA" : "trainB");
    }
    return root / (domainX ? "testA" : "testB");
}

} // namespace

std::vector<Tensor<float>> DatasetPair::imagesX() const { return collect(domainX); }
std::vector<Tensor<float>> DatasetPair::imagesY() const { return collect(domainY); }

bool hasSplit(const fs::path& root, Split split) {
    return fs::is_directory(splitDir(root, split, true)) && fs::is_directory(splitDir(root, split, false));
}

DatasetPair loadUnpairedDataset(const fs::path& root, int imageSize, bool flipAugment, Split split) {
    if (imageSize < 1) {
        throw DataError("imageSize must be positive");
    }
    const fs::path dirX = splitDir(root, split, true);
    const fs::path dirY = splitDir(root, split, false);
    for (const auto& dir : {dirX, dirY}) {
        if (!fs::is_directory(dir)) {
            throw DataError("missing directory " + dir.string() +
                            " (expected layout: root/{trainA,trainB,testA,testB}/*.{png,jpg})");
        }
    }
    DatasetPair data;
    data.imageSize = imageSize;
    data.channelCount = 3;
    data.domainX = loadDomain(dirX, imageSize, flipAugment);
    data.domainY = loadDomain(dirY, imageSize, flipAugment);
    if (data.domainX.empty() || data.domainY.empty()) {
        throw DataError("empty domain: " + (data.domainX.empty() ? dirX : dirY).string() + " contains no images");
    }
    return data;
}

DatasetPair synthShapes(int countPerDomain, int imageSize, std::uint64_t seed) {
    if (countPerDomain < 1) {
        throw DataError("synth_shapes: countPerDomain must be >= 1");
    }
    if (imageSize < 16) {
        throw DataError("synth_shapes: imageSize must be >= 16");
    }
    const Tensor<float> background = backgroundTexture(imageSize);
    std::seed_seq seqX{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0u};
    std::seed_seq seqY{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 1u};
    std::mt19937_64 rngX(seqX);
    std::mt19937_64 rngY(seqY);
    DatasetPair data;
    data.imageSize = imageSize;
    data.channelCount = 3;
    for (int i = 0; i < countPerDomain; ++i) {
        data.domainX.push_back(drawShape(Shape::Circle, imageSize, rngX, background));
        data.domainY.push_back(drawShape(Shape::Square, imageSize, rngY, background));
    }
    return data;
}

DatasetPair withFlipAugment(DatasetPair data, bool enabled) {
    for (auto* domain : {&data.domainX, &data.domainY}) {
        for (auto& r : *domain) {
            r.flipEligible = enabled;
        }
    }
    return data;
}

Batch nextBatch(const DatasetPair& dataset, std::mt19937_64& rng) {
    if (dataset.domainX.empty() || dataset.domainY.empty()) {
        throw DataError("next_batch: both domains must be non-empty");
    }
    Batch b;
    b.indexX = std::uniform_int_distribution<std::size_t>(0, dataset.domainX.size() - 1)(rng);
    b.indexY = std::uniform_int_distribution<std::size_t>(0, dataset.domainY.size() - 1)(rng);
    const ImageRecord& rx = dataset.domainX[b.indexX];
    const ImageRecord& ry = dataset.domainY[b.indexY];
    std::bernoulli_distribution coin(0.5);
    b.x = rx.flipEligible && coin(rng) ? flipHorizontal(rx.pixels) : rx.pixels;
    b.y = ry.flipEligible && coin(rng) ? flipHorizontal(ry.pixels) : ry.pixels;
    assert(b.x.data.minCoeff() >= -1.0f && b.x.data.maxCoeff() <= 1.0f);
    assert(b.y.data.minCoeff() >= -1.0f && b.y.data.maxCoeff() <= 1.0f);
    return b;
}

void exportDataset(const DatasetPair& train, const DatasetPair& test, const fs::path& root) {
    auto dump = [](const std::vector<ImageRecord>& records, const fs::path& dir) {
        fs::create_directories(dir);
        for (std::size_t i = 0; i < records.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "%04zu.png", i);
            writePng(dir / name, tensorToImage(records[i].pixels));
        }
    };
    dump(train.domainX, root / "trainA");
    dump(train.domainY, root / "trainB");
    dump(test.domainX, root / "testA");
    dump(test.domainY, root / "testB");
}

std::string datasetFingerprint(const DatasetPair& data) {
    // FNV-1a, 64 bit.
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    const std::int64_t header[4] = {data.imageSize, data.channelCount, static_cast<std::int64_t>(data.domainX.size()),
                                    static_cast<std::int64_t>(data.domainY.size())};
    mix(header, sizeof(header));
    for (const auto* domain : {&data.domainX, &data.domainY}) {
        for (const auto& r : *domain) {
            mix(r.pixels.data.data(), static_cast<std::size_t>(r.pixels.size()) * sizeof(float));
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

} // namespace spagan
