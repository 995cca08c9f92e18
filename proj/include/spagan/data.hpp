#pragma once

#include "spagan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace spagan {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ImageRecord {
    Tensor<float> pixels;
    std::string source;
    bool flipEligible = false;
};

/// Two unpaired image collections: X (source) and Y (target).
struct DatasetPair {
    std::vector<ImageRecord> domainX;
    std::vector<ImageRecord> domainY;
    int imageSize = 0;
    int channelCount = 3;

    std::vector<Tensor<float>> imagesX() const;
    std::vector<Tensor<float>> imagesY() const;
};

enum class Split { Train, Test };

/// Reads root/{trainA,trainB} (or testA/testB) PNG/JPEG files in sorted
/// filename order, resized bilinearly to imageSize and mapped to [-1, 1].
DatasetPair loadUnpairedDataset(const std::filesystem::path& root, int imageSize, bool flipAugment,
                                Split split = Split::Train);

bool hasSplit(const std::filesystem::path& root, Split split);

/// Toy two-domain task: X holds one filled circle in a warm hue, Y one filled
/// square in a cool hue, both over the same fixed background texture.
DatasetPair synthShapes(int countPerDomain, int imageSize, std::uint64_t seed);

/// Seed used for the held-out synthetic split that pairs with `seed`.
inline std::uint64_t syntheticTestSeed(std::uint64_t seed) { return seed + 1000003u; }

DatasetPair withFlipAugment(DatasetPair data, bool enabled);

struct Batch {
    Tensor<float> x;
    Tensor<float> y;
    std::size_t indexX = 0;
    std::size_t indexY = 0;
};

/// One uniformly drawn image per domain; eligible records are mirrored with
/// probability 1/2.
Batch nextBatch(const DatasetPair& dataset, std::mt19937_64& rng);

/// Writes root/{trainA,trainB,testA,testB}/NNNN.png.
void exportDataset(const DatasetPair& train, const DatasetPair& test, const std::filesystem::path& root);

/// Hex content hash over geometry and pixel values.
std::string datasetFingerprint(const DatasetPair& data);

} // namespace spagan
