#pragma once

#include "spagan/attention.hpp"
#include "spagan/losses.hpp"
#include "spagan/networks.hpp"
#include "spagan/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace spagan {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every knob of a training run. Serialized as flat `key = value` text.
struct TrainConfig {
    std::string preset = "custom";
    bool attentionEnabled = true;
    AttentionMode attentionMode = AttentionMode::Sum;
    bool fmLossEnabled = true;
    TapLayer fmTapLayer = TapLayer::DEC1;
    LossWeights weights;
    double learningRate = 2e-4;
    double adamBeta1 = 0.5;
    double adamBeta2 = 0.999;
    long totalSteps = 1000;
    std::uint64_t seed = 0;
    long checkpointEvery = 500;
    long attentionDumpEvery = 500;

    UpsampleMethod attentionUpsample = UpsampleMethod::Nearest;
    FeatureNorm fmNormalization = FeatureNorm::PlaneSum;
    /// Re-attend the intermediate fakes before the reconstruction pass.
    bool attendCyclePath = false;
    /// Linear decay to zero over the second half of the run.
    bool lrLinearDecay = false;
    /// Generated-image history for discriminator updates; 0 disables it.
    int poolSize = 0;

    int imageSize = 32;
    int genBaseWidth = 8;
    int genResidualBlocks = 2;
    int discBaseWidth = 8;
    int discLayerCount = 2;

    void validate() const;

    GeneratorSpec generatorSpec() const;
    DiscriminatorSpec discriminatorSpec() const;
    AdamConfig adamConfig() const;

    /// Learning rate used for the update that follows `completedSteps` steps.
    double learningRateAt(long completedSteps) const;

    std::map<std::string, std::string> toKeyValues() const;
    std::string toText() const;
};

/// Applies `key = value` lines (comments with '#') on top of `base`.
/// Unknown keys are rejected by name. A `preset` key resets to that preset first.
TrainConfig parseConfig(const std::string& text, const TrainConfig& base = {});
TrainConfig loadConfigFile(const std::filesystem::path& path, const TrainConfig& base = {});
void applyConfigValue(TrainConfig& cfg, const std::string& key, const std::string& value);

/// The ablation rows, in table order.
const std::vector<std::string>& ablationPresetNames();

/// Configuration of one ablation row; throws listing the valid names.
TrainConfig ablationPreset(const std::string& name, const TrainConfig& base = {});

} // namespace spagan
