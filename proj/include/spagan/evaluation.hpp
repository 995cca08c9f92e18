#pragma once

#include "spagan/metrics.hpp"
#include "spagan/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spagan {

/// Writes `content` to a sibling temp file and renames it over `path`.
void writeFileAtomic(const std::filesystem::path& path, const std::string& content);

struct EvalOptions {
    KidMode mode = KidMode::SourceAndTarget;
    int subsetSize = kDefaultKidSubset;
    int repetitions = kDefaultKidRepetitions;
    std::uint64_t seed = 0;
};

struct DirectionEvaluation {
    Direction direction = Direction::X2Y;
    /// "identity" when the model translates without attention, otherwise SUM or MAX.
    std::string attention;
    KidReport targetOnly;
    std::optional<KidReport> sourceAndTarget;
    /// KID of the untranslated sources against the real targets.
    KidReport untranslated;
    double accuracy = 0;
};

struct EvaluationReport {
    std::vector<DirectionEvaluation> rows;
    std::string extractorId;
    KidMode mode = KidMode::SourceAndTarget;

    std::string csv() const;
    std::string text() const;
};

/// Translates the test split both ways and scores it with `classifier`
/// (features for KID, predictions for accuracy).
EvaluationReport evaluateTranslation(ModelSet<float>& models, const TrainConfig& cfg, const DatasetPair& test,
                                     const DomainClassifier& classifier, const EvalOptions& options);

/// Classifier config used by the evaluate and ablate commands.
ClassifierConfig defaultClassifierConfig(std::uint64_t seed);

struct AblationRow {
    std::string preset;
    std::string status = "ok";
    double kidMean = 0;
    double kidStd = 0;
    double accuracy = 0;
    double meanTotalGen = 0;
    std::string datasetFingerprint;
    std::filesystem::path lossCsv;
};

/// Trains every ablation preset on `train` under one seed (each in
/// outDir/<preset>/), evaluates X2Y target-only KID and accuracy on `test`,
/// and writes outDir/ablation.csv. A failing preset is marked, not fatal.
std::vector<AblationRow> runAblation(const TrainConfig& base, const DatasetPair& train, const DatasetPair& test,
                                     const std::filesystem::path& outDir);

std::string ablationCsv(const std::vector<AblationRow>& rows);

/// L1 distance between two loss traces: every loss column, common step prefix.
double lossTraceDistance(const std::vector<LossRecord>& a, const std::vector<LossRecord>& b);

} // namespace spagan
