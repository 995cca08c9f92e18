#include "spagan/evaluation.hpp"

#include "spagan/checkpoint.hpp"
#include "spagan/text.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace spagan {

namespace fs = std::filesystem;

void writeFileAtomic(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << content;
        if (!out) {
            throw std::runtime_error("cannot write " + path.string());
        }
    }
    fs::rename(tmp, path);
}

ClassifierConfig defaultClassifierConfig(std::uint64_t seed) {
    ClassifierConfig c;
    c.seed = seed;
    return c;
}

EvaluationReport evaluateTranslation(ModelSet<float>& models, const TrainConfig& cfg, const DatasetPair& test,
                                     const DomainClassifier& classifier, const EvalOptions& options) {
    if (test.domainX.size() < 2 || test.domainY.size() < 2) {
        throw MetricError("evaluation needs at least 2 test images per domain");
    }
    std::mt19937_64 rng(options.seed);
    EvaluationReport report;
    report.extractorId = classifier.id();
    report.mode = options.mode;
    const std::vector<Tensor<float>> xs = test.imagesX();
    const std::vector<Tensor<float>> ys = test.imagesY();
    const FeatureSet realX = extractFeatures(xs, classifier);
    const FeatureSet realY = extractFeatures(ys, classifier);
    for (Direction dir : {Direction::X2Y, Direction::Y2X}) {
        const bool forward = dir == Direction::X2Y;
        const auto& sources = forward ? xs : ys;
        const FeatureSet& realSources = forward ? realX : realY;
        const FeatureSet& realTargets = forward ? realY : realX;
        const Translation t = translate(models, cfg, sources, dir, false);
        const FeatureSet fakes = extractFeatures(t.images, classifier);
        const int subsetSize = std::min({options.subsetSize, fakes.count(), realTargets.count(), realSources.count()});

        DirectionEvaluation row;
        row.direction = dir;
        row.attention = cfg.attentionEnabled ? std::string(modeName(cfg.attentionMode)) : "identity";
        row.targetOnly = kidReportForTranslation(fakes, realTargets, realSources, KidMode::TargetOnly, subsetSize,
                                                 options.repetitions, rng);
        if (options.mode == KidMode::SourceAndTarget) {
            row.sourceAndTarget = kidReportForTranslation(fakes, realTargets, realSources, KidMode::SourceAndTarget,
                                                          subsetSize, options.repetitions, rng);
        }
        row.untranslated = kid(realSources, realTargets, subsetSize, options.repetitions, rng);
        row.accuracy = classifierAccuracy(t.images, std::vector<int>(t.images.size(), forward ? 1 : 0), classifier);
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string EvaluationReport::csv() const {
    std::string out = "direction,attention,kid_target_only_mean,kid_target_only_std,";
    if (mode == KidMode::SourceAndTarget) {
        out += "kid_source_target_mean,kid_source_target_std,";
    }
    out += "kid_untranslated_mean,kid_untranslated_std,accuracy,subset_size,repetitions,extractor\n";
    for (const auto& r : rows) {
        out += std::string(directionName(r.direction)) + "," + r.attention + "," + formatDouble(r.targetOnly.mean) +
               "," + formatDouble(r.targetOnly.std) + ",";
        if (mode == KidMode::SourceAndTarget) {
            out += formatDouble(r.sourceAndTarget->mean) + "," + formatDouble(r.sourceAndTarget->std) + ",";
        }
        out += formatDouble(r.untranslated.mean) + "," + formatDouble(r.untranslated.std) + "," +
               formatDouble(r.accuracy) + "," + std::to_string(r.targetOnly.subsetSize) + "," +
               std::to_string(r.targetOnly.repetitions) + "," + extractorId + "\n";
    }
    return out;
}

std::string EvaluationReport::text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "KID x 100 +- std x 100 (extractor " << extractorId << ")\n";
    for (const auto& r : rows) {
        os << directionName(r.direction) << " [attention " << r.attention << "]\n";
        os << "  target only      : " << r.targetOnly.mean << " +- " << r.targetOnly.std << "\n";
        if (r.sourceAndTarget) {
            os << "  source + target  : " << r.sourceAndTarget->mean << " +- " << r.sourceAndTarget->std << "\n";
        }
        os << "  untranslated     : " << r.untranslated.mean << " +- " << r.untranslated.std << "\n";
        os << "  top-1 accuracy   : " << 100.0 * r.accuracy << " %\n";
    }
    return os.str();
}

double lossTraceDistance(const std::vector<LossRecord>& a, const std::vector<LossRecord>& b) {
    const std::size_t n = std::min(a.size(), b.size());
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total += std::abs(a[i].dLossX - b[i].dLossX) + std::abs(a[i].dLossY - b[i].dLossY) +
                 std::abs(a[i].gAdvLoss - b[i].gAdvLoss) + std::abs(a[i].fAdvLoss - b[i].fAdvLoss) +
                 std::abs(a[i].cycLoss - b[i].cycLoss) + std::abs(a[i].fmLoss - b[i].fmLoss) +
                 std::abs(a[i].totalGen - b[i].totalGen);
    }
    return total;
}

std::string ablationCsv(const std::vector<AblationRow>& rows) {
    std::string out = "preset,status,kid_mean,kid_std,accuracy,mean_total_gen,trace_l1_vs_cyclegan,dataset_fingerprint\n";
    std::vector<LossRecord> reference;
    for (const auto& r : rows) {
        if (r.preset == "CycleGAN" && r.status == "ok") {
            reference = readLossCsv(r.lossCsv.string());
        }
    }
    for (const auto& r : rows) {
        std::string trace = "nan";
        if (r.status == "ok" && !reference.empty()) {
            trace = formatDouble(lossTraceDistance(readLossCsv(r.lossCsv.string()), reference));
        }
        out += r.preset + "," + r.status + "," + formatDouble(r.kidMean) + "," + formatDouble(r.kidStd) + "," +
               formatDouble(r.accuracy) + "," + formatDouble(r.meanTotalGen) + "," + trace + "," +
               r.datasetFingerprint + "\n";
    }
    return out;
}

std::vector<AblationRow> runAblation(const TrainConfig& base, const DatasetPair& train, const DatasetPair& test,
                                     const fs::path& outDir) {
    fs::create_directories(outDir);
    const std::string fingerprint = datasetFingerprint(train);
    DomainClassifier classifier(train.imageSize, defaultClassifierConfig(base.seed));
    classifier.train(train);

    std::vector<AblationRow> rows;
    for (const auto& name : ablationPresetNames()) {
        AblationRow row;
        row.preset = name;
        row.datasetFingerprint = fingerprint;
        try {
            const TrainConfig cfg = ablationPreset(name, base);
            const FitResult result = fit(cfg, train, outDir / name);
            row.lossCsv = result.lossCsv;
            double total = 0;
            for (const auto& r : result.records) {
                total += r.totalGen;
            }
            row.meanTotalGen = total / static_cast<double>(result.records.size());
            TrainConfig stored;
            ModelSet<float> models = loadCheckpoint<float>(result.finalCheckpoint, &stored);
            EvalOptions options;
            options.mode = KidMode::TargetOnly;
            options.seed = base.seed;
            const EvaluationReport report = evaluateTranslation(models, stored, test, classifier, options);
            row.kidMean = report.rows[0].targetOnly.mean;
            row.kidStd = report.rows[0].targetOnly.std;
            row.accuracy = report.rows[0].accuracy;
        } catch (const std::exception& e) {
            row.status = std::string("failed: ") + e.what();
            std::replace(row.status.begin(), row.status.end(), ',', ';');
            std::replace(row.status.begin(), row.status.end(), '\n', ' ');
        }
        rows.push_back(std::move(row));
    }
    writeFileAtomic(outDir / "ablation.csv", ablationCsv(rows));

    std::vector<const AblationRow*> ok;
    for (const auto& r : rows) {
        if (r.status == "ok") {
            ok.push_back(&r);
        }
    }
    std::sort(ok.begin(), ok.end(), [](const AblationRow* a, const AblationRow* b) { return a->kidMean < b->kidMean; });
    std::string ordering = "X2Y target-only KID ordering (lowest first):\n";
    for (const auto* r : ok) {
        ordering += "  " + r->preset + "  " + formatDouble(r->kidMean) + "\n";
    }
    writeFileAtomic(outDir / "ablation.txt", ordering);
    return rows;
}

} // namespace spagan
