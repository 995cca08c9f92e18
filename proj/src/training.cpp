#include "spagan/training.hpp"

#include "spagan/checkpoint.hpp"
#include "spagan/image_io.hpp"
#include "spagan/text.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace spagan {

namespace fs = std::filesystem;

std::mt19937_64 samplingStream(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5a3bu};
    return std::mt19937_64(seq);
}

Direction parseDirection(const std::string& s) {
    if (s == "X2Y" || s == "x2y") return Direction::X2Y;
    if (s == "Y2X" || s == "y2x") return Direction::Y2X;
    throw ConfigError("unknown direction '" + s + "' (expected X2Y or Y2X)");
}

std::string_view directionName(Direction d) { return d == Direction::X2Y ? "X2Y" : "Y2X"; }

fs::path writeAttentionPanel(const fs::path& dir, long step, Direction direction, bool fake,
                             const Tensor<float>& image, const AttentionMap<float>& map) {
    fs::create_directories(dir);
    const fs::path path = dir / (std::to_string(step) + "_" + std::string(directionName(direction)) + "_" +
                                 (fake ? "fake" : "real") + "_attn.png");
    writePng(path, hconcat({tensorToImage(image), heatmapImage(map.values), tensorToImage(applyAttention(image, map))}));
    return path;
}

namespace {

fs::path checkpointPath(const fs::path& outDir, long step) {
    char name[40];
    std::snprintf(name, sizeof(name), "step_%08ld.ckpt", step);
    return outDir / "checkpoints" / name;
}

constexpr int kHistogramBins = 10;

std::string histogramHeader() {
    std::string h = "step,map,min,mean";
    for (int b = 0; b < kHistogramBins; ++b) h += ",bin" + std::to_string(b);
    return h;
}

// Distribution of map values over [0, 1] in equal bins; the last bin is closed.
std::string histogramRow(long step, const char* name, const AttentionMap<float>& map) {
    std::vector<long> counts(kHistogramBins, 0);
    for (Eigen::Index i = 0; i < map.values.size(); ++i) {
        const float v = std::clamp(map.values.data()[i], 0.0f, 1.0f);
        ++counts[static_cast<std::size_t>(std::min(kHistogramBins - 1, static_cast<int>(v * kHistogramBins)))];
    }
    std::string row = std::to_string(step) + "," + name + "," + formatDouble(map.values.minCoeff()) + "," +
                      formatDouble(map.values.mean());
    for (long c : counts) row += "," + std::to_string(c);
    return row;
}

} // namespace

FitResult fit(const TrainConfig& cfg, const DatasetPair& dataset, const fs::path& outDir) {
    cfg.validate();
    if (dataset.domainX.empty() || dataset.domainY.empty()) {
        throw DataError("fit: dataset has an empty domain");
    }
    if (dataset.imageSize != cfg.imageSize) {
        throw ConfigError("dataset image size " + std::to_string(dataset.imageSize) + " does not match image_size = " +
                          std::to_string(cfg.imageSize));
    }
    fs::create_directories(outDir / "checkpoints");
    const fs::path attentionDir = outDir / "attention";

    ModelSet<float> models = initialModels<float>(cfg);
    std::mt19937_64 rng = samplingStream(cfg.seed);
    ReplayPools<float> pools{ImagePool<float>(cfg.poolSize), ImagePool<float>(cfg.poolSize),
                             samplingStream(cfg.seed + 1)};

    FitResult result;
    result.lossCsv = outDir / "losses.csv";
    const fs::path partial = outDir / "losses.csv.partial";
    std::ofstream csv(partial, std::ios::trunc);
    if (!csv) {
        throw std::runtime_error("cannot write " + partial.string());
    }
    csv << LossRecord::csvHeader() << '\n';

    fs::path lastGood;
    for (long s = 1; s <= cfg.totalSteps; ++s) {
        const Batch batch = nextBatch(dataset, rng);
        StepArtifacts<float> art;
        try {
            art = trainStep(models, batch.x, batch.y, cfg, cfg.poolSize > 0 ? &pools : nullptr);
        } catch (const DivergenceError& e) {
            csv.close();
            fs::rename(partial, result.lossCsv);
            std::ofstream note(outDir / "divergence.txt", std::ios::trunc);
            note << e.what() << "\nterm = " << e.term() << "\nstep = " << e.step()
                 << "\nlast_good_checkpoint = " << (lastGood.empty() ? "none" : lastGood.string()) << '\n';
            throw;
        }
        csv << art.record.csvRow() << '\n';
        csv.flush();
        result.records.push_back(art.record);
        if (!csv) {
            throw std::runtime_error("write failure on " + partial.string());
        }
        if (cfg.checkpointEvery > 0 && s % cfg.checkpointEvery == 0) {
            lastGood = checkpointPath(outDir, s);
            saveCheckpoint(lastGood, models, cfg);
        }
        if (cfg.attentionDumpEvery > 0 && s % cfg.attentionDumpEvery == 0) {
            fs::create_directories(attentionDir);
            const fs::path histPath = attentionDir / "histogram.csv";
            const bool fresh = s == cfg.attentionDumpEvery;
            std::ofstream hist(histPath, fresh ? std::ios::trunc : std::ios::app);
            if (fresh) hist << histogramHeader() << '\n';
            hist << histogramRow(s, "real_x", art.mapX) << '\n' << histogramRow(s, "fake_y", art.mapFakeY) << '\n'
                 << histogramRow(s, "real_y", art.mapY) << '\n' << histogramRow(s, "fake_x", art.mapFakeX) << '\n';
            writeAttentionPanel(attentionDir, s, Direction::X2Y, false, batch.x, art.mapX);
            writeAttentionPanel(attentionDir, s, Direction::X2Y, true, art.fakeY, art.mapFakeY);
            writeAttentionPanel(attentionDir, s, Direction::Y2X, false, batch.y, art.mapY);
            writeAttentionPanel(attentionDir, s, Direction::Y2X, true, art.fakeX, art.mapFakeX);
        }
    }
    const fs::path finalPath = checkpointPath(outDir, cfg.totalSteps);
    if (lastGood != finalPath) {
        saveCheckpoint(finalPath, models, cfg);
    }
    csv.close();
    fs::rename(partial, result.lossCsv);
    result.finalCheckpoint = finalPath;
    return result;
}

Translation translate(ModelSet<float>& models, const TrainConfig& cfg, const std::vector<Tensor<float>>& images,
                      Direction direction, bool emitAttention) {
    const Discriminator<float>& disc = direction == Direction::X2Y ? models.DX : models.DY;
    const Generator<float>& gen = direction == Direction::X2Y ? models.G : models.F;
    Translation out;
    for (const auto& img : images) {
        if (img.channels != gen.spec().channels || img.height != gen.spec().imageSize ||
            img.width != gen.spec().imageSize) {
            throw ShapeError("translate: image " + img.shapeString() + " does not match checkpoint image size " +
                             std::to_string(gen.spec().imageSize));
        }
        Attended<float> attended = detail::attendFor(cfg, disc, img);
        out.images.push_back(gen.forward(attended.image).output);
        if (emitAttention) {
            out.maps.push_back(std::move(attended.map));
        }
    }
    return out;
}

Translation translate(const fs::path& checkpoint, const std::vector<Tensor<float>>& images, Direction direction,
                      bool emitAttention) {
    TrainConfig cfg;
    ModelSet<float> models = loadCheckpoint<float>(checkpoint, &cfg);
    return translate(models, cfg, images, direction, emitAttention);
}

} // namespace spagan
