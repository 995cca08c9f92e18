// Command-line front end: train, translate, evaluate, ablate, dump-attention, synth-export.

#include "spagan/checkpoint.hpp"
#include "spagan/evaluation.hpp"
#include "spagan/image_io.hpp"
#include "spagan/manifest.hpp"
#include "spagan/text.hpp"
#include "spagan/training.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace spagan;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitDivergence = 3;

struct GlobalOptions {
    std::optional<std::uint64_t> seed;
    std::string configPath;
    std::string outDir = "spagan_out";
    bool synthetic = false;
    std::string preset;
    std::optional<long> steps;
    bool deterministic = false;
    int syntheticCount = 200;
    int syntheticTestCount = 200;
    std::string dataRoot;
};

void configureThreads(const GlobalOptions& g) {
    int threads = 0;
    if (const char* env = std::getenv("SPAGAN_NUM_THREADS")) {
        threads = static_cast<int>(parseLong(env));
        if (threads < 1) {
            throw ConfigError("SPAGAN_NUM_THREADS must be >= 1");
        }
    }
    if (g.deterministic) {
        threads = 1;
    }
    if (threads > 0) {
        Eigen::setNbThreads(threads);
    }
}

TrainConfig resolveConfig(const GlobalOptions& g) {
    TrainConfig cfg;
    if (!g.configPath.empty()) {
        cfg = loadConfigFile(g.configPath);
    }
    if (!g.preset.empty()) {
        cfg = ablationPreset(g.preset, cfg);
    }
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    if (g.steps) {
        cfg.totalSteps = *g.steps;
    }
    cfg.validate();
    return cfg;
}

DatasetPair loadSplit(const GlobalOptions& g, int imageSize, std::uint64_t seed, Split split) {
    if (g.synthetic) {
        return split == Split::Train ? withFlipAugment(synthShapes(g.syntheticCount, imageSize, seed), true)
                                     : synthShapes(g.syntheticTestCount, imageSize, syntheticTestSeed(seed));
    }
    if (g.dataRoot.empty()) {
        throw DataError("no data source: pass --data <root> or --synthetic");
    }
    if (!hasSplit(g.dataRoot, split)) {
        throw DataError(std::string("missing ") + (split == Split::Train ? "train" : "test") + " split under " +
                        g.dataRoot);
    }
    return loadUnpairedDataset(g.dataRoot, imageSize, split == Split::Train, split);
}

RunManifest startManifest(const std::string& command, const fs::path& out, const TrainConfig& cfg,
                          const std::string& fingerprint, bool deterministic) {
    RunManifest m;
    m.command = command;
    m.configSnapshot = cfg;
    m.datasetFingerprint = fingerprint;
    m.startedAt = utcTimestamp();
    m.deterministic = deterministic;
    writeManifest(out, m);
    return m;
}

std::vector<Tensor<float>> sourceImages(const DatasetPair& data, Direction dir) {
    return dir == Direction::X2Y ? data.imagesX() : data.imagesY();
}

std::string indexName(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    return buf;
}

int cmdTrain(const GlobalOptions& g) {
    const TrainConfig cfg = resolveConfig(g);
    const DatasetPair data = loadSplit(g, cfg.imageSize, cfg.seed, Split::Train);
    const fs::path out = g.outDir;
    RunManifest manifest = startManifest("train", out, cfg, datasetFingerprint(data), g.deterministic);
    try {
        const FitResult r = fit(cfg, data, out);
        finalizeManifest(out, manifest, "completed");
        std::cout << "trained " << r.records.size() << " steps; final checkpoint " << r.finalCheckpoint.string()
                  << "\n";
        return 0;
    } catch (const DivergenceError& e) {
        finalizeManifest(out, manifest, "diverged");
        std::cerr << "error: training diverged: " << e.what() << " (see " << (out / "divergence.txt").string()
                  << ")\n";
        return kExitDivergence;
    } catch (...) {
        finalizeManifest(out, manifest, "failed");
        throw;
    }
}

int cmdTranslate(const GlobalOptions& g, const std::string& checkpoint, const std::string& direction,
                 const std::string& inputDir, bool withAttention) {
    TrainConfig cfg;
    ModelSet<float> models = loadCheckpoint<float>(checkpoint, &cfg);
    const Direction dir = parseDirection(direction);
    std::vector<Tensor<float>> images;
    std::vector<std::string> names;
    if (!inputDir.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(inputDir)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            images.push_back(imageToTensor(readImage(f), cfg.imageSize));
            names.push_back(f.stem().string());
        }
        if (images.empty()) {
            throw DataError("no images in " + inputDir);
        }
    } else {
        const DatasetPair test = loadSplit(g, cfg.imageSize, cfg.seed, Split::Test);
        images = sourceImages(test, dir);
        for (std::size_t i = 0; i < images.size(); ++i) names.push_back(indexName(i));
    }
    const fs::path out = g.outDir;
    fs::create_directories(out);
    const Translation t = translate(models, cfg, images, dir, withAttention);
    for (std::size_t i = 0; i < t.images.size(); ++i) {
        writePng(out / (names[i] + "_" + std::string(directionName(dir)) + ".png"), tensorToImage(t.images[i]));
        if (withAttention) {
            writePng(out / (names[i] + "_" + std::string(directionName(dir)) + "_attn.png"),
                     heatmapImage(t.maps[i].values));
        }
    }
    RunManifest m = startManifest("translate", out, cfg, "", g.deterministic);
    finalizeManifest(out, m, "completed");
    std::cout << "translated " << t.images.size() << " images into " << out.string() << "\n";
    return 0;
}

int cmdEvaluate(const GlobalOptions& g, const std::string& checkpoint, const std::string& mode) {
    EvalOptions options;
    if (mode == "target-only") {
        options.mode = KidMode::TargetOnly;
    } else if (mode == "source-and-target" || mode == "both") {
        options.mode = KidMode::SourceAndTarget;
    } else {
        throw ConfigError("unknown --mode '" + mode + "' (expected target-only or source-and-target)");
    }
    TrainConfig cfg;
    ModelSet<float> models = loadCheckpoint<float>(checkpoint, &cfg);
    const std::uint64_t dataSeed = g.seed.value_or(cfg.seed);
    options.seed = dataSeed;
    const DatasetPair test = loadSplit(g, cfg.imageSize, dataSeed, Split::Test);
    const DatasetPair train = loadSplit(g, cfg.imageSize, dataSeed, Split::Train);
    DomainClassifier classifier(cfg.imageSize, defaultClassifierConfig(dataSeed));
    classifier.train(train);
    const EvaluationReport report = evaluateTranslation(models, cfg, test, classifier, options);

    const fs::path out = g.outDir;
    RunManifest m = startManifest("evaluate", out, cfg, datasetFingerprint(test), g.deterministic);
    writeFileAtomic(out / "evaluation.csv", report.csv());
    writeFileAtomic(out / "evaluation.txt", report.text());
    finalizeManifest(out, m, "completed");
    std::cout << report.text();
    return 0;
}

int cmdAblate(const GlobalOptions& g) {
    const TrainConfig base = resolveConfig(g);
    const DatasetPair train = loadSplit(g, base.imageSize, base.seed, Split::Train);
    const DatasetPair test = loadSplit(g, base.imageSize, base.seed, Split::Test);
    const fs::path out = g.outDir;
    RunManifest m = startManifest("ablate", out, base, datasetFingerprint(train), g.deterministic);
    const auto rows = runAblation(base, train, test, out);
    finalizeManifest(out, m, "completed");
    std::cout << ablationCsv(rows);
    return 0;
}

int cmdDumpAttention(const GlobalOptions& g, const std::string& checkpoint, int limit) {
    TrainConfig cfg;
    ModelSet<float> models = loadCheckpoint<float>(checkpoint, &cfg);
    const DatasetPair test = loadSplit(g, cfg.imageSize, g.seed.value_or(cfg.seed), Split::Test);
    const fs::path out = g.outDir;
    fs::create_directories(out);
    int written = 0;
    for (Direction dir : {Direction::X2Y, Direction::Y2X}) {
        std::vector<Tensor<float>> images = sourceImages(test, dir);
        if (limit > 0 && static_cast<int>(images.size()) > limit) {
            images.resize(static_cast<std::size_t>(limit));
        }
        const Translation t = translate(models, cfg, images, dir, true);
        const Discriminator<float>& targetDisc = dir == Direction::X2Y ? models.DY : models.DX;
        for (std::size_t i = 0; i < images.size(); ++i) {
            const fs::path sub = out / indexName(i);
            writeAttentionPanel(sub, models.step, dir, false, images[i], t.maps[i]);
            const Attended<float> fake = detail::attendFor(cfg, targetDisc, t.images[i]);
            writeAttentionPanel(sub, models.step, dir, true, t.images[i], fake.map);
            written += 2;
        }
    }
    RunManifest m = startManifest("dump-attention", out, cfg, datasetFingerprint(test), g.deterministic);
    finalizeManifest(out, m, "completed");
    std::cout << "wrote " << written << " attention panels into " << out.string() << "\n";
    return 0;
}

int cmdSynthExport(const GlobalOptions& g, int size) {
    const std::uint64_t seed = g.seed.value_or(0);
    const DatasetPair train = synthShapes(g.syntheticCount, size, seed);
    const DatasetPair test = synthShapes(g.syntheticTestCount, size, syntheticTestSeed(seed));
    const fs::path out = g.outDir;
    exportDataset(train, test, out);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.imageSize = size;
    RunManifest m = startManifest("synth-export", out, cfg, datasetFingerprint(train), g.deterministic);
    finalizeManifest(out, m, "completed");
    std::cout << "exported synthetic shapes to " << out.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unpaired image translation with discriminator attention"};
    app.require_subcommand(1);
    GlobalOptions g;
    std::uint64_t seed = 0;
    long steps = 0;
    auto* seedOpt = app.add_option("--seed", seed, "Random seed (overrides the config file)");
    app.add_option("--config", g.configPath, "Flat key = value config file")->check(CLI::ExistingFile);
    app.add_option("--out", g.outDir, "Output directory");
    app.add_flag("--synthetic", g.synthetic, "Use the built-in synthetic shapes task");
    app.add_option("--preset", g.preset, "Ablation preset applied on top of the config");
    auto* stepsOpt = app.add_option("--steps", steps, "Training steps (overrides the config file)");
    app.add_flag("--deterministic", g.deterministic, "Single-threaded, bit-reproducible execution");
    app.add_option("--data", g.dataRoot, "Dataset root with trainA/trainB/testA/testB");
    app.add_option("--synthetic-count", g.syntheticCount, "Synthetic training images per domain")
        ->check(CLI::PositiveNumber);
    app.add_option("--synthetic-test-count", g.syntheticTestCount, "Synthetic test images per domain")
        ->check(CLI::PositiveNumber);

    auto* train = app.add_subcommand("train", "Train a model");
    train->fallthrough();

    std::string checkpoint;
    std::string direction = "X2Y";
    std::string inputDir;
    bool withAttention = false;
    auto* translateCmd = app.add_subcommand("translate", "Translate images with a checkpoint");
    translateCmd->fallthrough();
    translateCmd->add_option("--checkpoint", checkpoint)->required();
    translateCmd->add_option("--direction", direction, "X2Y or Y2X");
    translateCmd->add_option("--input", inputDir, "Directory of images (default: test split)");
    translateCmd->add_flag("--attention", withAttention, "Also write attention heatmaps");

    std::string mode = "source-and-target";
    auto* evaluate = app.add_subcommand("evaluate", "KID and classifier accuracy on the test split");
    evaluate->fallthrough();
    evaluate->add_option("--checkpoint", checkpoint)->required();
    evaluate->add_option("--mode", mode, "target-only or source-and-target");

    auto* ablate = app.add_subcommand("ablate", "Train and score every ablation preset");
    ablate->fallthrough();

    int limit = 4;
    auto* dump = app.add_subcommand("dump-attention", "Write attention panels for test images");
    dump->fallthrough();
    dump->add_option("--checkpoint", checkpoint)->required();
    dump->add_option("--limit", limit, "Images per direction (0 = all)");

    int size = 32;
    auto* synth = app.add_subcommand("synth-export", "Write the synthetic task as image folders");
    synth->fallthrough();
    synth->add_option("--size", size, "Image side")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);
    if (seedOpt->count() > 0) g.seed = seed;
    if (stepsOpt->count() > 0) g.steps = steps;

    try {
        configureThreads(g);
        if (*train) return cmdTrain(g);
        if (*translateCmd) return cmdTranslate(g, checkpoint, direction, inputDir, withAttention);
        if (*evaluate) return cmdEvaluate(g, checkpoint, mode);
        if (*ablate) return cmdAblate(g);
        if (*dump) return cmdDumpAttention(g, checkpoint, limit);
        if (*synth) return cmdSynthExport(g, size);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
