#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "spagan/checkpoint.hpp"
#include "spagan/evaluation.hpp"
#include "spagan/manifest.hpp"
#include "spagan/text.hpp"
#include "spagan/training.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

using namespace spagan;
using namespace spagan::testing;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("spagan_test_training_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

TrainConfig tinyConfig(const std::string& preset = "SPA-GAN-L_fm-D1") {
    TrainConfig cfg = ablationPreset(preset);
    cfg.imageSize = 16;
    cfg.genBaseWidth = 4;
    cfg.genResidualBlocks = 1;
    cfg.discBaseWidth = 4;
    cfg.discLayerCount = 2;
    cfg.totalSteps = 3;
    cfg.seed = 5;
    cfg.checkpointEvery = 0;
    cfg.attentionDumpEvery = 0;
    return cfg;
}

template <typename Scalar>
std::vector<Planes<Scalar>> weights(Network<Scalar>& net) {
    std::vector<Planes<Scalar>> out;
    for (auto& p : net.parameters()) out.push_back(p.param->value);
    return out;
}

template <typename Scalar>
bool sameWeights(Network<Scalar>& a, Network<Scalar>& b) {
    return weights(a) == weights(b);
}

std::string readBytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void writeBytes(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

} // namespace

TEST_CASE("zero learning rate leaves every weight unchanged") {
    TrainConfig cfg = tinyConfig();
    cfg.learningRate = 0.0;
    ModelSet<double> models = initialModels<double>(cfg);
    ModelSet<double> initial = initialModels<double>(cfg);
    std::mt19937_64 rng(1);
    const auto art = trainStep(models, randomTensor(3, 16, 16, rng), randomTensor(3, 16, 16, rng), cfg);
    for (std::size_t i = 0; i < 4; ++i) CHECK(sameWeights(*models.networks()[i].second, *initial.networks()[i].second));
    CHECK(art.record.allFinite());
    CHECK(art.record.gAdvLoss > 0.0);
    CHECK(art.record.cycLoss > 0.0);
    CHECK(art.record.fmLoss > 0.0);
    CHECK(art.record.dLossX > 0.0);
    CHECK(models.step == 1);
}

TEST_CASE("generator and discriminator updates are isolated") {
    const TrainConfig cfg = tinyConfig();
    ModelSet<double> models = initialModels<double>(cfg);
    ModelSet<double> copy = initialModels<double>(cfg);
    std::mt19937_64 rng(2);
    const Tensor<double> x = randomTensor(3, 16, 16, rng);
    const Tensor<double> y = randomTensor(3, 16, 16, rng);
    const auto art = trainStep(models, x, y, cfg);

    CHECK_FALSE(sameWeights(models.G, copy.G));
    CHECK_FALSE(sameWeights(models.DY, copy.DY));
    // Replaying only the discriminator updates on an identical copy must reproduce
    // their weights exactly: the generator step contributed nothing to them.
    const double lr = cfg.learningRateAt(0);
    const double dy = detail::updateDiscriminator(copy.DY, copy.optDY, y, art.fakeY, lr, "dLossY", 1);
    const double dx = detail::updateDiscriminator(copy.DX, copy.optDX, x, art.fakeX, lr, "dLossX", 1);
    CHECK(sameWeights(models.DY, copy.DY));
    CHECK(sameWeights(models.DX, copy.DX));
    CHECK(dy == art.record.dLossY);
    CHECK(dx == art.record.dLossX);
    // And the discriminator updates left the generators alone.
    ModelSet<double> fresh = initialModels<double>(cfg);
    CHECK(sameWeights(copy.G, fresh.G));
    CHECK(sameWeights(copy.F, fresh.F));
}

TEST_CASE("generator objective puts no gradient into the discriminators") {
    for (const std::string preset : {"SPA-GAN-L_fm-D1", "SPA-GAN-A_max", "SPA-GAN-L_fm-E1", "CycleGAN"}) {
        const TrainConfig cfg = tinyConfig(preset);
        ModelSet<double> models = initialModels<double>(cfg);
        std::mt19937_64 rng(3);
        const auto art = trainStep(models, randomTensor(3, 16, 16, rng), randomTensor(3, 16, 16, rng), cfg);
        CHECK(art.discriminatorGradAfterGeneratorPass == 0.0);
    }
}

TEST_CASE("cycle loss targets the attended inputs") {
    const TrainConfig cfg = tinyConfig();
    ModelSet<double> models = initialModels<double>(cfg);
    std::mt19937_64 rng(4);
    const Tensor<double> x = randomTensor(3, 16, 16, rng);
    const Tensor<double> y = randomTensor(3, 16, 16, rng);
    const auto art = trainStep(models, x, y, cfg);

    REQUIRE(art.mapX.values.minCoeff() < 1.0);
    CHECK(art.attendedX.data == applyAttention(x, art.mapX).data);
    CHECK(art.record.cycLoss == cycleLoss(art.recX, art.attendedX, art.recY, art.attendedY));
    CHECK(art.record.cycLoss != cycleLoss(art.recX, x, art.recY, y));
}

TEST_CASE("attention maps are valid from the first step") {
    for (const std::string preset : {"SPA-GAN-L_fm-D1", "SPA-GAN-A_max"}) {
        const TrainConfig cfg = tinyConfig(preset);
        ModelSet<double> models = initialModels<double>(cfg);
        std::mt19937_64 rng(5);
        const auto art = trainStep(models, randomTensor(3, 16, 16, rng), randomTensor(3, 16, 16, rng), cfg);
        for (const auto* m : {&art.mapX, &art.mapY, &art.mapFakeX, &art.mapFakeY}) {
            CHECK(m->values.minCoeff() >= 0.0);
            CHECK(m->values.maxCoeff() == 1.0);
            CHECK(m->height() == 16);
        }
    }
}

TEST_CASE("attention off passes the inputs through unchanged") {
    const TrainConfig cfg = tinyConfig("CycleGAN");
    ModelSet<double> models = initialModels<double>(cfg);
    std::mt19937_64 rng(6);
    const Tensor<double> x = randomTensor(3, 16, 16, rng);
    const auto art = trainStep(models, x, randomTensor(3, 16, 16, rng), cfg);
    CHECK(art.attendedX.data == x.data);
    CHECK(art.mapX.values == Grid<double>::Ones(16, 16));
    CHECK(art.record.fmLoss == 0.0);
}

TEST_CASE("recorded total equals its recomputed components") {
    const TrainConfig cfg = tinyConfig();
    ModelSet<float> models = initialModels<float>(cfg);
    const DatasetPair data = synthShapes(4, 16, 7);
    std::mt19937_64 rng(7);
    for (int s = 0; s < 5; ++s) {
        const Batch b = nextBatch(data, rng);
        const auto r = trainStep(models, b.x, b.y, cfg).record;
        CHECK(r.step == s + 1);
        CHECK(r.totalGen == r.gAdvLoss + r.fAdvLoss + cfg.weights.lambdaCyc * r.cycLoss + cfg.weights.lambdaFm * r.fmLoss);
    }
}

TEST_CASE("cycle path can be attended by flag") {
    TrainConfig cfg = tinyConfig();
    ModelSet<double> plain = initialModels<double>(cfg);
    cfg.attendCyclePath = true;
    ModelSet<double> attended = initialModels<double>(cfg);
    std::mt19937_64 rng(8);
    const Tensor<double> x = randomTensor(3, 16, 16, rng), y = randomTensor(3, 16, 16, rng);
    const auto r1 = trainStep(plain, x, y, tinyConfig());
    const auto r2 = trainStep(attended, x, y, cfg);
    CHECK(r1.record.gAdvLoss == r2.record.gAdvLoss);
    CHECK(r1.record.cycLoss != r2.record.cycLoss);
    CHECK(r2.discriminatorGradAfterGeneratorPass == 0.0);
}

TEST_CASE("fit bookkeeping") {
    TempDir tmp("fit");
    TrainConfig cfg = tinyConfig();
    cfg.checkpointEvery = 1;
    cfg.attentionDumpEvery = 2;
    const DatasetPair data = synthShapes(6, 16, 8);
    const FitResult r = fit(cfg, data, tmp.path / "run");
    int checkpoints = 0;
    for (const auto& e : fs::directory_iterator(tmp.path / "run" / "checkpoints")) checkpoints += e.path().extension() == ".ckpt";
    CHECK(checkpoints == 3);
    CHECK(r.records.size() == 3);
    CHECK(readLossCsv(r.lossCsv.string()).size() == 3);
    CHECK(fs::exists(r.finalCheckpoint));
    CHECK_FALSE(fs::exists(tmp.path / "run" / "losses.csv.partial"));
    int panels = 0;
    for (const auto& e : fs::directory_iterator(tmp.path / "run" / "attention")) panels += e.path().extension() == ".png";
    CHECK(panels == 4);
    CHECK(fs::exists(tmp.path / "run" / "attention" / "2_X2Y_fake_attn.png"));
    {
        std::ifstream hist(tmp.path / "run" / "attention" / "histogram.csv");
        std::string line;
        std::getline(hist, line);
        CHECK(line.rfind("step,map,min,mean,bin0", 0) == 0);
        int rows = 0;
        while (std::getline(hist, line)) {
            ++rows;
            const auto fields = splitOn(line, ',');
            REQUIRE(fields.size() == 14);
            long total = 0;
            for (std::size_t i = 4; i < fields.size(); ++i) total += parseLong(fields[i]);
            CHECK(total == 16 * 16);
            CHECK(parseDouble(fields[2]) >= 0.0);
        }
        CHECK(rows == 4);
    }

    cfg.checkpointEvery = 0;
    const FitResult again = fit(cfg, data, tmp.path / "again");
    CHECK(readBytes(again.lossCsv) == readBytes(r.lossCsv));
    CHECK(fs::exists(again.finalCheckpoint));

    TrainConfig wrongSize = cfg;
    wrongSize.imageSize = 32;
    CHECK_THROWS_AS(fit(wrongSize, data, tmp.path / "bad"), ConfigError);
}

TEST_CASE("checkpoints round trip weights and optimizer state") {
    TempDir tmp("ckpt");
    const TrainConfig cfg = tinyConfig("SPA-GAN-A_max");
    ModelSet<float> models = initialModels<float>(cfg);
    const DatasetPair data = synthShapes(4, 16, 9);
    std::mt19937_64 rng(9);
    for (int s = 0; s < 3; ++s) {
        const Batch b = nextBatch(data, rng);
        trainStep(models, b.x, b.y, cfg);
    }
    const fs::path path = tmp.path / "model.ckpt";
    saveCheckpoint(path, models, cfg);

    TrainConfig loadedCfg;
    ModelSet<float> loaded = loadCheckpoint<float>(path, &loadedCfg);
    CHECK(loadedCfg.toKeyValues() == cfg.toKeyValues());
    CHECK(loaded.step == 3);
    const auto a = models.allParameters();
    const auto b = loaded.allParameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].param->value == b[i].param->value);
    }
    const CheckpointHeader header = readCheckpointHeader(path);
    CHECK(header.step == 3);
    CHECK(header.config.attentionMode == AttentionMode::Max);

    // Adam moments and step counts survive, so training continues identically.
    const Batch next = nextBatch(data, rng);
    const LossRecord r1 = trainStep(models, next.x, next.y, cfg).record;
    const LossRecord r2 = trainStep(loaded, next.x, next.y, loadedCfg).record;
    CHECK(r1.csvRow() == r2.csvRow());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].param->value == b[i].param->value);

    const std::string bytes = readBytes(path);
    SUBCASE("flipped byte") {
        std::string bad = bytes;
        bad[bad.size() / 2] ^= 0x5a;
        writeBytes(path, bad);
        CHECK_THROWS_AS(loadCheckpoint<float>(path), CheckpointError);
    }
    SUBCASE("truncated") {
        writeBytes(path, bytes.substr(0, bytes.size() - 41));
        CHECK_THROWS_AS(loadCheckpoint<float>(path), CheckpointError);
    }
    SUBCASE("not a checkpoint") {
        writeBytes(path, "hello");
        CHECK_THROWS_AS(loadCheckpoint<float>(path), CheckpointError);
        CHECK_THROWS_AS(readCheckpointHeader(path), CheckpointError);
    }
    SUBCASE("missing") { CHECK_THROWS_AS(loadCheckpoint<float>(tmp.path / "none.ckpt"), CheckpointError); }
}

TEST_CASE("translation") {
    TempDir tmp("translate");
    const DatasetPair data = synthShapes(3, 16, 10);

    SUBCASE("attention off equals the plain generator") {
        const TrainConfig cfg = tinyConfig("CycleGAN");
        ModelSet<float> models = initialModels<float>(cfg);
        const auto out = translate(models, cfg, data.imagesX(), Direction::X2Y, true);
        REQUIRE(out.images.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(out.images[i].data == models.G.forward(data.domainX[i].pixels).output.data);
            CHECK(out.maps[i].values == Grid<float>::Ones(16, 16));
        }
        const auto back = translate(models, cfg, data.imagesY(), Direction::Y2X, false);
        CHECK(back.images[1].data == models.F.forward(data.domainY[1].pixels).output.data);
        CHECK(back.maps.empty());
    }
    SUBCASE("attention on attends with the source discriminator") {
        const TrainConfig cfg = tinyConfig();
        ModelSet<float> models = initialModels<float>(cfg);
        const auto out = translate(models, cfg, data.imagesX(), Direction::X2Y, true);
        const auto ax = attend(models.DX, data.domainX[0].pixels, AttentionMode::Sum);
        CHECK(out.images[0].data == models.G.forward(ax.image).output.data);
        CHECK(out.images[0].sameShape(data.domainX[0].pixels));
        CHECK(out.images[0].data.cwiseAbs().maxCoeff() < 1.0f);
    }
    SUBCASE("from a checkpoint, deterministic across calls") {
        TrainConfig cfg = tinyConfig();
        cfg.totalSteps = 2;
        const FitResult r = fit(cfg, data, tmp.path / "run");
        const auto a = translate(r.finalCheckpoint, data.imagesX(), Direction::X2Y, false);
        const auto b = translate(r.finalCheckpoint, data.imagesX(), Direction::X2Y, false);
        CHECK(a.images[2].data == b.images[2].data);
        CHECK_THROWS_AS(translate(r.finalCheckpoint, {Tensor<float>(3, 32, 32)}, Direction::X2Y, false), ShapeError);
    }
    CHECK(parseDirection("Y2X") == Direction::Y2X);
    CHECK(directionName(Direction::X2Y) == "X2Y");
    CHECK_THROWS_AS(parseDirection("sideways"), ConfigError);
}

TEST_CASE("non-finite values abort the step") {
    const TrainConfig cfg = tinyConfig();
    ModelSet<double> models = initialModels<double>(cfg);
    std::mt19937_64 rng(11);
    Tensor<double> x = randomTensor(3, 16, 16, rng);
    x(1, 3, 3) = std::numeric_limits<double>::quiet_NaN();
    try {
        trainStep(models, x, randomTensor(3, 16, 16, rng), cfg);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step() == 1);
        CHECK_FALSE(e.term().empty());
    }
    CHECK(models.step == 0);
}

TEST_CASE("fit records divergence and keeps the last good checkpoint") {
    TempDir tmp("diverge");
    DatasetPair data = synthShapes(1, 16, 12);
    data.domainY[0].pixels(0, 0, 0) = std::numeric_limits<float>::infinity();
    TrainConfig cfg = tinyConfig();
    cfg.checkpointEvery = 1;
    CHECK_THROWS_AS(fit(cfg, data, tmp.path), DivergenceError);
    CHECK(fs::exists(tmp.path / "divergence.txt"));
    CHECK(readBytes(tmp.path / "divergence.txt").find("last_good_checkpoint = none") != std::string::npos);
    CHECK(fs::exists(tmp.path / "losses.csv"));
}

TEST_CASE("image pool") {
    std::mt19937_64 rng(13);
    ImagePool<float> off(0);
    const Tensor<float> a = Tensor<float>::constant(1, 2, 2, 1.0f);
    const Tensor<float> b = Tensor<float>::constant(1, 2, 2, 2.0f);
    CHECK(off.query(a, rng).data == a.data);

    ImagePool<float> pool(1);
    CHECK(pool.query(a, rng).data == a.data);
    int old = 0;
    for (int i = 0; i < 200; ++i) {
        // Once full, half of the queries hand back the stored history.
        const Tensor<float> out = pool.query(i % 2 ? a : b, rng);
        old += out.data != (i % 2 ? a : b).data;
    }
    CHECK(old > 20);
    CHECK(old < 120);

    TrainConfig cfg = tinyConfig();
    cfg.poolSize = 2;
    TempDir tmp("pool");
    const DatasetPair data = synthShapes(3, 16, 13);
    CHECK(fit(cfg, data, tmp.path).records.size() == 3);
}

TEST_CASE("evaluation report layout") {
    TempDir tmp("eval");
    const DatasetPair train = synthShapes(6, 16, 14);
    const DatasetPair test = synthShapes(6, 16, syntheticTestSeed(14));
    ClassifierConfig clfCfg = defaultClassifierConfig(14);
    clfCfg.steps = 50;
    DomainClassifier clf(16, clfCfg);
    clf.train(train);

    TrainConfig cfg = tinyConfig("CycleGAN");
    ModelSet<float> models = initialModels<float>(cfg);
    EvalOptions opts;
    opts.mode = KidMode::TargetOnly;
    opts.subsetSize = 4;
    opts.repetitions = 3;
    const EvaluationReport target = evaluateTranslation(models, cfg, test, clf, opts);
    REQUIRE(target.rows.size() == 2);
    CHECK(target.rows[0].attention == "identity");
    CHECK_FALSE(target.rows[0].sourceAndTarget.has_value());
    CHECK(target.csv().find("kid_source_target") == std::string::npos);
    CHECK(target.csv().find("kid_target_only_mean") != std::string::npos);
    CHECK(target.csv().find("identity") != std::string::npos);
    CHECK(target.rows[1].accuracy >= 0.0);
    CHECK(target.rows[1].accuracy <= 1.0);

    opts.mode = KidMode::SourceAndTarget;
    const EvaluationReport joint = evaluateTranslation(models, cfg, test, clf, opts);
    CHECK(joint.rows[0].sourceAndTarget.has_value());
    CHECK(joint.csv().find("kid_source_target_mean") != std::string::npos);
    CHECK(joint.rows[0].targetOnly.mean == target.rows[0].targetOnly.mean);
    CHECK_FALSE(joint.text().empty());

    const TrainConfig attn = tinyConfig("SPA-GAN-A_max");
    ModelSet<float> attnModels = initialModels<float>(attn);
    CHECK(evaluateTranslation(attnModels, attn, test, clf, opts).rows[0].attention == "MAX");

    DatasetPair tooSmall = synthShapes(1, 16, 1);
    CHECK_THROWS(evaluateTranslation(models, cfg, tooSmall, clf, opts));
}

TEST_CASE("ablation sweep is complete and reproducible") {
    TempDir tmp("ablate");
    const DatasetPair train = synthShapes(6, 16, 15);
    const DatasetPair test = synthShapes(6, 16, syntheticTestSeed(15));
    TrainConfig base = tinyConfig();
    base.totalSteps = 2;
    const auto rows = runAblation(base, train, test, tmp.path / "a");
    REQUIRE(rows.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(rows[i].preset == ablationPresetNames()[i]);
        CHECK(rows[i].status == "ok");
        CHECK(rows[i].datasetFingerprint == rows[0].datasetFingerprint);
    }
    runAblation(base, train, test, tmp.path / "b");
    CHECK(readBytes(tmp.path / "a" / "ablation.csv") == readBytes(tmp.path / "b" / "ablation.csv"));
    CHECK(fs::exists(tmp.path / "a" / "ablation.txt"));

    std::vector<LossRecord> one{LossRecord{1, 1, 1, 1, 1, 1, 1, 1}};
    std::vector<LossRecord> two{LossRecord{1, 1, 1, 1, 1, 1, 2, 3}, LossRecord{2, 0, 0, 0, 0, 0, 0, 0}};
    CHECK(lossTraceDistance(one, two) == 3.0);
    CHECK(lossTraceDistance(one, one) == 0.0);
}

TEST_CASE("run manifest") {
    TempDir tmp("manifest");
    RunManifest m;
    m.command = "train";
    m.configSnapshot = tinyConfig("SPA-GAN-L_fm-E1");
    m.datasetFingerprint = "abc123";
    m.startedAt = utcTimestamp();
    m.deterministic = true;
    writeManifest(tmp.path, m);
    RunManifest back = readManifest(tmp.path);
    CHECK(back.command == "train");
    CHECK(back.configSnapshot.toKeyValues() == m.configSnapshot.toKeyValues());
    CHECK(back.datasetFingerprint == "abc123");
    CHECK(back.toolkitVersion == kToolkitVersion);
    CHECK(back.status == "running");
    CHECK_FALSE(back.finishedAt.has_value());
    CHECK(back.startedAt.size() == 20);
    CHECK(back.startedAt.back() == 'Z');

    finalizeManifest(tmp.path, back, "completed");
    const RunManifest done = readManifest(tmp.path);
    CHECK(done.status == "completed");
    CHECK(done.finishedAt.has_value());
    CHECK_THROWS(writeManifest(tmp.path, m));
    CHECK_THROWS(finalizeManifest(tmp.path, back, "failed"));
    CHECK(readManifest(tmp.path).status == "completed");
    CHECK_THROWS(readManifest(tmp.path / "nowhere"));
}
