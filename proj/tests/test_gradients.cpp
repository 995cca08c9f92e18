#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "spagan/losses.hpp"
#include "spagan/training.hpp"

#include <limits>

using namespace spagan;
using namespace spagan::testing;

namespace {

constexpr double kLossTol = 1e-4;

ActivationStack<double> stack(const Tensor<double>& t) { return {t, "tap"}; }

} // namespace

TEST_CASE("least-squares loss gradients") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor<double> real = randomTensor(1, 4, 4, rng, -2, 2);
        const Tensor<double> fake = randomTensor(1, 4, 4, rng, -2, 2);
        const auto [dReal, dFake] = lsganDLossGrad(real, fake);
        CHECK(maxRelativeError(dReal.data,
                               numericGradient([&](const Tensor<double>& t) { return lsganDLoss(t, fake); }, real).data) <
              kLossTol);
        CHECK(maxRelativeError(dFake.data,
                               numericGradient([&](const Tensor<double>& t) { return lsganDLoss(real, t); }, fake).data) <
              kLossTol);
        CHECK(maxRelativeError(lsganGLossGrad(fake).data,
                               numericGradient([](const Tensor<double>& t) { return lsganGLoss(t); }, fake).data) <
              kLossTol);
    }
}

TEST_CASE("cycle loss gradients with respect to all four inputs") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor<double> rx = randomTensor(3, 4, 4, rng), xa = randomTensor(3, 4, 4, rng);
        const Tensor<double> ry = randomTensor(3, 4, 4, rng), ya = randomTensor(3, 4, 4, rng);
        const auto [dX, dY] = cycleLossGrad(rx, xa, ry, ya);
        auto fRx = [&](const Tensor<double>& t) { return cycleLoss(t, xa, ry, ya); };
        auto fXa = [&](const Tensor<double>& t) { return cycleLoss(rx, t, ry, ya); };
        auto fRy = [&](const Tensor<double>& t) { return cycleLoss(rx, xa, t, ya); };
        auto fYa = [&](const Tensor<double>& t) { return cycleLoss(rx, xa, ry, t); };
        CHECK(maxRelativeError(dX.data, numericGradient(fRx, rx).data) < kLossTol);
        CHECK(maxRelativeError((-dX.data).eval(), numericGradient(fXa, xa).data) < kLossTol);
        CHECK(maxRelativeError(dY.data, numericGradient(fRy, ry).data) < kLossTol);
        CHECK(maxRelativeError((-dY.data).eval(), numericGradient(fYa, ya).data) < kLossTol);
    }
}

TEST_CASE("feature-map loss gradients under both normalizations") {
    std::mt19937_64 rng(3);
    for (FeatureNorm norm : {FeatureNorm::PlaneSum, FeatureNorm::SpatialMean}) {
        const Tensor<double> gr = randomTensor(3, 4, 4, rng), gf = randomTensor(3, 4, 4, rng);
        const Tensor<double> fr = randomTensor(2, 3, 3, rng), ff = randomTensor(2, 3, 3, rng);
        const auto g = featureMapLossGrad(stack(gr), stack(gf), stack(fr), stack(ff), norm);
        auto at = [&](int which) {
            return [&, which](const Tensor<double>& t) {
                return featureMapLoss(stack(which == 0 ? t : gr), stack(which == 1 ? t : gf),
                                      stack(which == 2 ? t : fr), stack(which == 3 ? t : ff), norm);
            };
        };
        CHECK(maxRelativeError(g.gReal.data, numericGradient(at(0), gr).data) < kLossTol);
        CHECK(maxRelativeError(g.gFake.data, numericGradient(at(1), gf).data) < kLossTol);
        CHECK(maxRelativeError(g.fReal.data, numericGradient(at(2), fr).data) < kLossTol);
        CHECK(maxRelativeError(g.fFake.data, numericGradient(at(3), ff).data) < kLossTol);
    }
}

TEST_CASE("attention application gradient") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor<double> img = randomTensor(3, 6, 6, rng);
        const Tensor<double> w = randomTensor(3, 6, 6, rng);
        const AttentionMap<double> map{randomTensor(1, 6, 6, rng, 0, 1).plane(0), "m", true};
        auto f = [&](const Tensor<double>& t) { return (applyAttention(t, map).data.array() * w.data.array()).sum(); };
        CHECK(maxRelativeError(applyAttentionBackward(w, map).data, numericGradient(f, img).data) < 1e-6);
    }
}

TEST_CASE("generator input gradient through output and each tap") {
    GeneratorSpec spec{4, 1, 16, 3, TapLayer::DEC1};
    std::mt19937_64 rng(5);
    Generator<double> gen(spec, rng);
    const Tensor<double> x = randomTensor(3, 16, 16, rng);
    for (TapLayer tap : {TapLayer::ENC1, TapLayer::DEC1, TapLayer::DEC4}) {
        typename Network<double>::Trace trace;
        const auto out = gen.forward(x, tap, &trace);
        const Tensor<double> w = randomTensor(3, 16, 16, rng);
        const Tensor<double>& t = out.tap->planes;
        const Tensor<double> v = randomTensor(t.channels, t.height, t.width, rng);
        const Tensor<double> analytic = gen.backward(trace, w, tap, &v, ParamGrad::Frozen);
        auto f = [&](const Tensor<double>& in) {
            const auto o = gen.forward(in, tap);
            return (o.output.data.array() * w.data.array()).sum() + (o.tap->planes.data.array() * v.data.array()).sum();
        };
        CHECK(maxRelativeError(analytic.data, numericGradient(f, x).data) < 1e-4);
    }
}

TEST_CASE("generator objective gradient end to end") {
    // Attention-free presets only: with attention on, the maps of the fakes
    // depend on the generators but are held constant by design.
    for (const std::string preset : {"CycleGAN", "SPA-GAN-wo-A_D"}) {
        TrainConfig cfg = ablationPreset(preset);
        cfg.imageSize = 16;
        cfg.genBaseWidth = 4;
        cfg.genResidualBlocks = 1;
        cfg.discBaseWidth = 4;
        cfg.discLayerCount = 2;
        cfg.weights.lambdaFm = 0.5;
        cfg.learningRate = 0.0;
        cfg.seed = 6;
        ModelSet<double> models = initialModels<double>(cfg);
        std::mt19937_64 rng(6);
        const Tensor<double> x = randomTensor(3, 16, 16, rng);
        const Tensor<double> y = randomTensor(3, 16, 16, rng);
        trainStep(models, x, y, cfg);

        std::uniform_int_distribution<int> pick(0, 1 << 30);
        for (auto* net : {static_cast<Network<double>*>(&models.G), static_cast<Network<double>*>(&models.F)}) {
            int checked = 0;
            for (auto& p : net->parameters()) {
                // Biases that feed an instance norm have a vanishing gradient; skip them here.
                if (p.name.find("weight") == std::string::npos && p.name != "out.bias") continue;
                const Eigen::Index i = pick(rng) % p.param->value.size();
                const double analytic = p.param->grad.data()[i];
                const double saved = p.param->value.data()[i];
                // The objective has L1 kinks; a crossing inside one perturbation window
                // spoils that step size only, so the best of three is compared.
                double best = std::numeric_limits<double>::infinity();
                for (double h : {1e-5, 1e-6, 1e-7}) {
                    p.param->value.data()[i] = saved + h;
                    const double up = trainStep(models, x, y, cfg).record.totalGen;
                    p.param->value.data()[i] = saved - h;
                    const double down = trainStep(models, x, y, cfg).record.totalGen;
                    p.param->value.data()[i] = saved;
                    const double numeric = (up - down) / (2 * h);
                    best = std::min(best, std::abs(analytic - numeric) /
                                              std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
                }
                CHECK_MESSAGE(best < 1e-4, preset << " " << p.name);
                ++checked;
            }
            CHECK(checked > 5);
            // Re-populate gradients at the unperturbed point for the next network.
            trainStep(models, x, y, cfg);
        }
    }
}
