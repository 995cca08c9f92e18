#pragma once

#include "spagan/attention.hpp"
#include "spagan/config.hpp"
#include "spagan/data.hpp"
#include "spagan/losses.hpp"
#include "spagan/model_set.hpp"

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace spagan {

/// A loss term or activation went non-finite.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::string term, long step)
        : std::runtime_error("non-finite " + term + " at step " + std::to_string(step)), term_(std::move(term)),
          step_(step) {}

    const std::string& term() const { return term_; }
    long step() const { return step_; }

private:
    std::string term_;
    long step_;
};

/// History of generated images; once full, each query returns a stored image
/// (and stores the new one) with probability 1/2.
template <typename Scalar>
class ImagePool {
public:
    explicit ImagePool(int capacity = 0) : capacity_(capacity) {}

    Tensor<Scalar> query(const Tensor<Scalar>& img, std::mt19937_64& rng) {
        if (capacity_ <= 0) {
            return img;
        }
        if (static_cast<int>(images_.size()) < capacity_) {
            images_.push_back(img);
            return img;
        }
        if (std::bernoulli_distribution(0.5)(rng)) {
            const std::size_t i = std::uniform_int_distribution<std::size_t>(0, images_.size() - 1)(rng);
            Tensor<Scalar> old = images_[i];
            images_[i] = img;
            return old;
        }
        return img;
    }

private:
    int capacity_;
    std::vector<Tensor<Scalar>> images_;
};

template <typename Scalar>
struct ReplayPools {
    ImagePool<Scalar> fakeX;
    ImagePool<Scalar> fakeY;
    std::mt19937_64 rng;
};

template <typename Scalar>
struct StepArtifacts {
    Tensor<Scalar> attendedX;
    Tensor<Scalar> attendedY;
    Tensor<Scalar> fakeY;
    Tensor<Scalar> fakeX;
    Tensor<Scalar> recX;
    Tensor<Scalar> recY;
    AttentionMap<Scalar> mapX;
    AttentionMap<Scalar> mapY;
    AttentionMap<Scalar> mapFakeX;
    AttentionMap<Scalar> mapFakeY;
    LossRecord record;
    /// Sum of |grad| over both discriminators right after the generator backward pass.
    double discriminatorGradAfterGeneratorPass = 0;
};

namespace detail {

template <typename Scalar>
void requireFiniteTerm(Scalar value, const char* term, long step) {
    if (!std::isfinite(static_cast<double>(value))) {
        throw DivergenceError(term, step);
    }
}

template <typename Scalar>
void requireFiniteTensor(const Tensor<Scalar>& t, const char* term, long step) {
    if (!t.allFinite()) {
        throw DivergenceError(term, step);
    }
}

template <typename Scalar>
Attended<Scalar> attendFor(const TrainConfig& cfg, const Discriminator<Scalar>& disc, const Tensor<Scalar>& img) {
    if (!cfg.attentionEnabled) {
        return identityAttention(img);
    }
    return attend(disc, img, cfg.attentionMode, cfg.attentionUpsample);
}

template <typename Scalar>
Tensor<Scalar> zerosLike(const Tensor<Scalar>& t) {
    return Tensor<Scalar>(t.channels, t.height, t.width);
}

template <typename Scalar>
Scalar updateDiscriminator(Discriminator<Scalar>& disc, Adam<Scalar>& opt, const Tensor<Scalar>& real,
                           const Tensor<Scalar>& fake, double lr, const char* term, long step) {
    using Trace = typename Network<Scalar>::Trace;
    disc.zeroGrad();
    Trace realTrace;
    Trace fakeTrace;
    const Tensor<Scalar> realLogits = disc.forward(real, &realTrace).logits;
    const Tensor<Scalar> fakeLogits = disc.forward(fake, &fakeTrace).logits;
    requireFiniteTensor(realLogits, term, step);
    requireFiniteTensor(fakeLogits, term, step);
    const Scalar loss = lsganDLoss(realLogits, fakeLogits);
    requireFiniteTerm(loss, term, step);
    const auto [dReal, dFake] = lsganDLossGrad(realLogits, fakeLogits);
    disc.backward(realTrace, dReal);
    disc.backward(fakeTrace, dFake);
    auto params = disc.parameters();
    opt.step(params, lr);
    return loss;
}

} // namespace detail

/// One alternating update of the four networks on the pair (x, y).
///
/// Forward: attend x and y with their discriminators, translate the attended
/// images, reconstruct from the raw fakes, and (when the feature-map loss is
/// on) translate the attended fakes for the fake-side taps. Generators are
/// updated jointly with discriminators frozen and attention maps held
/// constant; D_Y and then D_X are updated on the detached fakes.
template <typename Scalar>
StepArtifacts<Scalar> trainStep(ModelSet<Scalar>& models, const Tensor<Scalar>& x, const Tensor<Scalar>& y,
                                const TrainConfig& cfg, ReplayPools<Scalar>* pools = nullptr) {
    using Trace = typename Network<Scalar>::Trace;
    const long stepNo = models.step + 1;
    const std::optional<TapLayer> tap =
        cfg.fmLossEnabled ? std::optional<TapLayer>(cfg.fmTapLayer) : std::optional<TapLayer>();
    const double lr = cfg.learningRateAt(models.step);

    StepArtifacts<Scalar> art;

    // Attended real inputs.
    Attended<Scalar> ax = detail::attendFor(cfg, models.DX, x);
    Attended<Scalar> ay = detail::attendFor(cfg, models.DY, y);

    // Translations of the attended reals; their taps are the real-side features.
    Trace traceG;
    Trace traceF;
    GeneratorOutput<Scalar> gOut = models.G.forward(ax.image, tap, &traceG);
    GeneratorOutput<Scalar> fOut = models.F.forward(ay.image, tap, &traceF);
    detail::requireFiniteTensor(gOut.output, "fakeY", stepNo);
    detail::requireFiniteTensor(fOut.output, "fakeX", stepNo);
    const Tensor<Scalar>& fakeY = gOut.output;
    const Tensor<Scalar>& fakeX = fOut.output;

    // Fakes attended by the discriminator of their apparent domain.
    Attended<Scalar> afy = detail::attendFor(cfg, models.DY, fakeY);
    Attended<Scalar> afx = detail::attendFor(cfg, models.DX, fakeX);

    // Reconstructions.
    const Tensor<Scalar>& cycleInY = cfg.attendCyclePath ? afy.image : fakeY;
    const Tensor<Scalar>& cycleInX = cfg.attendCyclePath ? afx.image : fakeX;
    Trace traceFc;
    Trace traceGc;
    Tensor<Scalar> recX = models.F.forward(cycleInY, std::nullopt, &traceFc).output;
    Tensor<Scalar> recY = models.G.forward(cycleInX, std::nullopt, &traceGc).output;

    // Fake-side feature taps.
    Trace traceGfm;
    Trace traceFfm;
    std::optional<ActivationStack<Scalar>> gFakeTap;
    std::optional<ActivationStack<Scalar>> fFakeTap;
    if (cfg.fmLossEnabled) {
        gFakeTap = models.G.forward(afx.image, tap, &traceGfm).tap;
        fFakeTap = models.F.forward(afy.image, tap, &traceFfm).tap;
    }

    // Adversarial scores of the fakes.
    Trace traceDYg;
    Trace traceDXg;
    const Tensor<Scalar> dyFake = models.DY.forward(fakeY, &traceDYg).logits;
    const Tensor<Scalar> dxFake = models.DX.forward(fakeX, &traceDXg).logits;
    detail::requireFiniteTensor(dyFake, "gAdvLoss", stepNo);
    detail::requireFiniteTensor(dxFake, "fAdvLoss", stepNo);

    const Scalar gAdv = lsganGLoss(dyFake);
    const Scalar fAdv = lsganGLoss(dxFake);
    detail::requireFiniteTensor(recX, "cycLoss", stepNo);
    detail::requireFiniteTensor(recY, "cycLoss", stepNo);
    const Scalar cyc = cycleLoss(recX, ax.image, recY, ay.image);
    Scalar fm = 0;
    if (cfg.fmLossEnabled) {
        detail::requireFiniteTensor(gFakeTap->planes, "fmLoss", stepNo);
        detail::requireFiniteTensor(fFakeTap->planes, "fmLoss", stepNo);
        fm = featureMapLoss(*gOut.tap, *gFakeTap, *fOut.tap, *fFakeTap, cfg.fmNormalization);
    }
    detail::requireFiniteTerm(gAdv, "gAdvLoss", stepNo);
    detail::requireFiniteTerm(fAdv, "fAdvLoss", stepNo);
    detail::requireFiniteTerm(cyc, "cycLoss", stepNo);
    detail::requireFiniteTerm(fm, "fmLoss", stepNo);

    // Generator backward, in reverse dependency order.
    for (auto [name, net] : models.networks()) {
        net->zeroGrad();
    }
    const Scalar lambdaCyc = static_cast<Scalar>(cfg.weights.lambdaCyc);
    const Scalar lambdaFm = static_cast<Scalar>(cfg.weights.lambdaFm);
    Tensor<Scalar> gradFakeY = detail::zerosLike(fakeY);
    Tensor<Scalar> gradFakeX = detail::zerosLike(fakeX);
    std::optional<FeatureMapGrad<Scalar>> fmGrad;
    if (cfg.fmLossEnabled) {
        fmGrad = featureMapLossGrad(*gOut.tap, *gFakeTap, *fOut.tap, *fFakeTap, cfg.fmNormalization);
        for (auto* g : {&fmGrad->gReal, &fmGrad->gFake, &fmGrad->fReal, &fmGrad->fFake}) {
            g->data *= lambdaFm;
        }
        const Tensor<Scalar> viaG = models.G.backward(traceGfm, detail::zerosLike(fakeY), tap, &fmGrad->gFake);
        gradFakeX.data += applyAttentionBackward(viaG, afx.map).data;
        const Tensor<Scalar> viaF = models.F.backward(traceFfm, detail::zerosLike(fakeX), tap, &fmGrad->fFake);
        gradFakeY.data += applyAttentionBackward(viaF, afy.map).data;
    }
    {
        auto [dRecX, dRecY] = cycleLossGrad(recX, ax.image, recY, ay.image);
        dRecX.data *= lambdaCyc;
        dRecY.data *= lambdaCyc;
        const Tensor<Scalar> viaF = models.F.backward(traceFc, dRecX);
        const Tensor<Scalar> viaG = models.G.backward(traceGc, dRecY);
        if (cfg.attendCyclePath) {
            gradFakeY.data += applyAttentionBackward(viaF, afy.map).data;
            gradFakeX.data += applyAttentionBackward(viaG, afx.map).data;
        } else {
            gradFakeY.data += viaF.data;
            gradFakeX.data += viaG.data;
        }
    }
    gradFakeY.data += models.DY.backward(traceDYg, lsganGLossGrad(dyFake), ParamGrad::Frozen).data;
    gradFakeX.data += models.DX.backward(traceDXg, lsganGLossGrad(dxFake), ParamGrad::Frozen).data;
    models.G.backward(traceG, gradFakeY, tap, fmGrad ? &fmGrad->gReal : nullptr);
    models.F.backward(traceF, gradFakeX, tap, fmGrad ? &fmGrad->fReal : nullptr);
    art.discriminatorGradAfterGeneratorPass =
        static_cast<double>(models.DX.gradientAbsSum()) + static_cast<double>(models.DY.gradientAbsSum());

    {
        auto pg = models.G.parameters();
        auto pf = models.F.parameters();
        models.optG.step(pg, lr);
        models.optF.step(pf, lr);
    }

    // Discriminator updates on detached fakes.
    const Tensor<Scalar> fakeYForD = pools != nullptr ? pools->fakeY.query(fakeY, pools->rng) : fakeY;
    const Tensor<Scalar> fakeXForD = pools != nullptr ? pools->fakeX.query(fakeX, pools->rng) : fakeX;
    const Scalar dLossY = detail::updateDiscriminator(models.DY, models.optDY, y, fakeYForD, lr, "dLossY", stepNo);
    const Scalar dLossX = detail::updateDiscriminator(models.DX, models.optDX, x, fakeXForD, lr, "dLossX", stepNo);

    models.step = stepNo;

    LossRecord& r = art.record;
    r.step = stepNo;
    r.dLossX = static_cast<double>(dLossX);
    r.dLossY = static_cast<double>(dLossY);
    r.gAdvLoss = static_cast<double>(gAdv);
    r.fAdvLoss = static_cast<double>(fAdv);
    r.cycLoss = static_cast<double>(cyc);
    r.fmLoss = static_cast<double>(fm);
    r.totalGen = totalGeneratorLoss(r.gAdvLoss, r.fAdvLoss, r.cycLoss, r.fmLoss, cfg.weights);
    if (!r.allFinite()) {
        throw DivergenceError("totalGen", stepNo);
    }

    art.attendedX = std::move(ax.image);
    art.attendedY = std::move(ay.image);
    art.mapX = std::move(ax.map);
    art.mapY = std::move(ay.map);
    art.mapFakeY = std::move(afy.map);
    art.mapFakeX = std::move(afx.map);
    art.fakeY = std::move(gOut.output);
    art.fakeX = std::move(fOut.output);
    art.recX = std::move(recX);
    art.recY = std::move(recY);
    return art;
}

/// Builds the initial networks for `cfg` from its seed.
template <typename Scalar>
ModelSet<Scalar> initialModels(const TrainConfig& cfg) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x1417u};
    std::mt19937_64 rng(seq);
    return ModelSet<Scalar>(cfg.generatorSpec(), cfg.discriminatorSpec(), cfg.adamConfig(), rng);
}

std::mt19937_64 samplingStream(std::uint64_t seed);

struct FitResult {
    std::filesystem::path finalCheckpoint;
    std::filesystem::path lossCsv;
    std::vector<LossRecord> records;
};

/// Runs cfg.totalSteps steps, writing outDir/losses.csv,
/// outDir/checkpoints/step_NNNNNNNN.ckpt and outDir/attention/*.png.
FitResult fit(const TrainConfig& cfg, const DatasetPair& dataset, const std::filesystem::path& outDir);

enum class Direction { X2Y, Y2X };

Direction parseDirection(const std::string& s);
std::string_view directionName(Direction d);

struct Translation {
    std::vector<Tensor<float>> images;
    std::vector<AttentionMap<float>> maps;
};

/// Applies G (X2Y) or F (Y2X) to each image after attending it with the
/// source-domain discriminator (identity attention when the run had none).
Translation translate(ModelSet<float>& models, const TrainConfig& cfg, const std::vector<Tensor<float>>& images,
                      Direction direction, bool emitAttention);

Translation translate(const std::filesystem::path& checkpoint, const std::vector<Tensor<float>>& images,
                      Direction direction, bool emitAttention);

/// Writes a (image | heatmap | attended) panel named {step}_{direction}_{real|fake}_attn.png.
std::filesystem::path writeAttentionPanel(const std::filesystem::path& dir, long step, Direction direction,
                                          bool fake, const Tensor<float>& image, const AttentionMap<float>& map);

} // namespace spagan
