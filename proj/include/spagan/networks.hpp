#pragma once

#include "spagan/layers.hpp"

#include <algorithm>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace spagan {

class SpecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Generator layers whose activation stacks can be exposed by a forward pass.
/// ENC1 is the first encoder block output, DEC1 the first upsampling block
/// output and DEC4 the output convolution before the tanh.
enum class TapLayer { ENC1, DEC1, DEC4 };

inline std::string_view tapName(TapLayer tap) {
    switch (tap) {
    case TapLayer::ENC1: return "ENC1";
    case TapLayer::DEC1: return "DEC1";
    case TapLayer::DEC4: return "DEC4";
    }
    return "?";
}

inline TapLayer parseTapLayer(std::string_view name) {
    if (name == "ENC1") return TapLayer::ENC1;
    if (name == "DEC1") return TapLayer::DEC1;
    if (name == "DEC4") return TapLayer::DEC4;
    throw TapError("unknown tap layer '" + std::string(name) + "' (expected ENC1, DEC1 or DEC4)");
}

inline constexpr std::string_view kSecondToLast = "SECOND_TO_LAST";

struct GeneratorSpec {
    int baseWidth = 8;
    int residualBlocks = 2;
    int imageSize = 32;
    int channels = 3;
    TapLayer tapLayer = TapLayer::DEC1;

    /// Six blocks below 256 pixels, nine at or above.
    static int defaultResidualBlocks(int imageSize) { return imageSize >= 256 ? 9 : 6; }

    void validate() const {
        if (baseWidth < 4) throw SpecError("generator baseWidth must be >= 4");
        if (residualBlocks < 1) throw SpecError("generator residualBlocks must be >= 1");
        if (channels < 1) throw SpecError("generator channels must be >= 1");
        if (imageSize % 4 != 0) throw SpecError("generator imageSize must be divisible by 4");
        if (imageSize < 8) throw SpecError("generator imageSize must be >= 8");
    }

    bool operator==(const GeneratorSpec&) const = default;
};

struct DiscriminatorSpec {
    int baseWidth = 8;
    int layerCount = 2;
    int imageSize = 32;
    int channels = 3;

    int widthAt(int layer) const { return baseWidth << std::min(layer, 3); }

    /// Side of the stride-2 stack output, then of the two stride-1 convs.
    std::pair<int, int> tapAndLogitSide() const {
        int side = imageSize;
        for (int i = 0; i < layerCount; ++i) {
            side = (side + 2 - 4) / 2 + 1;
        }
        const int tap = side - 1;
        return {tap, tap - 1};
    }

    void validate() const {
        if (baseWidth < 4) throw SpecError("discriminator baseWidth must be >= 4");
        if (layerCount < 2) throw SpecError("discriminator layerCount must be >= 2");
        if (channels < 1) throw SpecError("discriminator channels must be >= 1");
        int side = imageSize;
        for (int i = 0; i < layerCount; ++i) {
            if (side + 2 < 4) throw SpecError("discriminator spatial size collapses below 1x1");
            side = (side + 2 - 4) / 2 + 1;
        }
        if (tapAndLogitSide().second < 1) {
            throw SpecError("discriminator spatial size collapses below 1x1 (image too small for layerCount)");
        }
    }

    bool operator==(const DiscriminatorSpec&) const = default;
};

/// A stack of layers with optional tap points and per-call traces.
template <typename Scalar>
class Network {
public:
    using Trace = std::vector<LayerCache<Scalar>>;

    Network() = default;
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    std::vector<NamedParam<Scalar>> parameters() {
        std::vector<NamedParam<Scalar>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (!names_[i].empty()) {
                layers_[i]->collect(names_[i], out);
            }
        }
        return out;
    }

    void zeroGrad() {
        for (auto& p : parameters()) {
            p.param->zeroGrad();
        }
    }

    Scalar gradientAbsSum() {
        Scalar total = 0;
        for (auto& p : parameters()) {
            total += p.param->grad.cwiseAbs().sum();
        }
        return total;
    }

    /// Copies weight values (not gradients) from a network with identical layout.
    void copyWeightsFrom(Network& other) {
        auto mine = parameters();
        auto theirs = other.parameters();
        if (mine.size() != theirs.size()) {
            throw SpecError("copyWeightsFrom: parameter layout mismatch");
        }
        for (std::size_t i = 0; i < mine.size(); ++i) {
            if (mine[i].name != theirs[i].name ||
                mine[i].param->value.rows() != theirs[i].param->value.rows() ||
                mine[i].param->value.cols() != theirs[i].param->value.cols()) {
                throw SpecError("copyWeightsFrom: mismatch at " + mine[i].name);
            }
            mine[i].param->value = theirs[i].param->value;
        }
    }

protected:
    void add(std::string name, LayerPtr<Scalar> layer) {
        names_.push_back(std::move(name));
        layers_.push_back(std::move(layer));
    }

    int lastIndex() const { return static_cast<int>(layers_.size()) - 1; }

    // Runs every layer; captures the output of layer `tapIndex` when >= 0.
    Tensor<Scalar> run(const Tensor<Scalar>& x, Trace* trace, int tapIndex, Tensor<Scalar>* tapOut) const {
        if (trace != nullptr) {
            trace->assign(layers_.size(), LayerCache<Scalar>{});
        }
        Tensor<Scalar> h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i]->forward(h, trace != nullptr ? &(*trace)[i] : nullptr);
            if (static_cast<int>(i) == tapIndex && tapOut != nullptr) {
                *tapOut = h;
            }
        }
        return h;
    }

    // Reverse pass; `tapGrad` is added to the gradient flowing out of layer `tapIndex`.
    Tensor<Scalar> runBackward(const Trace& trace, const Tensor<Scalar>& gradOut, int tapIndex,
                               const Tensor<Scalar>* tapGrad, ParamGrad mode) {
        if (trace.size() != layers_.size()) {
            throw std::logic_error("backward called with a trace from a different network");
        }
        Tensor<Scalar> g = gradOut;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            if (static_cast<int>(i) == tapIndex && tapGrad != nullptr) {
                requireSameShape(g, *tapGrad, "tap gradient");
                g.data += tapGrad->data;
            }
            g = layers_[i]->backward(trace[i], g, mode);
        }
        return g;
    }

    std::vector<LayerPtr<Scalar>> layers_;
    std::vector<std::string> names_;
};

template <typename Scalar>
struct GeneratorOutput {
    Tensor<Scalar> output;
    std::optional<ActivationStack<Scalar>> tap;
};

/// Residual encoder-decoder image translator: 7x7 conv, two stride-2 convs,
/// residual blocks, two stride-2 transposed convs, 7x7 conv, tanh.
template <typename Scalar>
class Generator : public Network<Scalar> {
public:
    using Trace = typename Network<Scalar>::Trace;

    template <typename Rng>
    Generator(const GeneratorSpec& spec, Rng& rng) : spec_(spec) {
        spec.validate();
        const int b = spec.baseWidth;
        const int c = spec.channels;
        this->add("enc1", std::make_unique<Conv2d<Scalar>>(c, b, 7, 1, 3, Padding::Reflect, rng));
        this->add("", std::make_unique<InstanceNorm<Scalar>>());
        this->add("", makeRelu<Scalar>());
        enc1_ = this->lastIndex();
        this->add("down1", std::make_unique<Conv2d<Scalar>>(b, 2 * b, 3, 2, 1, Padding::Zero, rng));
        this->add("", std::make_unique<InstanceNorm<Scalar>>());
        this->add("", makeRelu<Scalar>());
        this->add("down2", std::make_unique<Conv2d<Scalar>>(2 * b, 4 * b, 3, 2, 1, Padding::Zero, rng));
        this->add("", std::make_unique<InstanceNorm<Scalar>>());
        this->add("", makeRelu<Scalar>());
        for (int i = 0; i < spec.residualBlocks; ++i) {
            this->add("res" + std::to_string(i), std::make_unique<ResidualBlock<Scalar>>(4 * b, rng));
        }
        this->add("up1", std::make_unique<ConvTranspose2d<Scalar>>(4 * b, 2 * b, 3, 2, 1, 1, rng));
        this->add("", std::make_unique<InstanceNorm<Scalar>>());
        this->add("", makeRelu<Scalar>());
        dec1_ = this->lastIndex();
        this->add("up2", std::make_unique<ConvTranspose2d<Scalar>>(2 * b, b, 3, 2, 1, 1, rng));
        this->add("", std::make_unique<InstanceNorm<Scalar>>());
        this->add("", makeRelu<Scalar>());
        this->add("out", std::make_unique<Conv2d<Scalar>>(b, c, 7, 1, 3, Padding::Reflect, rng));
        dec4_ = this->lastIndex();
        this->add("", std::make_unique<Tanh<Scalar>>());
    }

    const GeneratorSpec& spec() const { return spec_; }

    GeneratorOutput<Scalar> forward(const Tensor<Scalar>& x, std::optional<TapLayer> tap = std::nullopt,
                                    Trace* trace = nullptr) const {
        checkInput(x);
        GeneratorOutput<Scalar> result;
        if (tap.has_value()) {
            Tensor<Scalar> captured;
            result.output = this->run(x, trace, tapIndex(*tap), &captured);
            result.tap = ActivationStack<Scalar>{std::move(captured), std::string(tapName(*tap))};
        } else {
            result.output = this->run(x, trace, -1, nullptr);
        }
        return result;
    }

    /// Propagates `gradOut` (and optionally a gradient on the tapped stack) back to the input.
    Tensor<Scalar> backward(const Trace& trace, const Tensor<Scalar>& gradOut,
                            std::optional<TapLayer> tap = std::nullopt, const Tensor<Scalar>* tapGrad = nullptr,
                            ParamGrad mode = ParamGrad::Accumulate) {
        const int index = tap.has_value() ? tapIndex(*tap) : -1;
        return this->runBackward(trace, gradOut, index, tap.has_value() ? tapGrad : nullptr, mode);
    }

    int tapIndex(TapLayer tap) const {
        switch (tap) {
        case TapLayer::ENC1: return enc1_;
        case TapLayer::DEC1: return dec1_;
        case TapLayer::DEC4: return dec4_;
        }
        throw TapError("unknown tap layer");
    }

private:
    void checkInput(const Tensor<Scalar>& x) const {
        if (x.channels != spec_.channels || x.height != spec_.imageSize || x.width != spec_.imageSize) {
            throw ShapeError("generator input " + x.shapeString() + " does not match spec " +
                             std::to_string(spec_.channels) + "x" + std::to_string(spec_.imageSize) + "x" +
                             std::to_string(spec_.imageSize));
        }
    }

    GeneratorSpec spec_;
    int enc1_ = -1;
    int dec1_ = -1;
    int dec4_ = -1;
};

template <typename Scalar>
struct DiscriminatorOutput {
    Tensor<Scalar> logits;
    ActivationStack<Scalar> tap;
};

/// Patch discriminator: stride-2 4x4 convs doubling width, a wide stride-1
/// conv (the SECOND_TO_LAST tap, taken after its activation) and a final
/// 4x4 conv to one logit channel.
template <typename Scalar>
class Discriminator : public Network<Scalar> {
public:
    using Trace = typename Network<Scalar>::Trace;

    template <typename Rng>
    Discriminator(const DiscriminatorSpec& spec, Rng& rng) : spec_(spec) {
        spec.validate();
        const Scalar slope = Scalar(0.2);
        int in = spec.channels;
        for (int i = 0; i < spec.layerCount; ++i) {
            const int out = spec.widthAt(i);
            this->add("conv" + std::to_string(i), std::make_unique<Conv2d<Scalar>>(in, out, 4, 2, 1, Padding::Zero, rng));
            if (i > 0) {
                this->add("", std::make_unique<InstanceNorm<Scalar>>());
            }
            this->add("", std::make_unique<LeakyRelu<Scalar>>(slope));
            in = out;
        }
        const int wide = spec.widthAt(spec.layerCount);
        this->add("wide", std::make_unique<Conv2d<Scalar>>(in, wide, 4, 1, 1, Padding::Zero, rng));
        this->add("", std::make_unique<InstanceNorm<Scalar>>());
        this->add("", std::make_unique<LeakyRelu<Scalar>>(slope));
        tapIndex_ = this->lastIndex();
        this->add("logit", std::make_unique<Conv2d<Scalar>>(wide, 1, 4, 1, 1, Padding::Zero, rng));
    }

    const DiscriminatorSpec& spec() const { return spec_; }

    /// (channels, height, width) of the SECOND_TO_LAST stack.
    std::tuple<int, int, int> tapShape() const {
        const int side = spec_.tapAndLogitSide().first;
        return {spec_.widthAt(spec_.layerCount), side, side};
    }

    int logitSide() const { return spec_.tapAndLogitSide().second; }

    DiscriminatorOutput<Scalar> forward(const Tensor<Scalar>& img, Trace* trace = nullptr) const {
        if (img.channels != spec_.channels || img.height != spec_.imageSize || img.width != spec_.imageSize) {
            throw ShapeError("discriminator input " + img.shapeString() + " does not match spec");
        }
        DiscriminatorOutput<Scalar> result;
        result.logits = this->run(img, trace, tapIndex_, &result.tap.planes);
        result.tap.layerName = std::string(kSecondToLast);
        return result;
    }

    Tensor<Scalar> backward(const Trace& trace, const Tensor<Scalar>& gradLogits,
                            ParamGrad mode = ParamGrad::Accumulate) {
        return this->runBackward(trace, gradLogits, -1, nullptr, mode);
    }

    /// Final 1-channel convolution, exposed for tests that pin its weights.
    Conv2d<Scalar>& logitLayer() { return static_cast<Conv2d<Scalar>&>(*this->layers_.back()); }
    Conv2d<Scalar>& wideLayer() { return static_cast<Conv2d<Scalar>&>(*this->layers_[tapIndex_ - 2]); }

private:
    DiscriminatorSpec spec_;
    int tapIndex_ = -1;
};

} // namespace spagan
