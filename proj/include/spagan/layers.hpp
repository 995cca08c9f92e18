#pragma once

#include "spagan/tensor.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace spagan {

/// A trainable weight block together with its accumulated gradient.
template <typename Scalar>
struct Param {
    Planes<Scalar> value;
    Planes<Scalar> grad;

    Param() = default;
    Param(Eigen::Index rows, Eigen::Index cols)
        : value(Planes<Scalar>::Zero(rows, cols)), grad(Planes<Scalar>::Zero(rows, cols)) {}

    void zeroGrad() { grad.setZero(); }
};

template <typename Scalar>
struct NamedParam {
    std::string name;
    Param<Scalar>* param;
};

/// Whether a backward pass accumulates weight gradients or only propagates
/// the input gradient (weights frozen).
enum class ParamGrad { Accumulate, Frozen };

/// Per-invocation state recorded by a forward pass. A layer may be invoked
/// several times in one training step; each call owns its own cache.
template <typename Scalar>
struct LayerCache {
    Tensor<Scalar> input;
    Tensor<Scalar> output;
    Planes<Scalar> cols;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> stat;
    std::vector<LayerCache> children;
};

template <typename Scalar>
class Layer {
public:
    virtual ~Layer() = default;

    /// `cache` may be null for inference-only passes.
    virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerCache<Scalar>* cache) const = 0;
    virtual Tensor<Scalar> backward(const LayerCache<Scalar>& cache, const Tensor<Scalar>& gradOut, ParamGrad mode) = 0;
    virtual void collect(const std::string& /*prefix*/, std::vector<NamedParam<Scalar>>& /*out*/) {}
    virtual std::string kind() const = 0;
};

template <typename Scalar>
using LayerPtr = std::unique_ptr<Layer<Scalar>>;

enum class Padding { Zero, Reflect };

/// Geometry of a sliding-window pass over an image of the given size.
struct PatchGeometry {
    int channels = 0;
    int height = 0;
    int width = 0;
    int kernel = 1;
    int stride = 1;
    int pad = 0;
    Padding padding = Padding::Zero;

    int outHeight() const { return (height + 2 * pad - kernel) / stride + 1; }
    int outWidth() const { return (width + 2 * pad - kernel) / stride + 1; }
    int patchSize() const { return channels * kernel * kernel; }
};

namespace detail {

// Maps a padded coordinate to a source index, or -1 for a zero-padded tap.
inline int resolveIndex(int i, int n, Padding padding) {
    if (i >= 0 && i < n) {
        return i;
    }
    if (padding == Padding::Zero) {
        return -1;
    }
    if (i < 0) {
        return -i;
    }
    return 2 * (n - 1) - i;
}

inline void validate(const PatchGeometry& g) {
    if (g.outHeight() < 1 || g.outWidth() < 1) {
        throw ShapeError("convolution output collapses below 1x1");
    }
    if (g.padding == Padding::Reflect && (g.pad >= g.height || g.pad >= g.width)) {
        throw ShapeError("reflection padding must be smaller than the image side");
    }
}

} // namespace detail

template <typename Scalar>
Planes<Scalar> im2col(const Tensor<Scalar>& x, const PatchGeometry& g) {
    detail::validate(g);
    const int oh = g.outHeight();
    const int ow = g.outWidth();
    const int k = g.kernel;
    Planes<Scalar> cols = Planes<Scalar>::Zero(g.patchSize(), oh * ow);
    for (int c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const int row = (c * k + ki) * k + kj;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = detail::resolveIndex(oy * g.stride - g.pad + ki, g.height, g.padding);
                    if (iy < 0) {
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = detail::resolveIndex(ox * g.stride - g.pad + kj, g.width, g.padding);
                        if (ix >= 0) {
                            cols(row, oy * ow + ox) = x(c, iy, ix);
                        }
                    }
                }
            }
        }
    }
    return cols;
}

/// Adjoint of im2col: scatters patch columns back onto the image, summing overlaps.
template <typename Scalar>
Tensor<Scalar> col2im(const Planes<Scalar>& cols, const PatchGeometry& g) {
    detail::validate(g);
    const int oh = g.outHeight();
    const int ow = g.outWidth();
    const int k = g.kernel;
    Tensor<Scalar> x(g.channels, g.height, g.width);
    for (int c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const int row = (c * k + ki) * k + kj;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = detail::resolveIndex(oy * g.stride - g.pad + ki, g.height, g.padding);
                    if (iy < 0) {
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = detail::resolveIndex(ox * g.stride - g.pad + kj, g.width, g.padding);
                        if (ix >= 0) {
                            x(c, iy, ix) += cols(row, oy * ow + ox);
                        }
                    }
                }
            }
        }
    }
    return x;
}

template <typename Scalar, typename Rng>
void fillGaussian(Planes<Scalar>& m, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<Scalar>(dist(rng));
    }
}

/// Weight initialization shared by every trainable layer.
inline constexpr double kInitStddev = 0.02;

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
public:
    template <typename Rng>
    Conv2d(int inChannels, int outChannels, int kernel, int stride, int pad, Padding padding, Rng& rng)
        : inChannels_(inChannels), outChannels_(outChannels), kernel_(kernel), stride_(stride), pad_(pad),
          padding_(padding), weight_(outChannels, inChannels * kernel * kernel), bias_(outChannels, 1) {
        fillGaussian(weight_.value, rng, kInitStddev);
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerCache<Scalar>* cache) const override {
        if (x.channels != inChannels_) {
            throw ShapeError("conv2d: expected " + std::to_string(inChannels_) + " input channels, got " +
                             std::to_string(x.channels));
        }
        const PatchGeometry g = geometry(x);
        Planes<Scalar> cols = im2col(x, g);
        Planes<Scalar> out = weight_.value * cols;
        out.colwise() += bias_.value.col(0);
        if (cache != nullptr) {
            cache->input = x;
            cache->cols = std::move(cols);
        }
        return Tensor<Scalar>(outChannels_, g.outHeight(), g.outWidth(), std::move(out));
    }

    Tensor<Scalar> backward(const LayerCache<Scalar>& cache, const Tensor<Scalar>& gradOut, ParamGrad mode) override {
        if (mode == ParamGrad::Accumulate) {
            weight_.grad.noalias() += gradOut.data * cache.cols.transpose();
            bias_.grad.col(0) += gradOut.data.rowwise().sum();
        }
        Planes<Scalar> gradCols = weight_.value.transpose() * gradOut.data;
        return col2im(gradCols, geometry(cache.input));
    }

    void collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) override {
        out.push_back({prefix + ".weight", &weight_});
        out.push_back({prefix + ".bias", &bias_});
    }

    std::string kind() const override { return "conv2d"; }

    Param<Scalar>& weight() { return weight_; }
    Param<Scalar>& bias() { return bias_; }
    int outChannels() const { return outChannels_; }

private:
    PatchGeometry geometry(const Tensor<Scalar>& x) const {
        return {x.channels, x.height, x.width, kernel_, stride_, pad_, padding_};
    }

    int inChannels_;
    int outChannels_;
    int kernel_;
    int stride_;
    int pad_;
    Padding padding_;
    Param<Scalar> weight_;
    Param<Scalar> bias_;
};

/// Fractionally-strided convolution; output side is (in - 1) * stride - 2 * pad + kernel + outputPad.
template <typename Scalar>
class ConvTranspose2d final : public Layer<Scalar> {
public:
    template <typename Rng>
    ConvTranspose2d(int inChannels, int outChannels, int kernel, int stride, int pad, int outputPad, Rng& rng)
        : inChannels_(inChannels), outChannels_(outChannels), kernel_(kernel), stride_(stride), pad_(pad),
          outputPad_(outputPad), weight_(inChannels, outChannels * kernel * kernel), bias_(outChannels, 1) {
        fillGaussian(weight_.value, rng, kInitStddev);
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerCache<Scalar>* cache) const override {
        if (x.channels != inChannels_) {
            throw ShapeError("conv_transpose2d: expected " + std::to_string(inChannels_) + " input channels");
        }
        const PatchGeometry g = geometry(x);
        Planes<Scalar> cols = weight_.value.transpose() * x.data;
        Tensor<Scalar> out = col2im(cols, g);
        out.data.colwise() += bias_.value.col(0);
        if (cache != nullptr) {
            cache->input = x;
        }
        return out;
    }

    Tensor<Scalar> backward(const LayerCache<Scalar>& cache, const Tensor<Scalar>& gradOut, ParamGrad mode) override {
        const Planes<Scalar> gradCols = im2col(gradOut, geometry(cache.input));
        if (mode == ParamGrad::Accumulate) {
            weight_.grad.noalias() += cache.input.data * gradCols.transpose();
            bias_.grad.col(0) += gradOut.data.rowwise().sum();
        }
        Planes<Scalar> gradIn = weight_.value * gradCols;
        return Tensor<Scalar>(cache.input.channels, cache.input.height, cache.input.width, std::move(gradIn));
    }

    void collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) override {
        out.push_back({prefix + ".weight", &weight_});
        out.push_back({prefix + ".bias", &bias_});
    }

    std::string kind() const override { return "conv_transpose2d"; }

private:
    // Geometry of the equivalent forward convolution over the (larger) output.
    PatchGeometry geometry(const Tensor<Scalar>& x) const {
        const int oh = (x.height - 1) * stride_ - 2 * pad_ + kernel_ + outputPad_;
        const int ow = (x.width - 1) * stride_ - 2 * pad_ + kernel_ + outputPad_;
        return {outChannels_, oh, ow, kernel_, stride_, pad_, Padding::Zero};
    }

    int inChannels_;
    int outChannels_;
    int kernel_;
    int stride_;
    int pad_;
    int outputPad_;
    Param<Scalar> weight_;
    Param<Scalar> bias_;
};

/// Per-channel normalization over the spatial extent, no affine terms.
template <typename Scalar>
class InstanceNorm final : public Layer<Scalar> {
public:
    explicit InstanceNorm(Scalar eps = Scalar(1e-5)) : eps_(eps) {}

    Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerCache<Scalar>* cache) const override {
        Tensor<Scalar> out(x.channels, x.height, x.width);
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> invStd(x.channels);
        const Scalar n = static_cast<Scalar>(x.height * x.width);
        for (int c = 0; c < x.channels; ++c) {
            const auto row = x.data.row(c).array();
            const Scalar mean = row.sum() / n;
            const Scalar var = (row - mean).square().sum() / n;
            invStd(c) = Scalar(1) / std::sqrt(var + eps_);
            out.data.row(c) = (row - mean) * invStd(c);
        }
        if (cache != nullptr) {
            cache->output = out;
            cache->stat = std::move(invStd);
        }
        return out;
    }

    Tensor<Scalar> backward(const LayerCache<Scalar>& cache, const Tensor<Scalar>& gradOut, ParamGrad) override {
        const Tensor<Scalar>& xhat = cache.output;
        Tensor<Scalar> gradIn(gradOut.channels, gradOut.height, gradOut.width);
        const Scalar n = static_cast<Scalar>(gradOut.height * gradOut.width);
        for (int c = 0; c < gradOut.channels; ++c) {
            const auto dy = gradOut.data.row(c).array();
            const auto xh = xhat.data.row(c).array();
            const Scalar meanDy = dy.sum() / n;
            const Scalar meanDyXhat = (dy * xh).sum() / n;
            gradIn.data.row(c) = cache.stat(c) * (dy - meanDy - xh * meanDyXhat);
        }
        return gradIn;
    }

    std::string kind() const override { return "instance_norm"; }

private:
    Scalar eps_;
};

template <typename Scalar>
class LeakyRelu final : public Layer<Scalar> {
public:
    explicit LeakyRelu(Scalar slope) : slope_(slope) {}

    Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerCache<Scalar>* cache) const override {
        Tensor<Scalar> out = x;
        out.data = (x.data.array() > Scalar(0)).select(x.data, slope_ * x.data);
        if (cache != nullptr) {
            cache->input = x;
        }
        return out;
    }

    Tensor<Scalar> backward(const LayerCache<Scalar>& cache, const Tensor<Scalar>& gradOut, ParamGrad) override {
        Tensor<Scalar> gradIn = gradOut;
        gradIn.data = (cache.input.data.array() > Scalar(0)).select(gradOut.data, slope_ * gradOut.data);
        return gradIn;
    }

    std::string kind() const override { return slope_ == Scalar(0) ? "relu" : "leaky_relu"; }

private:
    Scalar slope_;
};

template <typename Scalar>
LayerPtr<Scalar> makeRelu() {
    return std::make_unique<LeakyRelu<Scalar>>(Scalar(0));
}

template <typename Scalar>
class Tanh final : public Layer<Scalar> {
public:
    Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerCache<Scalar>* cache) const override {
        Tensor<Scalar> out = x;
        out.data = x.data.array().tanh();
        if (cache != nullptr) {
            cache->output = out;
        }
        return out;
    }

    Tensor<Scalar> backward(const LayerCache<Scalar>& cache, const Tensor<Scalar>& gradOut, ParamGrad) override {
        Tensor<Scalar> gradIn = gradOut;
        gradIn.data = gradOut.data.array() * (Scalar(1) - cache.output.data.array().square());
        return gradIn;
    }

    std::string kind() const override { return "tanh"; }
};

/// Averages each plane down to a single value (C x 1 x 1).
template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
public:
    Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerCache<Scalar>* cache) const override {
        Tensor<Scalar> out(x.channels, 1, 1);
        out.data.col(0) = x.data.rowwise().mean();
        if (cache != nullptr) {
            cache->input = Tensor<Scalar>(x.channels, x.height, x.width);
        }
        return out;
    }

    Tensor<Scalar> backward(const LayerCache<Scalar>& cache, const Tensor<Scalar>& gradOut, ParamGrad) override {
        const auto& shape = cache.input;
        Tensor<Scalar> gradIn(shape.channels, shape.height, shape.width);
        const Scalar n = static_cast<Scalar>(shape.height * shape.width);
        for (int c = 0; c < shape.channels; ++c) {
            gradIn.data.row(c).setConstant(gradOut.data(c, 0) / n);
        }
        return gradIn;
    }

    std::string kind() const override { return "global_avg_pool"; }
};

/// Runs `layers` in order, keeping one child cache per layer.
template <typename Scalar>
Tensor<Scalar> forwardChain(const std::vector<LayerPtr<Scalar>>& layers, const Tensor<Scalar>& x,
                            LayerCache<Scalar>* cache) {
    if (cache != nullptr) {
        cache->children.assign(layers.size(), LayerCache<Scalar>{});
    }
    Tensor<Scalar> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i]->forward(h, cache != nullptr ? &cache->children[i] : nullptr);
    }
    return h;
}

template <typename Scalar>
Tensor<Scalar> backwardChain(std::vector<LayerPtr<Scalar>>& layers, const LayerCache<Scalar>& cache,
                             const Tensor<Scalar>& gradOut, ParamGrad mode) {
    Tensor<Scalar> g = gradOut;
    for (std::size_t i = layers.size(); i-- > 0;) {
        g = layers[i]->backward(cache.children[i], g, mode);
    }
    return g;
}

/// x + IN(conv(ReLU(IN(conv(x))))), both convs 3x3 with reflection padding.
template <typename Scalar>
class ResidualBlock final : public Layer<Scalar> {
public:
    template <typename Rng>
    ResidualBlock(int channels, Rng& rng) {
        body_.push_back(std::make_unique<Conv2d<Scalar>>(channels, channels, 3, 1, 1, Padding::Reflect, rng));
        body_.push_back(std::make_unique<InstanceNorm<Scalar>>());
        body_.push_back(makeRelu<Scalar>());
        body_.push_back(std::make_unique<Conv2d<Scalar>>(channels, channels, 3, 1, 1, Padding::Reflect, rng));
        body_.push_back(std::make_unique<InstanceNorm<Scalar>>());
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerCache<Scalar>* cache) const override {
        Tensor<Scalar> out = forwardChain(body_, x, cache);
        out.data += x.data;
        return out;
    }

    Tensor<Scalar> backward(const LayerCache<Scalar>& cache, const Tensor<Scalar>& gradOut, ParamGrad mode) override {
        Tensor<Scalar> gradIn = backwardChain(body_, cache, gradOut, mode);
        gradIn.data += gradOut.data;
        return gradIn;
    }

    void collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) override {
        static_cast<Conv2d<Scalar>&>(*body_[0]).collect(prefix + ".conv1", out);
        static_cast<Conv2d<Scalar>&>(*body_[3]).collect(prefix + ".conv2", out);
    }

    std::string kind() const override { return "residual_block"; }

private:
    std::vector<LayerPtr<Scalar>> body_;
};

} // namespace spagan
