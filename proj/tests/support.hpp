#pragma once

// Test-only helpers: finite differences and a direct-loop reference
// implementation of the plain cycle-consistent translator used as an oracle.

#include "spagan/model_set.hpp"
#include "spagan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace spagan::testing {

inline Tensor<double> randomTensor(int c, int h, int w, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(c, h, w);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) {
        t.data.data()[i] = u(rng);
    }
    return t;
}

inline Tensor<float> randomTensorF(int c, int h, int w, std::mt19937_64& rng) {
    return randomTensor(c, h, w, rng).cast<float>();
}

/// Central differences of `f` with respect to every entry of `x`.
inline Tensor<double> numericGradient(const std::function<double(const Tensor<double>&)>& f, Tensor<double> x,
                                      double h = 1e-6) {
    Tensor<double> g(x.channels, x.height, x.width);
    for (Eigen::Index i = 0; i < x.data.size(); ++i) {
        const double saved = x.data.data()[i];
        x.data.data()[i] = saved + h;
        const double up = f(x);
        x.data.data()[i] = saved - h;
        const double down = f(x);
        x.data.data()[i] = saved;
        g.data.data()[i] = (up - down) / (2 * h);
    }
    return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename A, typename B>
double maxRelativeError(const A& a, const B& b, double floor = 1e-6) {
    double worst = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double x = a.data()[i];
        const double y = b.data()[i];
        worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Direct-loop reference network.

struct RefImage {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    RefImage() = default;
    RefImage(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_ * h_ * w_), 0.0) {}

    double& at(int ch, int y, int x) { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
    double at(int ch, int y, int x) const { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
};

inline RefImage toRef(const Tensor<double>& t) {
    RefImage r(t.channels, t.height, t.width);
    for (int c = 0; c < t.channels; ++c)
        for (int y = 0; y < t.height; ++y)
            for (int x = 0; x < t.width; ++x) r.at(c, y, x) = t(c, y, x);
    return r;
}

struct RefConv {
    int cin, cout, k, stride, pad;
    bool reflect;
    std::vector<double> weight; // [cout][cin][k][k]
    std::vector<double> bias;

    RefImage operator()(const RefImage& x) const {
        const int oh = (x.h + 2 * pad - k) / stride + 1;
        const int ow = (x.w + 2 * pad - k) / stride + 1;
        RefImage out(cout, oh, ow);
        auto source = [&](int i, int n) {
            if (i >= 0 && i < n) return i;
            if (!reflect) return -1;
            return i < 0 ? -i : 2 * n - 2 - i;
        };
        for (int o = 0; o < cout; ++o)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias[static_cast<std::size_t>(o)];
                    for (int c = 0; c < cin; ++c)
                        for (int ki = 0; ki < k; ++ki) {
                            const int iy = source(oy * stride - pad + ki, x.h);
                            if (iy < 0) continue;
                            for (int kj = 0; kj < k; ++kj) {
                                const int ix = source(ox * stride - pad + kj, x.w);
                                if (ix < 0) continue;
                                acc += weight[static_cast<std::size_t>(((o * cin + c) * k + ki) * k + kj)] *
                                       x.at(c, iy, ix);
                            }
                        }
                    out.at(o, oy, ox) = acc;
                }
        return out;
    }
};

/// Scatter form of the transposed convolution.
struct RefConvT {
    int cin, cout, k, stride, pad, outPad;
    std::vector<double> weight; // [cin][cout][k][k]
    std::vector<double> bias;

    RefImage operator()(const RefImage& x) const {
        const int oh = (x.h - 1) * stride - 2 * pad + k + outPad;
        const int ow = (x.w - 1) * stride - 2 * pad + k + outPad;
        RefImage out(cout, oh, ow);
        for (int o = 0; o < cout; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) out.at(o, y, xx) = bias[static_cast<std::size_t>(o)];
        for (int c = 0; c < cin; ++c)
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix)
                    for (int o = 0; o < cout; ++o)
                        for (int ki = 0; ki < k; ++ki)
                            for (int kj = 0; kj < k; ++kj) {
                                const int oy = iy * stride - pad + ki;
                                const int ox = ix * stride - pad + kj;
                                if (oy < 0 || ox < 0 || oy >= oh || ox >= ow) continue;
                                out.at(o, oy, ox) +=
                                    x.at(c, iy, ix) *
                                    weight[static_cast<std::size_t>(((c * cout + o) * k + ki) * k + kj)];
                            }
        return out;
    }
};

inline RefImage refInstanceNorm(RefImage x) {
    const double n = x.h * x.w;
    for (int c = 0; c < x.c; ++c) {
        double mean = 0;
        for (int y = 0; y < x.h; ++y)
            for (int xx = 0; xx < x.w; ++xx) mean += x.at(c, y, xx);
        mean /= n;
        double var = 0;
        for (int y = 0; y < x.h; ++y)
            for (int xx = 0; xx < x.w; ++xx) var += (x.at(c, y, xx) - mean) * (x.at(c, y, xx) - mean);
        var /= n;
        const double s = 1.0 / std::sqrt(var + 1e-5);
        for (int y = 0; y < x.h; ++y)
            for (int xx = 0; xx < x.w; ++xx) x.at(c, y, xx) = (x.at(c, y, xx) - mean) * s;
    }
    return x;
}

inline RefImage refLeaky(RefImage x, double slope) {
    for (double& v : x.v) v = v > 0 ? v : slope * v;
    return x;
}

inline RefImage refTanh(RefImage x) {
    for (double& v : x.v) v = std::tanh(v);
    return x;
}

/// Parameter values by name, copied out of a trainer network.
using WeightSnapshot = std::map<std::string, Planes<double>>;

inline WeightSnapshot snapshot(Network<double>& net) {
    WeightSnapshot s;
    for (auto& p : net.parameters()) s[p.name] = p.param->value;
    return s;
}

inline RefConv refConv(const WeightSnapshot& s, const std::string& name, int cin, int cout, int k, int stride, int pad,
                       bool reflect) {
    RefConv c{cin, cout, k, stride, pad, reflect, {}, {}};
    const Planes<double>& w = s.at(name + ".weight");
    const Planes<double>& b = s.at(name + ".bias");
    for (int o = 0; o < cout; ++o)
        for (int i = 0; i < cin; ++i)
            for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) c.weight.push_back(w(o, (i * k + ki) * k + kj));
    for (int o = 0; o < cout; ++o) c.bias.push_back(b(o, 0));
    return c;
}

inline RefConvT refConvT(const WeightSnapshot& s, const std::string& name, int cin, int cout) {
    const int k = 3;
    RefConvT c{cin, cout, k, 2, 1, 1, {}, {}};
    const Planes<double>& w = s.at(name + ".weight");
    const Planes<double>& b = s.at(name + ".bias");
    for (int i = 0; i < cin; ++i)
        for (int o = 0; o < cout; ++o)
            for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) c.weight.push_back(w(i, (o * k + ki) * k + kj));
    for (int o = 0; o < cout; ++o) c.bias.push_back(b(o, 0));
    return c;
}

inline RefImage refGenerator(const WeightSnapshot& s, const GeneratorSpec& spec, RefImage x) {
    const int b = spec.baseWidth;
    const int ch = spec.channels;
    x = refLeaky(refInstanceNorm(refConv(s, "enc1", ch, b, 7, 1, 3, true)(x)), 0.0);
    x = refLeaky(refInstanceNorm(refConv(s, "down1", b, 2 * b, 3, 2, 1, false)(x)), 0.0);
    x = refLeaky(refInstanceNorm(refConv(s, "down2", 2 * b, 4 * b, 3, 2, 1, false)(x)), 0.0);
    for (int r = 0; r < spec.residualBlocks; ++r) {
        const std::string n = "res" + std::to_string(r);
        RefImage h = refLeaky(refInstanceNorm(refConv(s, n + ".conv1", 4 * b, 4 * b, 3, 1, 1, true)(x)), 0.0);
        h = refInstanceNorm(refConv(s, n + ".conv2", 4 * b, 4 * b, 3, 1, 1, true)(h));
        for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += h.v[i];
    }
    x = refLeaky(refInstanceNorm(refConvT(s, "up1", 4 * b, 2 * b)(x)), 0.0);
    x = refLeaky(refInstanceNorm(refConvT(s, "up2", 2 * b, b)(x)), 0.0);
    return refTanh(refConv(s, "out", b, ch, 7, 1, 3, true)(x));
}

inline RefImage refDiscriminator(const WeightSnapshot& s, const DiscriminatorSpec& spec, RefImage x) {
    int in = spec.channels;
    for (int i = 0; i < spec.layerCount; ++i) {
        const int out = spec.baseWidth << std::min(i, 3);
        x = refConv(s, "conv" + std::to_string(i), in, out, 4, 2, 1, false)(x);
        if (i > 0) x = refInstanceNorm(x);
        x = refLeaky(x, 0.2);
        in = out;
    }
    const int wide = spec.baseWidth << std::min(spec.layerCount, 3);
    x = refLeaky(refInstanceNorm(refConv(s, "wide", in, wide, 4, 1, 1, false)(x)), 0.2);
    return refConv(s, "logit", wide, 1, 4, 1, 1, false)(x);
}

inline double refMeanSq(const RefImage& a, double target) {
    double acc = 0;
    for (double v : a.v) acc += (v - target) * (v - target);
    return acc / static_cast<double>(a.v.size());
}

inline double refMeanAbs(const RefImage& a, const RefImage& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) acc += std::abs(a.v[i] - b.v[i]);
    return acc / static_cast<double>(a.v.size());
}

struct RefLosses {
    double gAdv, fAdv, cyc, total, dLossX, dLossY;
};

/// Losses of one plain cycle-consistent least-squares step at the given weights.
inline RefLosses referenceCycleGanStep(const WeightSnapshot& g, const WeightSnapshot& f, const WeightSnapshot& dx,
                                       const WeightSnapshot& dy, const GeneratorSpec& gs, const DiscriminatorSpec& ds,
                                       const RefImage& x, const RefImage& y, double lambdaCyc) {
    const RefImage fakeY = refGenerator(g, gs, x);
    const RefImage fakeX = refGenerator(f, gs, y);
    const RefImage recX = refGenerator(f, gs, fakeY);
    const RefImage recY = refGenerator(g, gs, fakeX);
    RefLosses r{};
    r.gAdv = refMeanSq(refDiscriminator(dy, ds, fakeY), 1.0);
    r.fAdv = refMeanSq(refDiscriminator(dx, ds, fakeX), 1.0);
    r.cyc = refMeanAbs(recX, x) + refMeanAbs(recY, y);
    r.total = r.gAdv + r.fAdv + lambdaCyc * r.cyc;
    r.dLossY = 0.5 * refMeanSq(refDiscriminator(dy, ds, y), 1.0) + 0.5 * refMeanSq(refDiscriminator(dy, ds, fakeY), 0.0);
    r.dLossX = 0.5 * refMeanSq(refDiscriminator(dx, ds, x), 1.0) + 0.5 * refMeanSq(refDiscriminator(dx, ds, fakeX), 0.0);
    return r;
}

} // namespace spagan::testing
