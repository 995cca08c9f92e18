#pragma once

#include "spagan/networks.hpp"

#include <string>
#include <string_view>

namespace spagan {

class AttentionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class AttentionMode { Sum, Max };
enum class UpsampleMethod { Nearest, Bilinear };

inline std::string_view modeName(AttentionMode mode) { return mode == AttentionMode::Sum ? "SUM" : "MAX"; }

inline AttentionMode parseAttentionMode(std::string_view s) {
    if (s == "SUM" || s == "sum") return AttentionMode::Sum;
    if (s == "MAX" || s == "max") return AttentionMode::Max;
    throw AttentionError("unknown attention mode '" + std::string(s) + "' (expected SUM or MAX)");
}

inline std::string_view upsampleName(UpsampleMethod m) { return m == UpsampleMethod::Nearest ? "NEAREST" : "BILINEAR"; }

inline UpsampleMethod parseUpsampleMethod(std::string_view s) {
    if (s == "NEAREST" || s == "nearest") return UpsampleMethod::Nearest;
    if (s == "BILINEAR" || s == "bilinear") return UpsampleMethod::Bilinear;
    throw AttentionError("unknown upsample method '" + std::string(s) + "'");
}

/// Non-negative spatial weighting. Once normalized, the maximum is exactly 1.
template <typename Scalar>
struct AttentionMap {
    Grid<Scalar> values;
    std::string sourceLayer;
    bool normalized = false;

    int height() const { return static_cast<int>(values.rows()); }
    int width() const { return static_cast<int>(values.cols()); }

    static AttentionMap ones(int h, int w, std::string source = "identity") {
        return {Grid<Scalar>::Ones(h, w), std::move(source), true};
    }
};

/// Per-position sum (or max) of absolute activations across the planes of a stack.
template <typename Scalar>
AttentionMap<Scalar> rawAttention(const ActivationStack<Scalar>& stack, AttentionMode mode = AttentionMode::Sum) {
    const Tensor<Scalar>& p = stack.planes;
    if (p.channels < 1 || p.height < 1 || p.width < 1) {
        throw AttentionError("raw attention needs a non-empty activation stack");
    }
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> flat;
    if (mode == AttentionMode::Sum) {
        flat = p.data.cwiseAbs().colwise().sum();
    } else {
        flat = p.data.cwiseAbs().colwise().maxCoeff();
    }
    Grid<Scalar> values = Eigen::Map<Grid<Scalar>>(flat.data(), p.height, p.width);
    return {std::move(values), stack.layerName, false};
}

/// Divides by the maximum. An all-zero map becomes all ones so that applying
/// it leaves the image untouched.
template <typename Scalar>
AttentionMap<Scalar> normalizeMap(const AttentionMap<Scalar>& map) {
    AttentionMap<Scalar> out{map.values, map.sourceLayer, true};
    const Scalar peak = map.values.size() > 0 ? map.values.maxCoeff() : Scalar(0);
    if (peak > Scalar(0)) {
        out.values /= peak;
    } else {
        out.values.setOnes();
    }
    return out;
}

template <typename Scalar>
AttentionMap<Scalar> upsampleMap(const AttentionMap<Scalar>& map, int targetH, int targetW,
                                 UpsampleMethod method = UpsampleMethod::Nearest) {
    const int h = map.height();
    const int w = map.width();
    if (targetH < h || targetW < w) {
        throw AttentionError("attention maps can only be upsampled (" + std::to_string(h) + "x" + std::to_string(w) +
                             " -> " + std::to_string(targetH) + "x" + std::to_string(targetW) + ")");
    }
    AttentionMap<Scalar> out{Grid<Scalar>(targetH, targetW), map.sourceLayer, map.normalized};
    if (method == UpsampleMethod::Nearest) {
        for (int y = 0; y < targetH; ++y) {
            const int sy = static_cast<int>(static_cast<long long>(y) * h / targetH);
            for (int x = 0; x < targetW; ++x) {
                out.values(y, x) = map.values(sy, static_cast<int>(static_cast<long long>(x) * w / targetW));
            }
        }
        return out;
    }
    // Half-pixel centres, clamped at the borders.
    auto source = [](int dst, int in, int outSize) {
        const double s = (dst + 0.5) * in / outSize - 0.5;
        const double clamped = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const int lo = static_cast<int>(clamped);
        const int hi = std::min(lo + 1, in - 1);
        return std::tuple<int, int, Scalar>{lo, hi, static_cast<Scalar>(clamped - lo)};
    };
    for (int y = 0; y < targetH; ++y) {
        const auto [y0, y1, fy] = source(y, h, targetH);
        for (int x = 0; x < targetW; ++x) {
            const auto [x0, x1, fx] = source(x, w, targetW);
            const Scalar top = (Scalar(1) - fx) * map.values(y0, x0) + fx * map.values(y0, x1);
            const Scalar bottom = (Scalar(1) - fx) * map.values(y1, x0) + fx * map.values(y1, x1);
            out.values(y, x) = (Scalar(1) - fy) * top + fy * bottom;
        }
    }
    return out;
}

/// out(c, h, w) = map(h, w) * img(c, h, w).
template <typename Scalar>
Tensor<Scalar> applyAttention(const Tensor<Scalar>& img, const AttentionMap<Scalar>& map) {
    if (map.height() != img.height || map.width() != img.width) {
        throw ShapeError("attention map " + std::to_string(map.height()) + "x" + std::to_string(map.width()) +
                         " does not match image " + img.shapeString());
    }
    Tensor<Scalar> out = img;
    const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> flat(map.values.data(), map.values.size());
    out.data.array().rowwise() *= flat.array();
    return out;
}

/// Gradient of a downstream loss with respect to the image fed to applyAttention.
template <typename Scalar>
Tensor<Scalar> applyAttentionBackward(const Tensor<Scalar>& gradOut, const AttentionMap<Scalar>& map) {
    return applyAttention(gradOut, map);
}

template <typename Scalar>
struct Attended {
    Tensor<Scalar> image;
    AttentionMap<Scalar> map;
};

/// Discriminator tap -> raw map -> normalize -> upsample -> product. The map
/// is a constant: no trace is kept, so nothing flows back into the discriminator.
template <typename Scalar>
Attended<Scalar> attend(const Discriminator<Scalar>& disc, const Tensor<Scalar>& img,
                        AttentionMode mode = AttentionMode::Sum, UpsampleMethod method = UpsampleMethod::Nearest) {
    const DiscriminatorOutput<Scalar> out = disc.forward(img);
    AttentionMap<Scalar> map = upsampleMap(normalizeMap(rawAttention(out.tap, mode)), img.height, img.width, method);
    Tensor<Scalar> attended = applyAttention(img, map);
    return {std::move(attended), std::move(map)};
}

template <typename Scalar>
Attended<Scalar> identityAttention(const Tensor<Scalar>& img) {
    return {img, AttentionMap<Scalar>::ones(img.height, img.width)};
}

} // namespace spagan
