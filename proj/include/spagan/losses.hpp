#pragma once

#include "spagan/tensor.hpp"

#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace spagan {

class LossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LossWeights {
    double lambdaCyc = 10.0;
    double lambdaFm = 1.0;

    void validate() const {
        if (!std::isfinite(lambdaCyc) || lambdaCyc < 0 || !std::isfinite(lambdaFm) || lambdaFm < 0) {
            throw LossError("loss weights must be finite and non-negative");
        }
    }
};

/// How the plane-wise L1 norms of the feature-map loss are scaled.
/// PlaneSum is the literal channel-averaged sum; SpatialMean also divides by H*W.
enum class FeatureNorm { PlaneSum, SpatialMean };

namespace detail {

template <typename Scalar>
void requireFinite(const Tensor<Scalar>& t, const char* what) {
    if (!t.allFinite()) {
        throw LossError(std::string(what) + ": non-finite input");
    }
}

template <typename Derived>
auto signOf(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    return m.unaryExpr([](Scalar v) { return static_cast<Scalar>((v > Scalar(0)) - (v < Scalar(0))); });
}

} // namespace detail

/// 1/2 mean((real - 1)^2) + 1/2 mean(fake^2) over all patch positions.
template <typename Scalar>
Scalar lsganDLoss(const Tensor<Scalar>& realLogits, const Tensor<Scalar>& fakeLogits) {
    detail::requireFinite(realLogits, "lsgan_d_loss");
    detail::requireFinite(fakeLogits, "lsgan_d_loss");
    const Scalar real = (realLogits.data.array() - Scalar(1)).square().mean();
    const Scalar fake = fakeLogits.data.array().square().mean();
    return Scalar(0.5) * real + Scalar(0.5) * fake;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> lsganDLossGrad(const Tensor<Scalar>& realLogits,
                                                         const Tensor<Scalar>& fakeLogits) {
    Tensor<Scalar> dReal = realLogits;
    Tensor<Scalar> dFake = fakeLogits;
    dReal.data = (realLogits.data.array() - Scalar(1)) / static_cast<Scalar>(realLogits.size());
    dFake.data = fakeLogits.data / static_cast<Scalar>(fakeLogits.size());
    return {std::move(dReal), std::move(dFake)};
}

/// mean((fake - 1)^2).
template <typename Scalar>
Scalar lsganGLoss(const Tensor<Scalar>& fakeLogits) {
    detail::requireFinite(fakeLogits, "lsgan_g_loss");
    return (fakeLogits.data.array() - Scalar(1)).square().mean();
}

template <typename Scalar>
Tensor<Scalar> lsganGLossGrad(const Tensor<Scalar>& fakeLogits) {
    Tensor<Scalar> d = fakeLogits;
    d.data = Scalar(2) * (fakeLogits.data.array() - Scalar(1)) / static_cast<Scalar>(fakeLogits.size());
    return d;
}

/// meanAbs(recX - xA) + meanAbs(recY - yA).
template <typename Scalar>
Scalar cycleLoss(const Tensor<Scalar>& recX, const Tensor<Scalar>& xA, const Tensor<Scalar>& recY,
                 const Tensor<Scalar>& yA) {
    requireSameShape(recX, xA, "cycle_loss");
    requireSameShape(recY, yA, "cycle_loss");
    return (recX.data - xA.data).cwiseAbs().mean() + (recY.data - yA.data).cwiseAbs().mean();
}

/// Gradients with respect to recX and recY; the targets receive the negations.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> cycleLossGrad(const Tensor<Scalar>& recX, const Tensor<Scalar>& xA,
                                                        const Tensor<Scalar>& recY, const Tensor<Scalar>& yA) {
    requireSameShape(recX, xA, "cycle_loss");
    requireSameShape(recY, yA, "cycle_loss");
    Tensor<Scalar> dX = recX;
    Tensor<Scalar> dY = recY;
    dX.data = detail::signOf(recX.data - xA.data) / static_cast<Scalar>(recX.size());
    dY.data = detail::signOf(recY.data - yA.data) / static_cast<Scalar>(recY.size());
    return {std::move(dX), std::move(dY)};
}

namespace detail {

template <typename Scalar>
Scalar stackL1(const ActivationStack<Scalar>& a, const ActivationStack<Scalar>& b, FeatureNorm norm) {
    requireSameShape(a.planes, b.planes, "feature_map_loss");
    const Scalar c = static_cast<Scalar>(a.planes.channels);
    Scalar scale = Scalar(1) / c;
    if (norm == FeatureNorm::SpatialMean) {
        scale /= static_cast<Scalar>(a.planes.height * a.planes.width);
    }
    return scale * (a.planes.data - b.planes.data).cwiseAbs().sum();
}

template <typename Scalar>
Tensor<Scalar> stackL1Grad(const ActivationStack<Scalar>& a, const ActivationStack<Scalar>& b, FeatureNorm norm) {
    requireSameShape(a.planes, b.planes, "feature_map_loss");
    Scalar scale = Scalar(1) / static_cast<Scalar>(a.planes.channels);
    if (norm == FeatureNorm::SpatialMean) {
        scale /= static_cast<Scalar>(a.planes.height * a.planes.width);
    }
    Tensor<Scalar> g = a.planes;
    g.data = scale * signOf(a.planes.data - b.planes.data);
    return g;
}

} // namespace detail

/// (1/C) sum_i |gReal_i - gFake_i|_1 + (1/C') sum_i |fReal_i - fFake_i|_1.
template <typename Scalar>
Scalar featureMapLoss(const ActivationStack<Scalar>& gTapReal, const ActivationStack<Scalar>& gTapFake,
                      const ActivationStack<Scalar>& fTapReal, const ActivationStack<Scalar>& fTapFake,
                      FeatureNorm norm = FeatureNorm::PlaneSum) {
    return detail::stackL1(gTapReal, gTapFake, norm) + detail::stackL1(fTapReal, fTapFake, norm);
}

template <typename Scalar>
struct FeatureMapGrad {
    Tensor<Scalar> gReal;
    Tensor<Scalar> gFake;
    Tensor<Scalar> fReal;
    Tensor<Scalar> fFake;
};

template <typename Scalar>
FeatureMapGrad<Scalar> featureMapLossGrad(const ActivationStack<Scalar>& gTapReal,
                                          const ActivationStack<Scalar>& gTapFake,
                                          const ActivationStack<Scalar>& fTapReal,
                                          const ActivationStack<Scalar>& fTapFake,
                                          FeatureNorm norm = FeatureNorm::PlaneSum) {
    FeatureMapGrad<Scalar> g;
    g.gReal = detail::stackL1Grad(gTapReal, gTapFake, norm);
    g.gFake = g.gReal;
    g.gFake.data = -g.gReal.data;
    g.fReal = detail::stackL1Grad(fTapReal, fTapFake, norm);
    g.fFake = g.fReal;
    g.fFake.data = -g.fReal.data;
    return g;
}

inline double totalGeneratorLoss(double gAdv, double fAdv, double cyc, double fm, const LossWeights& w) {
    return gAdv + fAdv + w.lambdaCyc * cyc + w.lambdaFm * fm;
}

/// One training step's scalar losses, one CSV row each.
struct LossRecord {
    long step = 0;
    double dLossX = 0;
    double dLossY = 0;
    double gAdvLoss = 0;
    double fAdvLoss = 0;
    double cycLoss = 0;
    double fmLoss = 0;
    double totalGen = 0;

    bool allFinite() const;
    static std::string_view csvHeader();
    std::string csvRow() const;
    static LossRecord parseCsvRow(std::string_view row);
};

std::vector<LossRecord> readLossCsv(const std::string& path);

} // namespace spagan
