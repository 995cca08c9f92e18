#pragma once

#include "spagan/layers.hpp"

#include <cmath>
#include <vector>

namespace spagan {

struct AdamConfig {
    double learningRate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers follow the order of the
/// parameter list the optimizer was built from.
template <typename Scalar>
class Adam {
public:
    Adam() = default;

    Adam(const std::vector<NamedParam<Scalar>>& params, AdamConfig config) : config_(config) {
        for (const auto& p : params) {
            firstMoment_.push_back(Planes<Scalar>::Zero(p.param->value.rows(), p.param->value.cols()));
            secondMoment_.push_back(Planes<Scalar>::Zero(p.param->value.rows(), p.param->value.cols()));
        }
    }

    void step(const std::vector<NamedParam<Scalar>>& params, double learningRate) {
        if (params.size() != firstMoment_.size()) {
            throw std::logic_error("Adam: parameter list changed size");
        }
        ++steps_;
        const Scalar b1 = static_cast<Scalar>(config_.beta1);
        const Scalar b2 = static_cast<Scalar>(config_.beta2);
        const Scalar correction1 = Scalar(1) - static_cast<Scalar>(std::pow(config_.beta1, static_cast<double>(steps_)));
        const Scalar correction2 = Scalar(1) - static_cast<Scalar>(std::pow(config_.beta2, static_cast<double>(steps_)));
        const Scalar lr = static_cast<Scalar>(learningRate);
        const Scalar eps = static_cast<Scalar>(config_.epsilon);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i].param;
            auto m = firstMoment_[i].array();
            auto v = secondMoment_[i].array();
            const auto g = p.grad.array();
            m = b1 * m + (Scalar(1) - b1) * g;
            v = b2 * v + (Scalar(1) - b2) * g.square();
            if (lr != Scalar(0)) {
                p.value.array() -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
            }
        }
    }

    void step(const std::vector<NamedParam<Scalar>>& params) { step(params, config_.learningRate); }

    const AdamConfig& config() const { return config_; }
    long steps() const { return steps_; }
    void setSteps(long s) { steps_ = s; }
    std::vector<Planes<Scalar>>& firstMoments() { return firstMoment_; }
    std::vector<Planes<Scalar>>& secondMoments() { return secondMoment_; }

private:
    AdamConfig config_;
    long steps_ = 0;
    std::vector<Planes<Scalar>> firstMoment_;
    std::vector<Planes<Scalar>> secondMoment_;
};

} // namespace spagan
