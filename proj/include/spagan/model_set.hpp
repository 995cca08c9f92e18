#pragma once

#include "spagan/networks.hpp"
#include "spagan/optim.hpp"

namespace spagan {

/// G: X -> Y, F: Y -> X, their discriminators, one optimizer per network.
template <typename Scalar>
struct ModelSet {
    Generator<Scalar> G;
    Generator<Scalar> F;
    Discriminator<Scalar> DX;
    Discriminator<Scalar> DY;
    Adam<Scalar> optG;
    Adam<Scalar> optF;
    Adam<Scalar> optDX;
    Adam<Scalar> optDY;
    long step = 0;

    template <typename Rng>
    ModelSet(const GeneratorSpec& gen, const DiscriminatorSpec& disc, const AdamConfig& adam, Rng& rng)
        : G(gen, rng), F(gen, rng), DX(disc, rng), DY(disc, rng) {
        optG = Adam<Scalar>(G.parameters(), adam);
        optF = Adam<Scalar>(F.parameters(), adam);
        optDX = Adam<Scalar>(DX.parameters(), adam);
        optDY = Adam<Scalar>(DY.parameters(), adam);
    }

    /// Every (network prefix, parameter) pair in checkpoint order.
    std::vector<NamedParam<Scalar>> allParameters() {
        std::vector<NamedParam<Scalar>> out;
        for (auto [prefix, net] : networks()) {
            for (auto& p : net->parameters()) {
                out.push_back({std::string(prefix) + "." + p.name, p.param});
            }
        }
        return out;
    }

    std::vector<std::pair<const char*, Network<Scalar>*>> networks() {
        return {{"G", &G}, {"F", &F}, {"DX", &DX}, {"DY", &DY}};
    }

    std::vector<std::pair<const char*, Adam<Scalar>*>> optimizers() {
        return {{"G", &optG}, {"F", &optF}, {"DX", &optDX}, {"DY", &optDY}};
    }
};

} // namespace spagan
