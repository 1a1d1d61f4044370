#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "e3ne/model_ir.hpp"
#include "e3ne/planner.hpp"

namespace e3ne {

/// LeNet-5 on 1x32x32 inputs: 6C5-P2-16C5-P2-120C5-84-10, seeded
/// He-normal weights, no biases.
Network lenet5(uint64_t seed = 1, PoolMode pool = PoolMode::Avg);

/// Design variables for the LeNet fixture: the K=5 convolution module is
/// 31 columns wide.
DesignVars lenet_design();

struct RandomNetOptions {
    int max_layers = 4;
    int max_dim = 16;
    int max_channels = 8;
    int max_features = 16;
};

/// Random well-formed network of 1..max_layers layers: 2D layers first,
/// then linear layers. Pool windows are 2 or 4 wide.
Network random_network(std::mt19937_64& rng, const RandomNetOptions& opts = {});

/// Module widths wide enough for every layer, for planning networks whose
/// first layer on a module is not its widest.
std::vector<PMWidthOverride> fit_pm_widths(const Network& net);

/// Uniform values in [lo, hi).
FloatTensor random_input(std::mt19937_64& rng, const Shape3& shape, double lo = 0.0, double hi = 1.0);
std::vector<FloatTensor> random_inputs(std::mt19937_64& rng, const Shape3& shape, int count);

}  // namespace e3ne
