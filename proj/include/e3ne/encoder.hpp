#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "e3ne/model_ir.hpp"

namespace e3ne {

/// Resolution of the encoding: weight bits, spike-train length and the
/// clamp range (in standard deviations) used to place the weight radix point.
struct QuantConfig {
    int weight_bits = 3;
    int time_steps = 4;
    double clamp_range = 3.0;

    void check() const;
    bool operator==(const QuantConfig&) const = default;
};

struct QuantizedTensor {
    std::vector<int> shape;
    std::vector<int32_t> data;
    int radix = 0;        // fractional binary digits
    int clamped = 0;      // values that hit the B-bit range limits
};

/// Per-neuron unsigned T-bit integers. Bit t of a value is the spike at
/// time step t, so plane t is the set of neurons whose bit t is one.
struct SpikeTrain {
    int time_steps = 0;
    Shape3 shape;
    std::vector<uint32_t> values;  // row-major (C, H, W)

    bool spike(int t, std::size_t neuron) const { return (values[neuron] >> t) & 1u; }
    bool operator==(const SpikeTrain&) const = default;
};

int64_t round_half_away(double v);

/// Radix point for a weight set from its mean and standard deviation.
/// Throws DegenerateWeights when mean and deviation are both zero.
int weight_scale(const FloatTensor& weights, const QuantConfig& cfg);

QuantizedTensor quantize_weights(const FloatTensor& weights, int radix, const QuantConfig& cfg);

/// Radix point for activations with the given maximum value. Non-positive
/// maxima (dead layers) map to T.
int activation_radix(double max_activation, int time_steps);

SpikeTrain encode_input(const FloatTensor& x, Shape3 shape, int radix, int time_steps);
FloatTensor decode_input(const SpikeTrain& s, int radix);

/// Right shift with round-half-up, fused ReLU and clamp to [0, 2^T - 1].
uint32_t requantize(int64_t psum, int shift, int time_steps);

/// Requantization shift from the radix points around a weighted layer.
/// Throws RequantError when the result would need a left shift.
int requant_shift(int weight_radix, int act_radix, int next_act_radix);

// ---------------------------------------------------------------------------
// Whole-network quantization

struct LayerScale {
    double max_activation = 0.0;  // largest value seen at this layer's input
    int act_radix = 0;            // radix of this layer's input spike trains
};

struct ActivationScale {
    std::vector<LayerScale> layers;
    std::vector<std::string> warnings;
};

/// Runs the float reference over the samples and derives input radix
/// points for every layer. Pooling layers pass their input scale through.
ActivationScale calibrate_activations(const Network& net, const std::vector<FloatTensor>& samples,
                                      const QuantConfig& cfg);

struct QuantizedLayer {
    LayerSpec spec;
    QuantizedTensor weights;  // empty for pooling
    int act_radix = 0;        // input activation radix
    int shift = 0;            // requantization shift; 0 for pooling and the last layer
    double max_activation = 0.0;
};

struct QuantizedNetwork {
    std::string name;
    Shape3 input;
    int weight_bits = 0;
    int time_steps = 0;
    std::vector<QuantizedLayer> layers;
    std::vector<std::string> warnings;

    bool is_last(std::size_t i) const { return i + 1 == layers.size(); }
};

QuantizedNetwork quantize_network(const Network& net, const ActivationScale& scales,
                                  const QuantConfig& cfg);

/// Partial-sum width needed by a weighted layer.
int psum_bits(const LayerSpec& l, int weight_bits, int time_steps, int headroom = 2);

/// Per-layer summary (radix points, maxima, clamp counts) as JSON text.
std::string quantization_report(const QuantizedNetwork& q);

}  // namespace e3ne
