#pragma once

#include <cstdint>
#include <vector>

#include "e3ne/encoder.hpp"
#include "e3ne/model_ir.hpp"

namespace e3ne {

// Reference implementations. Deliberately naive nested loops that share
// no code with the simulator.

/// Float forward pass. Returns the output of every layer; ReLU follows
/// each convolution and linear layer except the last one.
std::vector<FloatTensor> float_forward(const Network& net, const FloatTensor& x);

struct QuantizedResult {
    // Requantized T-bit activations produced by every layer but the last.
    std::vector<std::vector<uint32_t>> activations;
    // Raw (unshifted) integer outputs of the last layer.
    std::vector<int64_t> logits;
};

/// Exact integer inference. Throws PsumOverflow when a partial sum does
/// not fit the layer's partial-sum width.
QuantizedResult quantized_forward(const QuantizedNetwork& q, const SpikeTrain& input,
                                  int psum_headroom = 2);

std::size_t argmax(const std::vector<int64_t>& v);
std::size_t argmax(const std::vector<float>& v);

}  // namespace e3ne
