#include "e3ne/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "e3ne/error.hpp"
#include "e3ne/oracle.hpp"

namespace e3ne {

void QuantConfig::check() const {
    if (weight_bits < 1 || weight_bits > 16)
        throw ParseError("weight_bits must be in [1, 16]");
    if (time_steps < 1 || time_steps > 16)
        throw ParseError("time_steps must be in [1, 16]");
    if (!(clamp_range > 0.0) || !std::isfinite(clamp_range))
        throw ParseError("clamp_range must be positive");
}

int64_t round_half_away(double v) {
    return static_cast<int64_t>(v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5));
}

// ceil(log2(x)) ignoring float32 noise just above a power of two, so a
// range of 3 * (1/3) counts as 1.
static int ceil_log2_real(double x) {
    return static_cast<int>(std::ceil(std::log2(x) - 1e-6));
}

int weight_scale(const FloatTensor& weights, const QuantConfig& cfg) {
    if (weights.data.empty()) throw ShapeError("weight tensor is empty");
    double mean = 0.0;
    for (float v : weights.data) mean += v;
    mean /= static_cast<double>(weights.data.size());
    double var = 0.0;
    for (float v : weights.data) var += (v - mean) * (v - mean);
    const double sigma = std::sqrt(var / static_cast<double>(weights.data.size()));

    const double range = std::abs(mean) + cfg.clamp_range * sigma;
    if (!(range > 0.0)) throw DegenerateWeights("weight set is all zero");
    return cfg.weight_bits - ceil_log2_real(range) - 1;
}

QuantizedTensor quantize_weights(const FloatTensor& weights, int radix, const QuantConfig& cfg) {
    const int64_t hi = (int64_t{1} << (cfg.weight_bits - 1)) - 1;
    const int64_t lo = -(int64_t{1} << (cfg.weight_bits - 1));
    QuantizedTensor q;
    q.shape = weights.shape;
    q.radix = radix;
    q.data.reserve(weights.data.size());
    for (float v : weights.data) {
        int64_t x = round_half_away(std::ldexp(static_cast<double>(v), radix));
        if (x > hi || x < lo) {
            ++q.clamped;
            x = std::clamp(x, lo, hi);
        }
        q.data.push_back(static_cast<int32_t>(x));
    }
    return q;
}

int activation_radix(double max_activation, int time_steps) {
    if (!(max_activation > 0.0)) return time_steps;
    return time_steps - ceil_log2_real(max_activation);
}

SpikeTrain encode_input(const FloatTensor& x, Shape3 shape, int radix, int time_steps) {
    const std::size_t n = static_cast<std::size_t>(shape.channels) * shape.height * shape.width;
    if (x.data.size() != n) throw ShapeError("input tensor does not match the network input shape");
    const double scale = std::ldexp(1.0, radix) - 1.0;
    const int64_t top = (int64_t{1} << time_steps) - 1;
    SpikeTrain s;
    s.time_steps = time_steps;
    s.shape = shape;
    s.values.reserve(n);
    for (float v : x.data) {
        if (!(v >= 0.0f)) throw NegativeInput("input values must be non-negative and finite");
        const int64_t q = std::clamp<int64_t>(round_half_away(v * scale), 0, top);
        s.values.push_back(static_cast<uint32_t>(q));
    }
    return s;
}

FloatTensor decode_input(const SpikeTrain& s, int radix) {
    const double scale = std::ldexp(1.0, radix) - 1.0;
    std::vector<float> data;
    data.reserve(s.values.size());
    for (uint32_t v : s.values) data.push_back(scale > 0 ? static_cast<float>(v / scale) : 0.0f);
    return FloatTensor({s.shape.channels, s.shape.height, s.shape.width}, std::move(data));
}

uint32_t requantize(int64_t psum, int shift, int time_steps) {
    if (shift < 0) throw RequantError("negative requantization shift");
    if (psum <= 0) return 0;
    const int64_t top = (int64_t{1} << time_steps) - 1;
    int64_t v;
    if (shift == 0) {
        v = psum;
    } else if (shift >= 63) {
        v = 0;
    } else {
        v = (psum + (int64_t{1} << (shift - 1))) >> shift;
    }
    return static_cast<uint32_t>(std::min(v, top));
}

int requant_shift(int weight_radix, int act_radix, int next_act_radix) {
    const int shift = weight_radix + act_radix - next_act_radix;
    if (shift < 0)
        throw RequantError("requantization would need a left shift of " + std::to_string(-shift) +
                           " digits");
    return shift;
}

ActivationScale calibrate_activations(const Network& net, const std::vector<FloatTensor>& samples,
                                      const QuantConfig& cfg) {
    cfg.check();
    if (samples.empty()) throw EmptyCalibrationSet("no calibration samples");
    const std::size_t n = net.layers.size();
    std::vector<double> maxima(n, 0.0);

    for (const auto& x : samples) {
        for (float v : x.data) {
            if (!(v >= 0.0f)) throw NegativeInput("calibration samples must be non-negative");
            maxima[0] = std::max(maxima[0], static_cast<double>(v));
        }
        const auto acts = float_forward(net, x);
        for (std::size_t l = 0; l + 1 < n; ++l)
            for (float v : acts[l].data) maxima[l + 1] = std::max(maxima[l + 1], static_cast<double>(v));
    }

    ActivationScale out;
    out.layers.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
        if (l > 0 && net.layers[l - 1].kind == LayerKind::Pool2D) {
            out.layers[l] = out.layers[l - 1];
            continue;
        }
        out.layers[l].max_activation = maxima[l];
        out.layers[l].act_radix = activation_radix(maxima[l], cfg.time_steps);
        if (!(maxima[l] > 0.0))
            out.warnings.push_back("layer " + std::to_string(l) +
                                   ": input never active during calibration, radix set to T");
    }
    return out;
}

static int ceil_log2(int64_t n) {
    return n <= 1 ? 0 : static_cast<int>(std::bit_width(static_cast<uint64_t>(n - 1)));
}

int psum_bits(const LayerSpec& l, int weight_bits, int time_steps, int headroom) {
    const int64_t fan_in = l.kind == LayerKind::Linear
                               ? l.in_features
                               : int64_t{l.in_channels} * l.kernel * l.kernel;
    return weight_bits + time_steps + ceil_log2(fan_in) + headroom;
}

QuantizedNetwork quantize_network(const Network& net, const ActivationScale& scales,
                                  const QuantConfig& cfg) {
    cfg.check();
    if (scales.layers.size() != net.layers.size())
        throw ShapeError("activation scales do not cover every layer");
    if (!net.biases.empty())
        throw UnsupportedError("bias terms are not supported by the quantized datapath");

    QuantizedNetwork q;
    q.name = net.name;
    q.input = net.input;
    q.weight_bits = cfg.weight_bits;
    q.time_steps = cfg.time_steps;
    q.warnings = scales.warnings;

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        QuantizedLayer ql;
        ql.spec = net.layers[l];
        ql.act_radix = scales.layers[l].act_radix;
        ql.max_activation = scales.layers[l].max_activation;
        if (ql.spec.has_weights()) {
            const auto& w = net.weights.at(static_cast<int>(l));
            int radix;
            try {
                radix = weight_scale(w, cfg);
            } catch (const DegenerateWeights&) {
                radix = cfg.weight_bits - 1;
                q.warnings.push_back("layer " + std::to_string(l) +
                                     ": all-zero weights, radix set to B-1");
            }
            ql.weights = quantize_weights(w, radix, cfg);
            if (l + 1 < net.layers.size())
                ql.shift = requant_shift(radix, ql.act_radix, scales.layers[l + 1].act_radix);
        }
        q.layers.push_back(std::move(ql));
    }
    return q;
}

std::string quantization_report(const QuantizedNetwork& q) {
    nlohmann::json j;
    j["network"] = q.name;
    j["weight_bits"] = q.weight_bits;
    j["time_steps"] = q.time_steps;
    auto layers = nlohmann::json::array();
    for (std::size_t l = 0; l < q.layers.size(); ++l) {
        const auto& ql = q.layers[l];
        nlohmann::json lj;
        lj["index"] = l;
        lj["kind"] = to_string(ql.spec.kind);
        lj["act_radix"] = ql.act_radix;
        lj["max_activation"] = ql.max_activation;
        if (ql.spec.has_weights()) {
            lj["weight_radix"] = ql.weights.radix;
            lj["clamped_weights"] = ql.weights.clamped;
            lj["weight_count"] = ql.weights.data.size();
            lj["psum_bits"] = psum_bits(ql.spec, q.weight_bits, q.time_steps);
        }
        lj["requant_shift"] = ql.shift;
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    j["warnings"] = q.warnings;
    return j.dump(2) + "\n";
}

}  // namespace e3ne
