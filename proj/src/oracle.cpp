#include "e3ne/oracle.hpp"

#include <algorithm>
#include <bit>

#include "e3ne/error.hpp"

namespace e3ne {

std::vector<FloatTensor> float_forward(const Network& net, const FloatTensor& x) {
    const auto n_in = static_cast<std::size_t>(net.input.channels) * net.input.height * net.input.width;
    if (x.data.size() != n_in) throw ShapeError("input size does not match network input");

    std::vector<double> cur(x.data.begin(), x.data.end());
    std::vector<FloatTensor> outs;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& l = net.layers[li];
        const bool last = li + 1 == net.layers.size();
        std::vector<double> next;
        if (l.kind == LayerKind::Conv2D) {
            const auto& w = net.weights.at(static_cast<int>(li)).data;
            const int C = l.in_channels, D = l.in_dim, O = l.out_dim, K = l.kernel;
            next.assign(static_cast<std::size_t>(l.out_channels) * O * O, 0.0);
            for (int co = 0; co < l.out_channels; ++co)
                for (int y = 0; y < O; ++y)
                    for (int xx = 0; xx < O; ++xx) {
                        double acc = 0.0;
                        for (int ci = 0; ci < C; ++ci)
                            for (int ky = 0; ky < K; ++ky)
                                for (int kx = 0; kx < K; ++kx) {
                                    const int iy = y * l.stride + ky - l.padding;
                                    const int ix = xx * l.stride + kx - l.padding;
                                    if (iy < 0 || ix < 0 || iy >= D || ix >= D) continue;
                                    acc += w[((co * C + ci) * K + ky) * K + kx] *
                                           cur[(ci * D + iy) * D + ix];
                                }
                        if (auto b = net.biases.find(static_cast<int>(li)); b != net.biases.end())
                            acc += b->second.data[co];
                        next[(co * O + y) * O + xx] = last ? acc : std::max(acc, 0.0);
                    }
        } else if (l.kind == LayerKind::Pool2D) {
            const int D = l.in_dim, O = l.out_dim, K = l.kernel;
            next.assign(static_cast<std::size_t>(l.out_channels) * O * O, 0.0);
            for (int c = 0; c < l.out_channels; ++c)
                for (int y = 0; y < O; ++y)
                    for (int xx = 0; xx < O; ++xx) {
                        double acc = l.pool_mode == PoolMode::Max ? -1e300 : 0.0;
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const double v = cur[(c * D + y * K + ky) * D + xx * K + kx];
                                acc = l.pool_mode == PoolMode::Max ? std::max(acc, v) : acc + v;
                            }
                        if (l.pool_mode == PoolMode::Avg) acc /= K * K;
                        next[(c * O + y) * O + xx] = acc;
                    }
        } else {
            const auto& w = net.weights.at(static_cast<int>(li)).data;
            next.assign(l.out_features, 0.0);
            for (int f = 0; f < l.out_features; ++f) {
                double acc = 0.0;
                for (int i = 0; i < l.in_features; ++i) acc += w[f * l.in_features + i] * cur[i];
                if (auto b = net.biases.find(static_cast<int>(li)); b != net.biases.end())
                    acc += b->second.data[f];
                next[f] = last ? acc : std::max(acc, 0.0);
            }
        }
        std::vector<int> shape = l.is_2d() ? std::vector<int>{l.out_channels, l.out_dim, l.out_dim}
                                           : std::vector<int>{l.out_features};
        outs.emplace_back(shape, std::vector<float>(next.begin(), next.end()));
        cur = std::move(next);
    }
    return outs;
}

QuantizedResult quantized_forward(const QuantizedNetwork& q, const SpikeTrain& input, int psum_headroom) {
    if (input.shape != q.input || input.time_steps != q.time_steps)
        throw ShapeError("spike train does not match the network input");
    const int T = q.time_steps;

    std::vector<int64_t> cur(input.values.begin(), input.values.end());
    QuantizedResult res;
    for (std::size_t li = 0; li < q.layers.size(); ++li) {
        const auto& ql = q.layers[li];
        const auto& l = ql.spec;
        const bool last = q.is_last(li);
        std::vector<int64_t> raw;

        if (l.kind == LayerKind::Conv2D) {
            const auto& w = ql.weights.data;
            const int C = l.in_channels, D = l.in_dim, O = l.out_dim, K = l.kernel;
            raw.assign(static_cast<std::size_t>(l.out_channels) * O * O, 0);
            for (int co = 0; co < l.out_channels; ++co)
                for (int y = 0; y < O; ++y)
                    for (int x = 0; x < O; ++x) {
                        int64_t acc = 0;
                        for (int ci = 0; ci < C; ++ci)
                            for (int ky = 0; ky < K; ++ky)
                                for (int kx = 0; kx < K; ++kx) {
                                    const int iy = y * l.stride + ky - l.padding;
                                    const int ix = x * l.stride + kx - l.padding;
                                    if (iy < 0 || ix < 0 || iy >= D || ix >= D) continue;
                                    acc += int64_t{w[((co * C + ci) * K + ky) * K + kx]} *
                                           cur[(ci * D + iy) * D + ix];
                                }
                        raw[(co * O + y) * O + x] = acc;
                    }
        } else if (l.kind == LayerKind::Linear) {
            const auto& w = ql.weights.data;
            raw.assign(l.out_features, 0);
            for (int f = 0; f < l.out_features; ++f)
                for (int i = 0; i < l.in_features; ++i)
                    raw[f] += int64_t{w[f * l.in_features + i]} * cur[i];
        } else {
            const int D = l.in_dim, O = l.out_dim, K = l.kernel;
            const int shift = std::countr_zero(static_cast<unsigned>(K * K));
            raw.assign(static_cast<std::size_t>(l.out_channels) * O * O, 0);
            for (int c = 0; c < l.out_channels; ++c)
                for (int y = 0; y < O; ++y)
                    for (int x = 0; x < O; ++x) {
                        int64_t acc = 0;
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int64_t v = cur[(c * D + y * K + ky) * D + x * K + kx];
                                acc = l.pool_mode == PoolMode::Max ? std::max(acc, v) : acc + v;
                            }
                        if (l.pool_mode == PoolMode::Avg && shift > 0)
                            acc = (acc + (int64_t{1} << (shift - 1))) >> shift;
                        raw[(c * O + y) * O + x] = acc;
                    }
        }

        if (l.has_weights()) {
            const int bits = psum_bits(l, q.weight_bits, T, psum_headroom);
            const int64_t limit = bits >= 63 ? INT64_MAX : (int64_t{1} << (bits - 1));
            for (int64_t v : raw)
                if (v >= limit || v < -limit)
                    throw PsumOverflow("layer " + std::to_string(li) + ": partial sum exceeds " +
                                       std::to_string(bits) + " bits");
        }

        if (last) {
            res.logits = raw;
            break;
        }
        std::vector<uint32_t> act(raw.size());
        for (std::size_t i = 0; i < raw.size(); ++i)
            act[i] = l.has_weights() ? requantize(raw[i], ql.shift, T) : static_cast<uint32_t>(raw[i]);
        res.activations.push_back(act);
        cur.assign(act.begin(), act.end());
    }
    return res;
}

std::size_t argmax(const std::vector<int64_t>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t argmax(const std::vector<float>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace e3ne
