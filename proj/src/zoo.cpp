#include "e3ne/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "e3ne/error.hpp"

namespace e3ne {

namespace {

void init_weights(Network& net, std::mt19937_64& rng) {
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& l = net.layers[li];
        if (!l.has_weights()) continue;
        const auto shape = l.weight_shape();
        const int fan_in = l.kind == LayerKind::Conv2D ? l.in_channels * l.kernel * l.kernel : l.in_features;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        std::vector<float> w(element_count(shape));
        for (auto& v : w) v = static_cast<float>(dist(rng));
        net.weights[static_cast<int>(li)] = FloatTensor(shape, std::move(w));
    }
}

LayerSpec conv(int out, int k, int stride = 1, int pad = 0) {
    LayerSpec l;
    l.kind = LayerKind::Conv2D;
    l.out_channels = out;
    l.kernel = k;
    l.stride = stride;
    l.padding = pad;
    return l;
}

LayerSpec pool(int k, PoolMode mode) {
    LayerSpec l;
    l.kind = LayerKind::Pool2D;
    l.kernel = k;
    l.stride = k;
    l.pool_mode = mode;
    return l;
}

LayerSpec linear(int out) {
    LayerSpec l;
    l.kind = LayerKind::Linear;
    l.out_features = out;
    return l;
}

}  // namespace

Network lenet5(uint64_t seed, PoolMode mode) {
    Network net;
    net.name = "lenet5";
    net.input = {1, 32, 32};
    net.layers = {conv(6, 5), pool(2, mode), conv(16, 5), pool(2, mode), conv(120, 5), linear(84), linear(10)};
    net = infer_shapes(std::move(net));
    std::mt19937_64 rng(seed);
    init_weights(net, rng);
    return net;
}

DesignVars lenet_design() {
    DesignVars d;
    d.pm_widths.push_back({LayerKind::Conv2D, 5, 31});
    return d;
}

Network random_network(std::mt19937_64& rng, const RandomNetOptions& opts) {
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    for (;;) {
        Network net;
        net.name = "random";
        const int dim = pick(4, opts.max_dim);
        net.input = {pick(1, 3), dim, dim};
        const int layers = pick(1, opts.max_layers);
        int d = dim;
        bool flat = pick(0, 5) == 0;  // occasionally a purely linear network
        for (int i = 0; i < layers; ++i) {
            if (!flat && pick(0, 4) == 0) flat = true;
            if (flat) {
                net.layers.push_back(linear(pick(1, opts.max_features)));
                continue;
            }
            if (pick(0, 2) == 0 && d >= 2) {
                const int k = d >= 8 && pick(0, 2) == 0 ? 4 : 2;
                net.layers.push_back(pool(k, pick(0, 1) ? PoolMode::Max : PoolMode::Avg));
                d /= k;
                continue;
            }
            const int pad = pick(0, 1);
            const int k = pick(1, std::min(5, d + 2 * pad));
            const int stride = pick(1, 2);
            net.layers.push_back(conv(pick(1, opts.max_channels), k, stride, pad));
            d = (d + 2 * pad - k) / stride + 1;
        }
        try {
            net = infer_shapes(std::move(net));
        } catch (const Error&) {
            continue;
        }
        init_weights(net, rng);
        return net;
    }
}

std::vector<PMWidthOverride> fit_pm_widths(const Network& net) {
    std::map<std::pair<LayerKind, int>, int> widest;
    for (const auto& l : net.layers)
        if (l.is_2d()) {
            auto& w = widest[{l.kind, l.kernel}];
            w = std::max(w, l.out_dim);
        }
    std::vector<PMWidthOverride> out;
    for (const auto& [key, w] : widest) out.push_back({key.first, key.second, w});
    return out;
}

FloatTensor random_input(std::mt19937_64& rng, const Shape3& shape, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<float> v(static_cast<std::size_t>(shape.channels) * shape.height * shape.width);
    for (auto& x : v) x = static_cast<float>(dist(rng));
    return FloatTensor({shape.channels, shape.height, shape.width}, std::move(v));
}

std::vector<FloatTensor> random_inputs(std::mt19937_64& rng, const Shape3& shape, int count) {
    std::vector<FloatTensor> out;
    for (int i = 0; i < count; ++i) out.push_back(random_input(rng, shape));
    return out;
}

}  // namespace e3ne
