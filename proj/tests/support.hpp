#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "e3ne/bundle.hpp"
#include "e3ne/error.hpp"
#include "e3ne/zoo.hpp"

namespace e3ne::testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("e3ne-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

struct FuzzCase {
    Network net;
    DesignVars design;
    Compiled compiled;
    std::vector<FloatTensor> inputs;
};

// Draws random networks until one compiles. Networks that would need a
// left-shift requantization are redrawn.
inline FuzzCase fuzz_case(std::mt19937_64& rng, int inputs = 2, bool reorder = true,
                          const RandomNetOptions& opts = {}) {
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    for (;;) {
        FuzzCase fc;
        fc.net = random_network(rng, opts);
        fc.design.quant.weight_bits = pick(1, 6);
        fc.design.quant.time_steps = pick(1, 6);
        fc.design.conv_replicas = pick(1, 3);
        fc.design.intra_parallelism = pick(0, 3) != 0;
        fc.design.reorder = reorder;
        fc.design.pm_widths = fit_pm_widths(fc.net);
        auto calib = random_inputs(rng, fc.net.input, 4);
        try {
            fc.compiled = compile(fc.net, fc.design, calib);
        } catch (const RequantError&) {
            continue;
        }
        fc.inputs = random_inputs(rng, fc.net.input, inputs);
        return fc;
    }
}

}  // namespace e3ne::testing
