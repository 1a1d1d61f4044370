#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "e3ne/encoder.hpp"
#include "e3ne/isa.hpp"
#include "e3ne/planner.hpp"

namespace e3ne {

/// Contents of one weight memory: `rows` rows of `entries` signed weights.
/// Conv rows hold a K x K kernel, linear rows hold F_par features.
struct WeightImage {
    int layer = 0;
    int weight_bits = 0;
    int width_bits = 0;
    int rows = 0;
    int entries = 0;
    std::vector<int32_t> values;  // rows * entries

    int32_t at(int row, int entry) const { return values[static_cast<std::size_t>(row) * entries + entry]; }
    bool operator==(const WeightImage&) const = default;
};

std::vector<WeightImage> build_weight_images(const QuantizedNetwork& q, const HardwarePlan& plan);

/// Accumulates one input row against one kernel row:
///   psum[x] += sum_kx w[kx] * s[x*stride + kx - padding] << t
/// Returns the number of conditional adds (weights whose spike is one).
int64_t conv_row(std::span<const uint8_t> spikes, int t, std::span<const int32_t> kernel_row, int stride,
                 int padding, std::span<int64_t> psum);

// Cycle model constants.
inline constexpr int kDecodeCycles = 1;
inline constexpr int kRowTransferCycles = 2;
inline constexpr int kPipelineOverhead = 3;

struct BitMemory {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> bits;  // height * width, row-major

    void resize(int w, int h) {
        width = w;
        height = h;
        bits.assign(static_cast<std::size_t>(w) * h, 0);
    }
};

struct RowRegister {
    bool valid = false;
    int t = 0, c = 0, y = 0;
    std::vector<uint8_t> bits;
};

struct Slot {
    int channel = -1;      // output channel (conv, pool) bound since the last clear
    int input_channel = -1;
    std::vector<int32_t> kernel;
    std::vector<int64_t> psum;
};

struct ModuleState {
    int id = 0;
    int pm = -1;  // index into plan.pms2d; -1 for the linear module
    std::array<uint32_t, isa::kParamCount> regs{};
    uint32_t configured = 0;
    int64_t busy_until = 0;
    int64_t busy_cycles = 0;
    std::vector<Slot> slots;
    RowRegister next;                              // conv
    std::vector<std::vector<RowRegister>> staged;  // pool: [slot][t]
    std::vector<std::vector<uint8_t>> planes;      // linear input, one per t
    int group = -1;                                // linear weight group

    bool has(isa::Param p) const { return configured & (1u << static_cast<uint32_t>(p)); }
    uint32_t reg(isa::Param p) const { return regs[static_cast<std::size_t>(p)]; }
};

struct MachineState {
    isa::Program program;
    std::size_t pc = 0;
    int64_t cycle = 0;
    bool halted = false;
    uint32_t active = 0;  // ENA mask
    int layer = -1;
    std::array<BitMemory, 4> buffers;  // indexed by isa::Mem
    std::vector<ModuleState> modules;
    std::vector<int64_t> result;

    // Tallies
    int64_t instructions = 0;
    int64_t communication_cycles = 0;
    int64_t wait_cycles = 0;
    int64_t control_cycles = 0;
    int64_t conditional_adds = 0;
    std::vector<int64_t> layer_cycles;
};

struct ModuleUsage {
    int module = 0;
    std::string name;
    int64_t busy_cycles = 0;
    double utilization = 0.0;
};

struct SimReport {
    int64_t total_cycles = 0;
    double latency_us = 0.0;
    std::vector<int64_t> layer_cycles;
    std::vector<ModuleUsage> modules;
    int64_t instructions = 0;
    double ipc = 0.0;
    int64_t communication_cycles = 0;  // ACTL, ACTS, KERL, KERD
    int64_t wait_cycles = 0;           // WAIT, including stalls
    int64_t control_cycles = 0;        // everything else
    int64_t conditional_adds = 0;

    std::string to_json() const;
};

struct SimOptions {
    std::ostream* trace = nullptr;
    int64_t max_cycles = int64_t{1} << 40;
};

class Simulator {
public:
    Simulator(const HardwarePlan& plan, std::vector<WeightImage> images, SimOptions opts = {});

    void load_program(isa::Program program);
    void load_input(const SpikeTrain& input);
    void step();
    void run();

    bool halted() const { return state_.halted; }
    const MachineState& state() const { return state_; }
    const std::vector<int64_t>& output() const { return state_.result; }
    SimReport report() const;

private:
    const HardwarePlan& plan_;
    std::vector<WeightImage> images_;
    SimOptions opts_;
    MachineState state_;

    [[noreturn]] void fault(const std::string& what) const;
    int cost(const isa::Instruction& i) const;
    ModuleState& lead();
    const LayerSpec& module_layer(const ModuleState& m) const;
    const WeightImage& image(int layer) const;
    void exec_conf(const isa::Instruction& i);
    void exec_rst(const isa::Instruction& i);
    void exec_kernel(const isa::Instruction& i);
    void exec_actl(const isa::Instruction& i);
    void exec_acts(const isa::Instruction& i);
    void exec_proc(const isa::Instruction& i);
    void exec_lin(const isa::Instruction& i);
    int64_t exec_wait(const isa::Instruction& i);
};

struct SimResult {
    std::vector<int64_t> output;
    SimReport report;
};

SimResult run(const isa::Program& program, const HardwarePlan& plan, const std::vector<WeightImage>& images,
              const SpikeTrain& input, SimOptions opts = {});

/// Cycle counts do not depend on activation values, so an all-zero input
/// gives the cycle report of every input.
SimReport predict(const isa::Program& program, const HardwarePlan& plan, const std::vector<WeightImage>& images);

}  // namespace e3ne
