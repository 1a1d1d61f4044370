#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "e3ne/encoder.hpp"
#include "e3ne/isa.hpp"
#include "e3ne/model_ir.hpp"

namespace e3ne {

struct PMWidthOverride {
    LayerKind kind = LayerKind::Conv2D;
    int kernel = 0;
    int width = 0;
    bool operator==(const PMWidthOverride&) const = default;
};

/// User-facing knobs that constrain the generated hardware.
struct DesignVars {
    QuantConfig quant;
    int conv_replicas = 1;
    int pool_replicas = 1;  // accepted but ignored (warning)
    int64_t onchip_capacity_bits = 10'000'000;
    double clock_mhz = 200.0;
    PoolMode pool_mode = PoolMode::Avg;  // for manifests that omit a pool mode
    int psum_headroom = 2;
    int external_penalty_cycles = 20;
    int linear_weight_width_bits = 32;
    bool intra_parallelism = true;
    bool reorder = true;
    std::vector<PMWidthOverride> pm_widths;

    void check() const;
    bool operator==(const DesignVars&) const = default;
};

DesignVars load_design_vars(const std::filesystem::path& file);
std::string design_vars_to_json(const DesignVars& d);
DesignVars design_vars_from_json(const std::string& text);

enum class PMKind { Conv, Pool };
enum class Storage { OnChipROM, ExternalStaged };

const char* to_string(PMKind k);
const char* to_string(Storage s);

/// Column range [start, end] of one parallel output channel inside a PM.
struct ChannelWindow {
    int start = 0;
    int end = 0;
    bool operator==(const ChannelWindow&) const = default;
};

struct PMAssignment {
    int layer = 0;
    LayerSpec spec;
    int parallel = 1;
    std::vector<ChannelWindow> windows;
    bool operator==(const PMAssignment&) const = default;
};

struct PMConfig2D {
    int id = 0;
    PMKind kind = PMKind::Conv;
    int rows = 0;      // Y, the kernel size
    int columns = 0;   // X
    int replicas = 1;
    int first_module = 0;  // module ids first_module .. first_module + replicas - 1
    std::vector<int> strides;
    std::vector<PMAssignment> layers;

    uint32_t module_mask() const;
    bool operator==(const PMConfig2D&) const = default;
};

struct PMConfig1D {
    int module = 0;
    int parallel_features = 1;
    int weight_width_bits = 0;
    std::vector<int> layers;
    bool operator==(const PMConfig1D&) const = default;
};

struct WeightMemConfig {
    int layer = -1;  // -1 for the shared staging RAM
    int width_bits = 0;
    int rows = 0;
    Storage storage = Storage::OnChipROM;
    int64_t bits() const { return int64_t{width_bits} * rows; }
    bool operator==(const WeightMemConfig&) const = default;
};

struct BufferDims {
    int width = 0;
    int height = 0;
    int64_t bits() const { return int64_t{width} * height; }
    bool operator==(const BufferDims&) const = default;
};

struct BufferConfig {
    BufferDims ping2d, pong2d, ping1d, pong1d;
    int64_t bits() const { return ping2d.bits() + pong2d.bits() + ping1d.bits() + pong1d.bits(); }
    bool operator==(const BufferConfig&) const = default;
};

/// Where a layer reads its input and writes its output, and which
/// modules compute it.
struct LayerRoute {
    int layer = 0;
    isa::Mem source = isa::Mem::Ping2D;
    isa::Mem dest = isa::Mem::Pong2D;
    uint32_t module_mask = 0;
    int pm = -1;  // index into pms2d, -1 for the linear module
    bool operator==(const LayerRoute&) const = default;
};

struct HardwarePlan {
    std::string network;
    DesignVars design;
    Shape3 input;
    std::vector<LayerSpec> layers;
    std::vector<PMConfig2D> pms2d;
    std::optional<PMConfig1D> pm1d;
    Storage storage = Storage::OnChipROM;
    std::vector<WeightMemConfig> weight_mems;  // one per weighted layer
    std::optional<WeightMemConfig> staging;    // ExternalStaged only
    BufferConfig buffers;
    std::vector<LayerRoute> routes;            // one per layer
    int module_count = 0;
    int64_t onchip_bits = 0;
    std::vector<std::string> warnings;

    const PMAssignment* assignment(int layer) const;
    const WeightMemConfig* weight_mem(int layer) const;
    bool operator==(const HardwarePlan&) const = default;
};

// Memory addressing shared by codegen and the simulator.
//   2D buffers: one row per (plane t, channel c, row y): (t*C + c)*D + y
//   1D buffers: bit address t*W + f, with flatten order (c, y, x)
//   result:     element index of the raw last-layer output
//   weights:    conv co*C_in + ci; linear group g*F_in + i
inline uint32_t row_address_2d(int t, int c, int y, int channels, int dim) {
    return static_cast<uint32_t>((t * channels + c) * dim + y);
}

inline constexpr int kPlanVersion = 1;

/// Processing modules with intra-module channel windows.
struct PMPlan {
    std::vector<PMConfig2D> pms2d;
    std::optional<PMConfig1D> pm1d;
    int module_count = 0;
    std::vector<std::string> warnings;
};
PMPlan plan_pms(const Network& net, const DesignVars& design);

/// Percentage of PM columns occupied by the assignment's output channels.
double utilization(const PMConfig2D& pm, const PMAssignment& a);

struct WeightMemPlan {
    Storage storage = Storage::OnChipROM;
    std::vector<WeightMemConfig> mems;
    std::optional<WeightMemConfig> staging;
};
/// `reserved_bits` is on-chip memory already committed (activation buffers).
WeightMemPlan plan_weight_memory(const Network& net, const QuantConfig& cfg, int64_t capacity_bits,
                                 int linear_parallel_features, int64_t reserved_bits = 0);

BufferConfig plan_buffers(const Network& net, int time_steps);

std::vector<LayerRoute> plan_routes(const Network& net, const PMPlan& pms);

/// Full planning pass. The network must have inferred shapes.
HardwarePlan make_plan(const Network& net, const DesignVars& design);

std::string plan_to_json(const HardwarePlan& plan);
HardwarePlan plan_from_json(const std::string& text);
void save_plan(const HardwarePlan& plan, const std::filesystem::path& file);
HardwarePlan load_plan(const std::filesystem::path& file);

}  // namespace e3ne
