#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "e3ne/encoder.hpp"
#include "e3ne/isa.hpp"
#include "e3ne/model_ir.hpp"
#include "e3ne/planner.hpp"
#include "e3ne/simulator.hpp"

namespace e3ne {

/// Everything the compiler produces for one network and design.
struct Compiled {
    QuantizedNetwork quantized;
    HardwarePlan plan;
    isa::Program program;
    std::vector<WeightImage> images;
};

/// encoder -> planner -> codegen.
Compiled compile(const Network& net, const DesignVars& design, const std::vector<FloatTensor>& calibration);

SpikeTrain encode_sample(const QuantizedNetwork& q, const FloatTensor& x);

// Weight memory image: "E3NW", u32 version, u32 layer, u32 weight bits,
// u32 row width in bits, u32 rows, u32 entries per row, then each row
// packed LSB-first into whole bytes, entries as two's complement.
inline constexpr uint32_t kWeightImageVersion = 1;
std::vector<uint8_t> pack_weight_image(const WeightImage& img);
WeightImage unpack_weight_image(const std::vector<uint8_t>& bytes);

// Spike input: "E3NS", u32 version, u32 T, u32 C, u32 H, u32 W, then
// one u16 per neuron.
inline constexpr uint32_t kSpikeFileVersion = 1;
void write_spike_file(const std::filesystem::path& file, const SpikeTrain& s);
SpikeTrain read_spike_file(const std::filesystem::path& file);

std::string quantized_to_json(const QuantizedNetwork& q);
/// Layer specs come from the plan, which records the geometry.
QuantizedNetwork quantized_from_json(const std::string& text, const HardwarePlan& plan);

/// Writes plan.json, program.bin, program.s, weights/, quantized.json,
/// quant_report.json and bundle.json. The directory appears complete or
/// not at all.
void write_bundle(const Compiled& c, const std::filesystem::path& dir);
Compiled read_bundle(const std::filesystem::path& dir);

/// Spike file or raw float tensor, decided by the file's magic.
SpikeTrain read_input(const std::filesystem::path& file, const QuantizedNetwork& q);

std::vector<FloatTensor> read_calibration_dir(const std::filesystem::path& dir, const Shape3& shape);

}  // namespace e3ne
