#pragma once

#include <string>
#include <vector>

#include "e3ne/encoder.hpp"
#include "e3ne/isa.hpp"
#include "e3ne/planner.hpp"

namespace e3ne {

struct CodegenOptions {
    bool reorder = true;
};

/// Emits the instruction stream for a quantized network on a plan.
/// Throws CodegenError when the plan does not cover a layer.
isa::Program generate(const QuantizedNetwork& q, const HardwarePlan& plan, const CodegenOptions& opts = {});

/// Hoists the next-row ACTL run that follows a PROC/WAIT pair above the
/// WAIT, so row loads overlap the module's busy time.
isa::Program reorder_for_overlap(const isa::Program& p);

/// Assembly with a comment line at the start of every layer and the
/// program counter as a trailing comment. Assembles like plain listings.
std::string annotated_listing(const isa::Program& p, const HardwarePlan& plan);

}  // namespace e3ne
