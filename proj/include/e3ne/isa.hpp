#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace e3ne::isa {

// Word layout (bits):
//   [31:27] opcode
//   Config  [26:22] param_id  [21:0] value
//   Command [26:0]  module-select mask
//   Memory  [26:23] mem_id    [22] direction  [21:0] address
//   Wait    [26:22] module_id [21:0] condition
enum class Opcode : uint8_t { ENA, CONF, PROC, LIN, RST, END, KERL, KERD, ACTL, ACTS, WAIT };
enum class Category : uint8_t { Config, Command, Memory, Wait };

inline constexpr int kOpcodeCount = 11;
inline constexpr uint32_t kValueBits = 22;
inline constexpr uint32_t kMaskBits = 27;
inline constexpr uint32_t kMaxValue = (1u << kValueBits) - 1;
inline constexpr uint32_t kMaxParam = 31;
inline constexpr uint32_t kMaxMemId = 15;
inline constexpr uint32_t kMaxModuleId = 31;
inline constexpr uint32_t kMaxMask = (1u << kMaskBits) - 1;

// RST with this bit also clears the partial-sum memories of the selected
// modules. Module ids occupy the low bits.
inline constexpr uint32_t kClearAccumulators = 1u << 26;
inline constexpr int kMaxModules = 22;

/// Configuration register registry (version 1).
enum class Param : uint8_t {
    Stride = 0,
    Parallelism = 1,
    RequantShift = 2,
    SourceBuffer = 3,
    WeightMemory = 4,
    ActivationBase = 5,
    OutputChannels = 6,
    TimeSteps = 7,
    PoolMode = 8,
    LayerSelect = 9,
};
inline constexpr int kParamRegistryVersion = 1;
inline constexpr int kParamCount = 10;

/// Memory ids used by the memory instructions.
enum class Mem : uint8_t { Ping2D = 0, Pong2D = 1, Ping1D = 2, Pong1D = 3, Weights = 4, Result = 5 };

enum class WaitCond : uint8_t { ModuleIdle = 0, GroupIdle = 1 };

struct Instruction {
    Opcode op = Opcode::END;
    uint32_t param = 0;      // Config
    uint32_t value = 0;      // Config
    uint32_t mask = 0;       // Command
    uint32_t mem = 0;        // Memory
    uint32_t store = 0;      // Memory direction: 1 = module -> memory
    uint32_t address = 0;    // Memory
    uint32_t module = 0;     // Wait
    uint32_t condition = 0;  // Wait

    Category category() const;
    bool operator==(const Instruction&) const = default;
};

Category category_of(Opcode op);
const char* mnemonic(Opcode op);
const char* param_name(uint32_t param);

// Builders
Instruction ena(uint32_t module_mask);
Instruction conf(Param p, uint32_t value);
Instruction command(Opcode op, uint32_t mask);
Instruction memory(Opcode op, Mem mem, uint32_t address);
Instruction wait(uint32_t module, WaitCond cond);
Instruction end();

/// Throws FieldOverflow if a field does not fit its bit width.
uint32_t encode(const Instruction& i);
/// Throws IllegalOpcode for unassigned opcode values.
Instruction decode(uint32_t word);

using Program = std::vector<Instruction>;

std::vector<uint32_t> encode_program(const Program& p);
Program decode_program(std::span<const uint32_t> words);

/// Checks END placement and that PROC/LIN only follow the configuration
/// they depend on. Throws CodegenError.
void check_program(const Program& p);

std::string to_text(const Instruction& i);
Instruction parse_line(std::string_view line);

/// One instruction per line. Throws IllegalOpcode with the word index for
/// undecodable words.
std::string disassemble(std::span<const uint32_t> words);
std::vector<uint32_t> assemble(std::string_view text);

// Binary program file: "E3NP", u32 version, u32 word count, words (LE).
inline constexpr uint32_t kProgramVersion = 1;
void write_program(const std::filesystem::path& file, std::span<const uint32_t> words);
std::vector<uint32_t> read_program(const std::filesystem::path& file);

}  // namespace e3ne::isa
