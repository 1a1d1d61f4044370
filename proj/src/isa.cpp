#include "e3ne/isa.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "e3ne/error.hpp"

namespace e3ne::isa {

namespace {

constexpr std::array<const char*, kOpcodeCount> kMnemonics = {
    "ENA", "CONF", "PROC", "LIN", "RST", "END", "KERL", "KERD", "ACTL", "ACTS", "WAIT"};

constexpr std::array<const char*, kParamCount> kParamNames = {
    "stride", "parallel", "shift", "source", "wmem", "actbase", "outch", "tsteps", "poolmode", "layer"};

constexpr std::array<const char*, 6> kMemNames = {"ping2d", "pong2d", "ping1d", "pong1d", "weights", "result"};

void check_width(uint32_t v, uint32_t max, const char* field, Opcode op) {
    if (v > max)
        throw FieldOverflow(std::string(mnemonic(op)) + ": field '" + field + "' value " +
                            std::to_string(v) + " exceeds " + std::to_string(max));
}

}  // namespace

Category category_of(Opcode op) {
    switch (op) {
        case Opcode::ENA:
        case Opcode::CONF: return Category::Config;
        case Opcode::PROC:
        case Opcode::LIN:
        case Opcode::RST:
        case Opcode::END: return Category::Command;
        case Opcode::KERL:
        case Opcode::KERD:
        case Opcode::ACTL:
        case Opcode::ACTS: return Category::Memory;
        case Opcode::WAIT: return Category::Wait;
    }
    throw IllegalOpcode("unknown opcode");
}

Category Instruction::category() const { return category_of(op); }

const char* mnemonic(Opcode op) {
    const auto i = static_cast<std::size_t>(op);
    return i < kMnemonics.size() ? kMnemonics[i] : "???";
}

const char* param_name(uint32_t param) {
    return param < kParamNames.size() ? kParamNames[param] : nullptr;
}

Instruction ena(uint32_t module_mask) {
    Instruction i;
    i.op = Opcode::ENA;
    i.value = module_mask;
    return i;
}

Instruction conf(Param p, uint32_t value) {
    Instruction i;
    i.op = Opcode::CONF;
    i.param = static_cast<uint32_t>(p);
    i.value = value;
    return i;
}

Instruction command(Opcode op, uint32_t mask) {
    Instruction i;
    i.op = op;
    i.mask = mask;
    return i;
}

Instruction memory(Opcode op, Mem mem, uint32_t address) {
    Instruction i;
    i.op = op;
    i.mem = static_cast<uint32_t>(mem);
    i.store = op == Opcode::ACTS ? 1 : 0;
    i.address = address;
    return i;
}

Instruction wait(uint32_t module, WaitCond cond) {
    Instruction i;
    i.op = Opcode::WAIT;
    i.module = module;
    i.condition = static_cast<uint32_t>(cond);
    return i;
}

Instruction end() { return command(Opcode::END, 0); }

uint32_t encode(const Instruction& i) {
    const auto opbits = static_cast<uint32_t>(i.op);
    if (opbits >= kOpcodeCount) throw IllegalOpcode("opcode " + std::to_string(opbits) + " is not assigned");
    uint32_t word = opbits << 27;
    switch (category_of(i.op)) {
        case Category::Config:
            check_width(i.param, kMaxParam, "param", i.op);
            check_width(i.value, kMaxValue, "value", i.op);
            word |= (i.param << 22) | i.value;
            break;
        case Category::Command:
            check_width(i.mask, kMaxMask, "mask", i.op);
            word |= i.mask;
            break;
        case Category::Memory:
            check_width(i.mem, kMaxMemId, "mem", i.op);
            check_width(i.store, 1, "dir", i.op);
            check_width(i.address, kMaxValue, "address", i.op);
            word |= (i.mem << 23) | (i.store << 22) | i.address;
            break;
        case Category::Wait:
            check_width(i.module, kMaxModuleId, "module", i.op);
            check_width(i.condition, kMaxValue, "condition", i.op);
            word |= (i.module << 22) | i.condition;
            break;
    }
    return word;
}

Instruction decode(uint32_t word) {
    const uint32_t opbits = word >> 27;
    if (opbits >= kOpcodeCount) throw IllegalOpcode("opcode " + std::to_string(opbits) + " is not assigned");
    Instruction i;
    i.op = static_cast<Opcode>(opbits);
    switch (category_of(i.op)) {
        case Category::Config:
            i.param = (word >> 22) & 0x1f;
            i.value = word & kMaxValue;
            break;
        case Category::Command:
            i.mask = word & kMaxMask;
            break;
        case Category::Memory:
            i.mem = (word >> 23) & 0xf;
            i.store = (word >> 22) & 1;
            i.address = word & kMaxValue;
            break;
        case Category::Wait:
            i.module = (word >> 22) & 0x1f;
            i.condition = word & kMaxValue;
            break;
    }
    return i;
}

std::vector<uint32_t> encode_program(const Program& p) {
    std::vector<uint32_t> words;
    words.reserve(p.size());
    for (const auto& i : p) words.push_back(encode(i));
    return words;
}

Program decode_program(std::span<const uint32_t> words) {
    Program p;
    p.reserve(words.size());
    for (std::size_t k = 0; k < words.size(); ++k) {
        try {
            p.push_back(decode(words[k]));
        } catch (const IllegalOpcode& e) {
            throw IllegalOpcode("word " + std::to_string(k) + ": " + e.what(), static_cast<long>(k));
        }
    }
    return p;
}

void check_program(const Program& p) {
    if (p.empty() || p.back().op != Opcode::END) throw CodegenError("program must end with END");
    uint32_t configured = 0;
    const auto need = [&](std::size_t pc, std::initializer_list<Param> params) {
        for (Param q : params)
            if (!(configured & (1u << static_cast<uint32_t>(q))))
                throw CodegenError("instruction " + std::to_string(pc) + " (" + mnemonic(p[pc].op) +
                                   ") uses unconfigured parameter '" +
                                   param_name(static_cast<uint32_t>(q)) + "'");
    };
    for (std::size_t pc = 0; pc < p.size(); ++pc) {
        const auto& i = p[pc];
        switch (i.op) {
            case Opcode::END:
                if (pc + 1 != p.size()) throw CodegenError("END before the final position");
                break;
            case Opcode::CONF:
                if (i.param < 32) configured |= 1u << i.param;
                break;
            case Opcode::PROC:
            case Opcode::LIN:
                need(pc, {Param::LayerSelect, Param::Parallelism, Param::TimeSteps, Param::SourceBuffer});
                break;
            case Opcode::ACTS:
                need(pc, {Param::LayerSelect, Param::RequantShift, Param::TimeSteps});
                break;
            case Opcode::KERL:
            case Opcode::KERD:
                need(pc, {Param::LayerSelect, Param::WeightMemory});
                break;
            default: break;
        }
    }
}

// ---------------------------------------------------------------------------
// Text form

std::string to_text(const Instruction& i) {
    char buf[96];
    switch (i.category()) {
        case Category::Config: {
            const char* name = param_name(i.param);
            if (i.op == Opcode::ENA)
                std::snprintf(buf, sizeof buf, "%s param=%u value=0x%x", mnemonic(i.op), i.param, i.value);
            else if (name)
                std::snprintf(buf, sizeof buf, "%s param=%s value=%u", mnemonic(i.op), name, i.value);
            else
                std::snprintf(buf, sizeof buf, "%s param=%u value=%u", mnemonic(i.op), i.param, i.value);
            break;
        }
        case Category::Command:
            if (i.op == Opcode::END && i.mask == 0)
                std::snprintf(buf, sizeof buf, "END");
            else
                std::snprintf(buf, sizeof buf, "%s mask=0x%x", mnemonic(i.op), i.mask);
            break;
        case Category::Memory:
            if (i.mem < kMemNames.size())
                std::snprintf(buf, sizeof buf, "%s mem=%s dir=%u addr=%u", mnemonic(i.op), kMemNames[i.mem],
                              i.store, i.address);
            else
                std::snprintf(buf, sizeof buf, "%s mem=%u dir=%u addr=%u", mnemonic(i.op), i.mem, i.store,
                              i.address);
            break;
        case Category::Wait:
            std::snprintf(buf, sizeof buf, "%s module=%u cond=%u", mnemonic(i.op), i.module, i.condition);
            break;
    }
    return buf;
}

namespace {

uint32_t parse_number(std::string_view s, std::string_view line) {
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    }
    uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || ptr != s.data() + s.size() || v > 0xffffffffull)
        throw ParseError("bad number in '" + std::string(line) + "'");
    return static_cast<uint32_t>(v);
}

template <std::size_t N>
uint32_t parse_symbol(std::string_view s, const std::array<const char*, N>& names, std::string_view line) {
    for (std::size_t k = 0; k < N; ++k)
        if (s == names[k]) return static_cast<uint32_t>(k);
    return parse_number(s, line);
}

}  // namespace

Instruction parse_line(std::string_view line) {
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::istringstream in{std::string(line)};
    std::string word;
    if (!(in >> word)) throw ParseError("empty instruction line");

    Instruction i;
    bool found = false;
    for (int k = 0; k < kOpcodeCount; ++k)
        if (word == kMnemonics[k]) {
            i.op = static_cast<Opcode>(k);
            found = true;
        }
    if (!found) throw ParseError("unknown mnemonic '" + word + "'");

    std::string field;
    while (in >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value in '" + std::string(line) + "'");
        const std::string key = field.substr(0, eq);
        const std::string_view val = std::string_view(field).substr(eq + 1);
        if (key == "param") i.param = parse_symbol(val, kParamNames, line);
        else if (key == "value") i.value = parse_number(val, line);
        else if (key == "mask") i.mask = parse_number(val, line);
        else if (key == "mem") i.mem = parse_symbol(val, kMemNames, line);
        else if (key == "dir") i.store = parse_number(val, line);
        else if (key == "addr") i.address = parse_number(val, line);
        else if (key == "module") i.module = parse_number(val, line);
        else if (key == "cond") i.condition = parse_number(val, line);
        else throw ParseError("unknown field '" + key + "'");
    }
    return i;
}

std::string disassemble(std::span<const uint32_t> words) {
    const Program p = decode_program(words);
    std::string out;
    for (const auto& i : p) {
        out += to_text(i);
        out += '\n';
    }
    return out;
}

std::vector<uint32_t> assemble(std::string_view text) {
    std::vector<uint32_t> words;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        const auto code = line.substr(0, line.find('#'));
        if (code.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        words.push_back(encode(parse_line(code)));
    }
    return words;
}

// ---------------------------------------------------------------------------
// Binary file

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
    out.write(b, 4);
}

uint32_t get_u32(const std::vector<char>& bytes, std::size_t at) {
    uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[at + k])) << (8 * k);
    return v;
}

}  // namespace

void write_program(const std::filesystem::path& file, std::span<const uint32_t> words) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out.write("E3NP", 4);
    put_u32(out, kProgramVersion);
    put_u32(out, static_cast<uint32_t>(words.size()));
    for (uint32_t w : words) put_u32(out, w);
    if (!out) throw IoError("write failed for " + file.string());
}

std::vector<uint32_t> read_program(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::string_view(bytes.data(), 4) != "E3NP")
        throw ParseError(file.string() + ": not a program file");
    if (get_u32(bytes, 4) != kProgramVersion) throw ParseError(file.string() + ": unsupported version");
    const uint32_t n = get_u32(bytes, 8);
    if (bytes.size() != 12 + std::size_t{n} * 4) throw ParseError(file.string() + ": truncated program");
    std::vector<uint32_t> words(n);
    for (uint32_t k = 0; k < n; ++k) words[k] = get_u32(bytes, 12 + 4 * std::size_t{k});
    return words;
}

}  // namespace e3ne::isa
