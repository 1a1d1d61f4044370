#include "e3ne/simulator.hpp"

#include <algorithm>
#include <bit>
#include <ostream>

#include "json.hpp"

#include "e3ne/error.hpp"

namespace e3ne {

using isa::Instruction;
using isa::Mem;
using isa::Opcode;
using isa::Param;

std::vector<WeightImage> build_weight_images(const QuantizedNetwork& q, const HardwarePlan& plan) {
    std::vector<WeightImage> images;
    for (std::size_t li = 0; li < q.layers.size(); ++li) {
        const auto& ql = q.layers[li];
        const auto& l = ql.spec;
        if (!l.has_weights()) continue;
        const auto* mem = plan.weight_mem(static_cast<int>(li));
        if (!mem) throw CodegenError("layer " + std::to_string(li) + " has no weight memory");
        WeightImage img;
        img.layer = static_cast<int>(li);
        img.weight_bits = q.weight_bits;
        img.width_bits = mem->width_bits;
        img.rows = mem->rows;
        if (l.kind == LayerKind::Conv2D) {
            img.entries = l.kernel * l.kernel;
            img.values.assign(ql.weights.data.begin(), ql.weights.data.end());
        } else {
            const int F = plan.pm1d->parallel_features;
            img.entries = F;
            img.values.assign(static_cast<std::size_t>(img.rows) * F, 0);
            for (int g = 0; g * F < l.out_features; ++g)
                for (int i = 0; i < l.in_features; ++i)
                    for (int j = 0; j < F && g * F + j < l.out_features; ++j)
                        img.values[static_cast<std::size_t>(g * l.in_features + i) * F + j] =
                            ql.weights.data[static_cast<std::size_t>(g * F + j) * l.in_features + i];
        }
        images.push_back(std::move(img));
    }
    return images;
}

int64_t conv_row(std::span<const uint8_t> spikes, int t, std::span<const int32_t> kernel_row, int stride,
                 int padding, std::span<int64_t> psum) {
    const int D = static_cast<int>(spikes.size());
    const int K = static_cast<int>(kernel_row.size());
    int64_t adds = 0;
    for (std::size_t x = 0; x < psum.size(); ++x) {
        int64_t acc = 0;
        for (int kx = 0; kx < K; ++kx) {
            const int ix = static_cast<int>(x) * stride + kx - padding;
            if (ix < 0 || ix >= D || !spikes[ix]) continue;
            acc += kernel_row[kx];
            ++adds;
        }
        psum[x] += acc * (int64_t{1} << t);
    }
    return adds;
}

// ---------------------------------------------------------------------------

Simulator::Simulator(const HardwarePlan& plan, std::vector<WeightImage> images, SimOptions opts)
    : plan_(plan), images_(std::move(images)), opts_(opts) {
    state_.buffers[0].resize(plan.buffers.ping2d.width, plan.buffers.ping2d.height);
    state_.buffers[1].resize(plan.buffers.pong2d.width, plan.buffers.pong2d.height);
    state_.buffers[2].resize(plan.buffers.ping1d.width, plan.buffers.ping1d.height);
    state_.buffers[3].resize(plan.buffers.pong1d.width, plan.buffers.pong1d.height);
    state_.modules.resize(plan.module_count);
    for (int m = 0; m < plan.module_count; ++m) state_.modules[m].id = m;
    for (std::size_t p = 0; p < plan.pms2d.size(); ++p)
        for (int r = 0; r < plan.pms2d[p].replicas; ++r)
            state_.modules[plan.pms2d[p].first_module + r].pm = static_cast<int>(p);
    if (!plan.layers.empty()) state_.result.assign(plan.layers.back().output_size(), 0);
    state_.layer_cycles.assign(plan.layers.size(), 0);
}

void Simulator::load_program(isa::Program program) {
    state_.program = std::move(program);
    state_.pc = 0;
    state_.halted = false;
}

void Simulator::load_input(const SpikeTrain& input) {
    if (input.shape != plan_.input) throw ShapeError("input does not match the planned network input");
    if (plan_.layers.empty()) return;
    const int T = input.time_steps;
    const auto& first = plan_.layers.front();
    if (first.is_2d()) {
        auto& buf = state_.buffers[static_cast<int>(Mem::Ping2D)];
        const int C = input.shape.channels, D = input.shape.height;
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < D; ++y) {
                    const auto row = row_address_2d(t, c, y, C, D);
                    for (int x = 0; x < D; ++x)
                        buf.bits[static_cast<std::size_t>(row) * buf.width + x] =
                            input.spike(t, (static_cast<std::size_t>(c) * D + y) * D + x);
                }
    } else {
        auto& buf = state_.buffers[static_cast<int>(Mem::Ping1D)];
        for (int t = 0; t < T; ++t)
            for (std::size_t i = 0; i < input.values.size(); ++i)
                buf.bits[static_cast<std::size_t>(t) * buf.width + i] = input.spike(t, i);
    }
}

void Simulator::fault(const std::string& what) const {
    throw SimFault(what, state_.cycle, static_cast<long>(state_.pc));
}

int Simulator::cost(const Instruction& i) const {
    switch (i.op) {
        case Opcode::ACTL:
        case Opcode::ACTS: return kRowTransferCycles;
        case Opcode::KERD: return kDecodeCycles + plan_.design.external_penalty_cycles;
        default: return kDecodeCycles;
    }
}

ModuleState& Simulator::lead() {
    if (state_.active == 0) fault("memory instruction with no enabled module");
    return state_.modules[std::countr_zero(state_.active)];
}

const LayerSpec& Simulator::module_layer(const ModuleState& m) const {
    if (!m.has(Param::LayerSelect)) fault("module " + std::to_string(m.id) + " has no layer configured");
    const auto li = m.reg(Param::LayerSelect);
    if (li >= plan_.layers.size()) fault("layer " + std::to_string(li) + " is not in the plan");
    return plan_.layers[li];
}

const WeightImage& Simulator::image(int layer) const {
    for (const auto& img : images_)
        if (img.layer == layer) return img;
    fault("no weight memory for layer " + std::to_string(layer));
}

void Simulator::step() {
    if (state_.halted) fault("step on a halted machine");
    if (state_.pc >= state_.program.size()) fault("program ran past its end without END");
    if (state_.cycle > opts_.max_cycles) fault("cycle budget exhausted");
    const Instruction& i = state_.program[state_.pc];
    if (opts_.trace) *opts_.trace << state_.cycle << ' ' << state_.pc << ' ' << isa::to_text(i) << '\n';

    int64_t spent = cost(i);
    switch (i.op) {
        case Opcode::ENA:
            if (i.value >> plan_.module_count) fault("ENA selects a module outside the plan");
            state_.active = i.value;
            state_.layer = -1;
            break;
        case Opcode::CONF: exec_conf(i); break;
        case Opcode::RST: exec_rst(i); break;
        case Opcode::KERL:
        case Opcode::KERD: exec_kernel(i); break;
        case Opcode::ACTL: exec_actl(i); break;
        case Opcode::ACTS: exec_acts(i); break;
        case Opcode::PROC: exec_proc(i); break;
        case Opcode::LIN: exec_lin(i); break;
        case Opcode::WAIT: spent = exec_wait(i); break;
        case Opcode::END: state_.halted = true; break;
    }

    state_.cycle += spent;
    ++state_.instructions;
    if (state_.layer >= 0) state_.layer_cycles[state_.layer] += spent;
    switch (i.op) {
        case Opcode::ACTL:
        case Opcode::ACTS:
        case Opcode::KERL:
        case Opcode::KERD: state_.communication_cycles += spent; break;
        case Opcode::WAIT: state_.wait_cycles += spent; break;
        default: state_.control_cycles += spent; break;
    }
    ++state_.pc;
}

void Simulator::run() {
    while (!state_.halted) step();
}

// ---------------------------------------------------------------------------
// Configuration and control

void Simulator::exec_conf(const Instruction& i) {
    if (i.param >= isa::kParamCount) fault("CONF of unknown parameter " + std::to_string(i.param));
    const bool select = i.param == static_cast<uint32_t>(Param::LayerSelect);
    if (select) {
        if (i.value >= plan_.layers.size()) fault("CONF selects layer " + std::to_string(i.value) + " outside the plan");
        state_.layer = static_cast<int>(i.value);
    }
    for (auto& m : state_.modules)
        if (state_.active >> m.id & 1u) {
            m.regs[i.param] = i.value;
            m.configured |= 1u << i.param;
            if (select) {
                // Input registers belong to the previous layer.
                m.next.valid = false;
                m.staged.clear();
                m.planes.clear();
            }
        }
}

void Simulator::exec_rst(const Instruction& i) {
    const uint32_t mask = i.mask & ~isa::kClearAccumulators;
    if (mask >> plan_.module_count) fault("RST selects a module outside the plan");
    const bool clear = i.mask & isa::kClearAccumulators;
    for (auto& m : state_.modules) {
        if (!(mask >> m.id & 1u)) continue;
        if (m.busy_until > state_.cycle) fault("RST on busy module " + std::to_string(m.id));
        m.next.valid = false;
        for (auto& planes : m.staged)
            for (auto& r : planes) r.valid = false;
        if (clear) {
            for (auto& s : m.slots) {
                s.channel = -1;
                s.input_channel = -1;
                std::fill(s.psum.begin(), s.psum.end(), 0);
            }
            m.group = -1;
        }
    }
}

int64_t Simulator::exec_wait(const Instruction& i) {
    if (i.module >= state_.modules.size()) fault("WAIT on module " + std::to_string(i.module) + " which never runs");
    int64_t until = 0;
    const auto& target = state_.modules[i.module];
    if (i.condition == static_cast<uint32_t>(isa::WaitCond::ModuleIdle)) {
        until = target.busy_until;
    } else if (i.condition == static_cast<uint32_t>(isa::WaitCond::GroupIdle)) {
        for (const auto& m : state_.modules)
            if (m.id == target.id || (target.pm >= 0 && m.pm == target.pm)) until = std::max(until, m.busy_until);
    } else {
        fault("WAIT with unknown condition " + std::to_string(i.condition));
    }
    return std::max<int64_t>(0, until - state_.cycle) + kDecodeCycles;
}

// ---------------------------------------------------------------------------
// Memory transfers

namespace {

ModuleState& nth_module(std::vector<ModuleState>& modules, uint32_t mask, int n) {
    for (auto& m : modules)
        if (mask >> m.id & 1u) {
            if (n == 0) return m;
            --n;
        }
    throw std::out_of_range("module index");
}

bool is_1d(uint32_t mem) { return mem == static_cast<uint32_t>(Mem::Ping1D) || mem == static_cast<uint32_t>(Mem::Pong1D); }
bool is_2d_mem(uint32_t mem) { return mem == static_cast<uint32_t>(Mem::Ping2D) || mem == static_cast<uint32_t>(Mem::Pong2D); }

int64_t pooled(const LayerSpec& l, bool max_mode, int64_t acc) {
    if (max_mode) return acc;
    const int shift = std::countr_zero(static_cast<unsigned>(l.kernel * l.kernel));
    return shift > 0 ? (acc + (int64_t{1} << (shift - 1))) >> shift : acc;
}

}  // namespace

void Simulator::exec_kernel(const Instruction& i) {
    if (i.mem != static_cast<uint32_t>(Mem::Weights)) fault("kernel load from a non-weight memory");
    const bool staged = plan_.storage == Storage::ExternalStaged;
    if (i.op == Opcode::KERD && !staged) fault("KERD without external weight staging");
    if (i.op == Opcode::KERL && staged) fault("KERL while weights are held off chip");
    auto& m0 = lead();
    if (!m0.has(Param::WeightMemory)) fault("kernel load before the weight memory is configured");
    const auto& img = image(static_cast<int>(m0.reg(Param::WeightMemory)));
    if (i.address >= static_cast<uint32_t>(img.rows)) fault("weight address " + std::to_string(i.address) + " out of range");
    const auto& l = plan_.layers[img.layer];
    const auto row = std::span<const int32_t>(img.values).subspan(static_cast<std::size_t>(i.address) * img.entries,
                                                                  img.entries);

    if (l.kind == LayerKind::Conv2D) {
        if (!m0.has(Param::Parallelism)) fault("kernel load before parallelism is configured");
        const int P = static_cast<int>(m0.reg(Param::Parallelism));
        const int R = std::popcount(state_.active);
        if (P < 1) fault("parallelism of zero");
        const int co = static_cast<int>(i.address) / l.in_channels;
        const int ci = static_cast<int>(i.address) % l.in_channels;
        const int s = co % (P * R);
        auto& m = nth_module(state_.modules, state_.active, s / P);
        if (m.busy_until > state_.cycle) fault("kernel load into busy module " + std::to_string(m.id));
        if (static_cast<int>(m.slots.size()) < P) m.slots.resize(P);
        auto& slot = m.slots[s % P];
        if (slot.channel >= 0 && slot.channel != co)
            fault("kernel of channel " + std::to_string(co) + " loaded into a slot accumulating channel " +
                  std::to_string(slot.channel));
        if (slot.channel < 0) slot.psum.assign(static_cast<std::size_t>(l.out_dim) * l.out_dim, 0);
        slot.channel = co;
        slot.input_channel = ci;
        slot.kernel.assign(row.begin(), row.end());
    } else if (l.kind == LayerKind::Linear) {
        if (i.address % l.in_features) fault("linear weight address not at a group boundary");
        if (m0.busy_until > state_.cycle) fault("weight load into busy module " + std::to_string(m0.id));
        if (m0.slots.empty()) m0.slots.resize(1);
        m0.group = static_cast<int>(i.address) / l.in_features;
    } else {
        fault("kernel load for a pooling layer");
    }
}

void Simulator::exec_actl(const Instruction& i) {
    auto& m0 = lead();
    const auto& l = module_layer(m0);
    if (!m0.has(Param::SourceBuffer) || i.mem != m0.reg(Param::SourceBuffer))
        fault("ACTL from a memory other than the configured source");
    if (!m0.has(Param::TimeSteps)) fault("ACTL before the time steps are configured");
    const int T = static_cast<int>(m0.reg(Param::TimeSteps));
    const auto& buf = state_.buffers.at(std::min<uint32_t>(i.mem, 3));
    if (i.mem > 3) fault("ACTL from a non-activation memory");

    if (l.is_2d()) {
        if (!is_2d_mem(i.mem)) fault("2D layer reading a 1D buffer");
        const int C = l.in_channels, D = l.in_dim;
        if (i.address >= static_cast<uint32_t>(buf.height) || D > buf.width) fault("ACTL row outside the buffer");
        RowRegister r;
        r.valid = true;
        r.t = static_cast<int>(i.address) / (C * D);
        r.c = static_cast<int>(i.address) / D % C;
        r.y = static_cast<int>(i.address) % D;
        if (r.t >= T) fault("ACTL row beyond the configured time steps");
        const auto first = buf.bits.begin() + static_cast<std::ptrdiff_t>(i.address) * buf.width;
        r.bits.assign(first, first + D);
        if (l.kind == LayerKind::Conv2D) {
            for (auto& m : state_.modules)
                if (state_.active >> m.id & 1u) m.next = r;
        } else {
            const int P = static_cast<int>(m0.reg(Param::Parallelism));
            if (P < 1) fault("parallelism of zero");
            if (static_cast<int>(m0.staged.size()) != P) m0.staged.assign(P, std::vector<RowRegister>(T));
            m0.staged[r.c % P][r.t] = std::move(r);
        }
    } else {
        if (!is_1d(i.mem)) fault("linear layer reading a 2D buffer");
        const auto W = static_cast<uint32_t>(buf.width);
        if (i.address % W) fault("ACTL address not at a time-step row");
        const auto t = i.address / W;
        if (t >= static_cast<uint32_t>(T) || t >= static_cast<uint32_t>(buf.height) || l.in_features > buf.width)
            fault("ACTL row outside the buffer");
        if (static_cast<int>(m0.planes.size()) != T) m0.planes.assign(T, {});
        const auto first = buf.bits.begin() + i.address;
        m0.planes[t].assign(first, first + l.in_features);
    }
}

void Simulator::exec_acts(const Instruction& i) {
    auto& m0 = lead();
    const auto& l = module_layer(m0);
    for (Param p : {Param::RequantShift, Param::TimeSteps, Param::Parallelism})
        if (!m0.has(p)) fault("ACTS on an unconfigured module");
    const int T = static_cast<int>(m0.reg(Param::TimeSteps));
    const int shift = static_cast<int>(m0.reg(Param::RequantShift));
    const int P = static_cast<int>(m0.reg(Param::Parallelism));
    const bool to_result = i.mem == static_cast<uint32_t>(Mem::Result);
    if (!to_result && i.mem > 3) fault("ACTS to a non-activation memory");
    if (!to_result && m0.has(Param::SourceBuffer) && i.mem == m0.reg(Param::SourceBuffer))
        fault("ACTS would overwrite the layer's own input");
    const bool max_mode = m0.has(Param::PoolMode) && m0.reg(Param::PoolMode) == 1;
    const auto a = static_cast<int64_t>(i.address);

    const auto encode = [&](int64_t raw) -> uint32_t {
        return l.has_weights() ? requantize(raw, shift, T) : static_cast<uint32_t>(raw);
    };

    if (l.is_2d()) {
        const int D = l.out_dim, C = l.out_channels;
        int t = 0, co = 0, y = 0;
        std::size_t base = 0;  // bit offset or result index of column 0
        if (to_result) {
            if (a % D || a + D > static_cast<int64_t>(state_.result.size())) fault("ACTS outside the result memory");
            co = static_cast<int>(a / (D * D));
            y = static_cast<int>(a / D % D);
            base = static_cast<std::size_t>(a);
        } else if (is_2d_mem(i.mem)) {
            const auto& buf = state_.buffers[i.mem];
            if (a >= buf.height || D > buf.width) fault("ACTS row outside the buffer");
            t = static_cast<int>(a / (C * D));
            co = static_cast<int>(a / D % C);
            y = static_cast<int>(a % D);
            base = static_cast<std::size_t>(a) * buf.width;
        } else {
            const auto& buf = state_.buffers[i.mem];
            const int W = buf.width;
            t = static_cast<int>(a / W);
            const int off = static_cast<int>(a % W);
            if (off % D || off + D > W || t >= buf.height) fault("ACTS outside the buffer");
            co = off / (D * D);
            y = off / D % D;
            base = static_cast<std::size_t>(a);
        }
        if (t >= T || co >= C) fault("ACTS address beyond the layer output");

        Slot* slot = nullptr;
        ModuleState* holder = &m0;
        if (l.kind == LayerKind::Conv2D) {
            const int R = std::popcount(state_.active);
            const int s = co % (P * R);
            holder = &nth_module(state_.modules, state_.active, s / P);
            if (static_cast<int>(holder->slots.size()) > s % P) slot = &holder->slots[s % P];
        } else if (static_cast<int>(m0.slots.size()) > co % P) {
            slot = &m0.slots[co % P];
        }
        if (!slot || slot->channel != co) fault("no module holds output channel " + std::to_string(co));
        if (holder->busy_until > state_.cycle) fault("ACTS from busy module " + std::to_string(holder->id));

        for (int x = 0; x < D; ++x) {
            int64_t raw = slot->psum[static_cast<std::size_t>(y) * D + x];
            if (l.kind == LayerKind::Pool2D) raw = pooled(l, max_mode, raw);
            if (to_result)
                state_.result[base + x] = raw;
            else
                state_.buffers[i.mem].bits[base + x] = encode(raw) >> t & 1u;
        }
        return;
    }

    // Linear
    if (m0.busy_until > state_.cycle) fault("ACTS from busy module " + std::to_string(m0.id));
    if (m0.group < 0 || m0.slots.empty() || m0.slots[0].channel != m0.group) fault("ACTS before LIN produced a group");
    const int g = m0.group;
    const auto& psum = m0.slots[0].psum;
    const int n = std::min(P, l.out_features - g * P);
    if (to_result) {
        if (a != int64_t{g} * P) fault("ACTS address does not match the computed feature group");
        for (int j = 0; j < n; ++j) state_.result.at(static_cast<std::size_t>(g * P + j)) = psum[j];
        return;
    }
    if (!is_1d(i.mem)) fault("linear layer writing a 2D buffer");
    auto& buf = state_.buffers[i.mem];
    const int W = buf.width;
    const int t = static_cast<int>(a / W);
    const int off = static_cast<int>(a % W);
    if (off != g * P || off + n > W || t >= buf.height || t >= T) fault("ACTS outside the buffer");
    for (int j = 0; j < n; ++j) buf.bits[static_cast<std::size_t>(a) + j] = encode(psum[j]) >> t & 1u;
}

// ---------------------------------------------------------------------------
// Compute

void Simulator::exec_proc(const Instruction& i) {
    if (i.mask == 0 || i.mask >> plan_.module_count) fault("PROC selects no module or one outside the plan");
    const int B = plan_.design.quant.weight_bits;
    for (auto& m : state_.modules) {
        if (!(i.mask >> m.id & 1u)) continue;
        if (m.pm < 0) fault("PROC on the linear module");
        if (m.busy_until > state_.cycle) fault("PROC on busy module " + std::to_string(m.id));
        for (Param p : {Param::LayerSelect, Param::Parallelism, Param::TimeSteps, Param::SourceBuffer, Param::Stride})
            if (!m.has(p)) fault("PROC on unconfigured module " + std::to_string(m.id));
        const auto& l = module_layer(m);
        const int T = static_cast<int>(m.reg(Param::TimeSteps));
        const int str = static_cast<int>(m.reg(Param::Stride));
        if (str < 1) fault("stride of zero");
        int busy = 0;

        if (l.kind == LayerKind::Conv2D) {
            if (!m.next.valid) fault("PROC with no input row loaded");
            const auto& row = m.next;
            const int K = l.kernel, D = l.out_dim;
            const int bits = psum_bits(l, B, T, plan_.design.psum_headroom);
            const int64_t limit = bits >= 63 ? INT64_MAX : int64_t{1} << (bits - 1);
            for (auto& s : m.slots) {
                if (s.channel < 0) continue;
                if (s.input_channel != row.c) fault("input row channel does not match the loaded kernel");
                for (int ky = 0; ky < K; ++ky) {
                    const int num = row.y + l.padding - ky;
                    if (num < 0 || num % str || num / str >= D) continue;
                    const auto out = std::span<int64_t>(s.psum).subspan(static_cast<std::size_t>(num / str) * D, D);
                    state_.conditional_adds += conv_row(row.bits, row.t, std::span<const int32_t>(s.kernel).subspan(ky * K, K),
                                                        str, l.padding, out);
                    for (int64_t v : out)
                        if (v >= limit || v < -limit)
                            fault("partial sum exceeds " + std::to_string(bits) + " bits");
                }
            }
            m.next.valid = false;
            busy = K + kPipelineOverhead;
        } else if (l.kind == LayerKind::Pool2D) {
            const bool max_mode = m.has(Param::PoolMode) && m.reg(Param::PoolMode) == 1;
            const int P = static_cast<int>(m.reg(Param::Parallelism));
            const int K = l.kernel, D = l.out_dim;
            if (static_cast<int>(m.slots.size()) < P) m.slots.resize(P);
            for (int p = 0; p < static_cast<int>(m.staged.size()); ++p) {
                auto& planes = m.staged[p];
                const bool any = std::any_of(planes.begin(), planes.end(), [](const RowRegister& r) { return r.valid; });
                if (!any) continue;
                for (const auto& r : planes)
                    if (!r.valid || r.c != planes[0].c || r.y != planes[0].y)
                        fault("pooling row is missing time steps");
                const int c = planes[0].c, y = planes[0].y;
                auto& s = m.slots[p];
                if (s.channel < 0) {
                    s.channel = c;
                    s.psum.assign(static_cast<std::size_t>(D) * D, 0);
                } else if (s.channel != c) {
                    fault("pooling slot mixes channels " + std::to_string(s.channel) + " and " + std::to_string(c));
                }
                const int oy = y / K;
                if (oy >= D) fault("pooling row beyond the output");
                for (int ox = 0; ox < D; ++ox) {
                    int64_t& acc = s.psum[static_cast<std::size_t>(oy) * D + ox];
                    for (int kx = 0; kx < K; ++kx) {
                        int64_t v = 0;
                        for (int t = 0; t < T; ++t) v |= int64_t{planes[t].bits[ox * K + kx]} << t;
                        acc = max_mode ? std::max(acc, v) : acc + v;
                    }
                }
                for (auto& r : planes) r.valid = false;
            }
            busy = 1;
        } else {
            fault("PROC on a module configured for a linear layer");
        }
        m.busy_until = state_.cycle + kDecodeCycles + busy;
        m.busy_cycles += busy;
    }
}

void Simulator::exec_lin(const Instruction& i) {
    if (i.mask == 0 || i.mask >> plan_.module_count) fault("LIN selects no module or one outside the plan");
    for (auto& m : state_.modules) {
        if (!(i.mask >> m.id & 1u)) continue;
        if (m.pm >= 0) fault("LIN on a 2D module");
        if (m.busy_until > state_.cycle) fault("LIN on busy module " + std::to_string(m.id));
        for (Param p : {Param::LayerSelect, Param::Parallelism, Param::TimeSteps, Param::SourceBuffer})
            if (!m.has(p)) fault("LIN on unconfigured module " + std::to_string(m.id));
        const auto& l = module_layer(m);
        if (l.kind != LayerKind::Linear) fault("LIN on a module configured for a 2D layer");
        if (m.group < 0) fault("LIN before its weight group is loaded");
        const int T = static_cast<int>(m.reg(Param::TimeSteps));
        const int F = static_cast<int>(m.reg(Param::Parallelism));
        if (static_cast<int>(m.planes.size()) != T ||
            std::any_of(m.planes.begin(), m.planes.end(), [](const auto& p) { return p.empty(); }))
            fault("LIN with input time steps missing");
        const auto& img = image(static_cast<int>(m.reg(Param::LayerSelect)));
        if (F != img.entries) fault("configured parallelism does not match the weight memory width");
        const int B = plan_.design.quant.weight_bits;
        const int bits = psum_bits(l, B, T, plan_.design.psum_headroom);
        const int64_t limit = bits >= 63 ? INT64_MAX : int64_t{1} << (bits - 1);

        auto& s = m.slots[0];
        s.channel = m.group;
        s.psum.assign(F, 0);
        for (int j = 0; j < F && m.group * F + j < l.out_features; ++j) {
            int64_t acc = 0;
            for (int idx = 0; idx < l.in_features; ++idx) {
                const int32_t w = img.at(m.group * l.in_features + idx, j);
                for (int t = 0; t < T; ++t)
                    if (m.planes[t][idx]) {
                        acc += int64_t{w} << t;
                        ++state_.conditional_adds;
                    }
            }
            if (acc >= limit || acc < -limit) fault("partial sum exceeds " + std::to_string(bits) + " bits");
            s.psum[j] = acc;
        }
        const int busy = l.in_features + kPipelineOverhead;
        m.busy_until = state_.cycle + kDecodeCycles + busy;
        m.busy_cycles += busy;
    }
}

// ---------------------------------------------------------------------------
// Reports

SimReport Simulator::report() const {
    SimReport r;
    r.total_cycles = state_.cycle;
    r.latency_us = static_cast<double>(state_.cycle) / plan_.design.clock_mhz;
    r.layer_cycles = state_.layer_cycles;
    r.instructions = state_.instructions;
    r.ipc = state_.cycle ? static_cast<double>(state_.instructions) / static_cast<double>(state_.cycle) : 0.0;
    r.communication_cycles = state_.communication_cycles;
    r.wait_cycles = state_.wait_cycles;
    r.control_cycles = state_.control_cycles;
    r.conditional_adds = state_.conditional_adds;
    for (const auto& m : state_.modules) {
        ModuleUsage u;
        u.module = m.id;
        if (m.pm >= 0) {
            const auto& pm = plan_.pms2d[m.pm];
            u.name = std::string(to_string(pm.kind)) + " K" + std::to_string(pm.rows) + " #" +
                     std::to_string(m.id - pm.first_module);
        } else {
            u.name = "linear";
        }
        u.busy_cycles = m.busy_cycles;
        u.utilization = state_.cycle ? static_cast<double>(m.busy_cycles) / static_cast<double>(state_.cycle) : 0.0;
        r.modules.push_back(u);
    }
    return r;
}

std::string SimReport::to_json() const {
    nlohmann::ordered_json j;
    j["total_cycles"] = total_cycles;
    j["latency_us"] = latency_us;
    j["instructions"] = instructions;
    j["instructions_per_clock"] = ipc;
    j["communication_cycles"] = communication_cycles;
    j["wait_cycles"] = wait_cycles;
    j["control_cycles"] = control_cycles;
    j["conditional_adds"] = conditional_adds;
    j["layer_cycles"] = layer_cycles;
    auto mods = nlohmann::ordered_json::array();
    for (const auto& m : modules)
        mods.push_back({{"module", m.module}, {"name", m.name}, {"busy_cycles", m.busy_cycles},
                        {"utilization", m.utilization}});
    j["modules"] = mods;
    return j.dump(2) + "\n";
}

SimResult run(const isa::Program& program, const HardwarePlan& plan, const std::vector<WeightImage>& images,
              const SpikeTrain& input, SimOptions opts) {
    Simulator sim(plan, images, opts);
    sim.load_program(program);
    sim.load_input(input);
    sim.run();
    return {sim.output(), sim.report()};
}

SimReport predict(const isa::Program& program, const HardwarePlan& plan, const std::vector<WeightImage>& images) {
    SpikeTrain zero;
    zero.time_steps = plan.design.quant.time_steps;
    zero.shape = plan.input;
    zero.values.assign(static_cast<std::size_t>(plan.input.channels) * plan.input.height * plan.input.width, 0);
    return run(program, plan, images, zero).report;
}

}  // namespace e3ne
