#include "e3ne/codegen.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "e3ne/error.hpp"

namespace e3ne {

using isa::Instruction;
using isa::Mem;
using isa::Opcode;
using isa::Param;
using isa::Program;

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

struct Emitter {
    Program out;

    void push(const Instruction& i) { out.push_back(i); }
    void conf(Param p, int v) { push(isa::conf(p, static_cast<uint32_t>(v))); }
};

// Address where a layer writes plane t of output row y of channel c.
// Returns the result-memory index when the layer is last.
uint32_t store_address(const LayerRoute& r, const LayerSpec& l, const HardwarePlan& plan, int t, int c, int y) {
    switch (r.dest) {
        case Mem::Ping2D:
        case Mem::Pong2D: return row_address_2d(t, c, y, l.out_channels, l.out_dim);
        case Mem::Ping1D:
        case Mem::Pong1D: {
            const int w = r.dest == Mem::Ping1D ? plan.buffers.ping1d.width : plan.buffers.pong1d.width;
            return static_cast<uint32_t>(t * w + (c * l.out_dim + y) * l.out_dim);
        }
        case Mem::Result: return static_cast<uint32_t>((c * l.out_dim + y) * l.out_dim);
        default: throw CodegenError("layer output routed to a non-activation memory");
    }
}

void emit_layer_config(Emitter& e, const LayerRoute& r, int layer, int stride, int parallel, int shift, int outch,
                       int T) {
    e.push(isa::ena(r.module_mask));
    e.conf(Param::LayerSelect, layer);
    e.conf(Param::Stride, stride);
    e.conf(Param::Parallelism, parallel);
    e.conf(Param::RequantShift, shift);
    e.conf(Param::SourceBuffer, static_cast<int>(r.source));
    e.conf(Param::ActivationBase, 0);
    e.conf(Param::OutputChannels, outch);
    e.conf(Param::TimeSteps, T);
}

void emit_conv(Emitter& e, const QuantizedNetwork& q, const HardwarePlan& plan, int li) {
    const auto& ql = q.layers[li];
    const auto& l = ql.spec;
    const auto& r = plan.routes[li];
    const auto* a = plan.assignment(li);
    if (!a || r.pm < 0) throw CodegenError("layer " + std::to_string(li) + " has no processing module");
    const auto& pm = plan.pms2d[r.pm];
    const int T = q.time_steps;
    const int P = a->parallel;
    const int R = pm.replicas;
    const bool staged = plan.storage == Storage::ExternalStaged;
    const int lead = pm.first_module;

    emit_layer_config(e, r, li, l.stride, P, q.is_last(li) ? 0 : ql.shift, l.out_channels, T);
    e.conf(Param::WeightMemory, li);

    const int rows = std::min(l.in_dim, (l.out_dim - 1) * l.stride + l.kernel - l.padding);
    const int per_group = P * R;
    for (int g = 0; g < ceil_div(l.out_channels, per_group); ++g) {
        const int c0 = g * per_group;
        const int c1 = std::min(l.out_channels, c0 + per_group);
        for (int ci = 0; ci < l.in_channels; ++ci)
            for (int t = 0; t < T; ++t) {
                const bool first = ci == 0 && t == 0;
                e.push(isa::command(Opcode::RST, r.module_mask | (first ? isa::kClearAccumulators : 0)));
                if (t == 0)
                    for (int co = c0; co < c1; ++co)
                        e.push(isa::memory(staged ? Opcode::KERD : Opcode::KERL, Mem::Weights,
                                           static_cast<uint32_t>(co * l.in_channels + ci)));
                e.push(isa::memory(Opcode::ACTL, r.source, row_address_2d(t, ci, 0, l.in_channels, l.in_dim)));
                for (int y = 0; y < rows; ++y) {
                    e.push(isa::command(Opcode::PROC, r.module_mask));
                    e.push(isa::wait(static_cast<uint32_t>(lead), isa::WaitCond::GroupIdle));
                    if (y + 1 < rows)
                        e.push(isa::memory(Opcode::ACTL, r.source,
                                           row_address_2d(t, ci, y + 1, l.in_channels, l.in_dim)));
                }
            }
        for (int co = c0; co < c1; ++co)
            for (int y = 0; y < l.out_dim; ++y) {
                if (r.dest == Mem::Result) {
                    e.push(isa::memory(Opcode::ACTS, r.dest, store_address(r, l, plan, 0, co, y)));
                    continue;
                }
                for (int t = 0; t < T; ++t)
                    e.push(isa::memory(Opcode::ACTS, r.dest, store_address(r, l, plan, t, co, y)));
            }
    }
}

void emit_pool(Emitter& e, const QuantizedNetwork& q, const HardwarePlan& plan, int li) {
    const auto& l = q.layers[li].spec;
    const auto& r = plan.routes[li];
    const auto* a = plan.assignment(li);
    if (!a || r.pm < 0) throw CodegenError("layer " + std::to_string(li) + " has no processing module");
    const int T = q.time_steps;
    const int P = a->parallel;
    const int module = plan.pms2d[r.pm].first_module;

    emit_layer_config(e, r, li, l.stride, P, 0, l.out_channels, T);
    e.conf(Param::PoolMode, l.pool_mode == PoolMode::Max ? 1 : 0);

    const int rows = l.out_dim * l.kernel;
    for (int g = 0; g < ceil_div(l.out_channels, P); ++g) {
        const int c0 = g * P;
        const int c1 = std::min(l.out_channels, c0 + P);
        e.push(isa::command(Opcode::RST, r.module_mask | isa::kClearAccumulators));
        for (int y = 0; y < rows; ++y) {
            for (int c = c0; c < c1; ++c)
                for (int t = 0; t < T; ++t)
                    e.push(isa::memory(Opcode::ACTL, r.source, row_address_2d(t, c, y, l.in_channels, l.in_dim)));
            e.push(isa::command(Opcode::PROC, r.module_mask));
            e.push(isa::wait(static_cast<uint32_t>(module), isa::WaitCond::ModuleIdle));
        }
        for (int c = c0; c < c1; ++c)
            for (int y = 0; y < l.out_dim; ++y) {
                if (r.dest == Mem::Result) {
                    e.push(isa::memory(Opcode::ACTS, r.dest, store_address(r, l, plan, 0, c, y)));
                    continue;
                }
                for (int t = 0; t < T; ++t)
                    e.push(isa::memory(Opcode::ACTS, r.dest, store_address(r, l, plan, t, c, y)));
            }
    }
}

void emit_linear(Emitter& e, const QuantizedNetwork& q, const HardwarePlan& plan, int li) {
    const auto& ql = q.layers[li];
    const auto& l = ql.spec;
    const auto& r = plan.routes[li];
    if (!plan.pm1d || r.pm != -1) throw CodegenError("layer " + std::to_string(li) + " has no linear module");
    const int T = q.time_steps;
    const int F = plan.pm1d->parallel_features;
    const bool staged = plan.storage == Storage::ExternalStaged;
    const int src_w = r.source == Mem::Ping1D ? plan.buffers.ping1d.width : plan.buffers.pong1d.width;
    const int dst_w = r.dest == Mem::Ping1D ? plan.buffers.ping1d.width : plan.buffers.pong1d.width;

    emit_layer_config(e, r, li, 1, F, q.is_last(li) ? 0 : ql.shift, l.out_features, T);
    e.conf(Param::WeightMemory, li);

    for (int t = 0; t < T; ++t) e.push(isa::memory(Opcode::ACTL, r.source, static_cast<uint32_t>(t * src_w)));
    for (int g = 0; g < ceil_div(l.out_features, F); ++g) {
        e.push(isa::command(Opcode::RST, r.module_mask | isa::kClearAccumulators));
        e.push(isa::memory(staged ? Opcode::KERD : Opcode::KERL, Mem::Weights,
                           static_cast<uint32_t>(g * l.in_features)));
        e.push(isa::command(Opcode::LIN, r.module_mask));
        e.push(isa::wait(static_cast<uint32_t>(plan.pm1d->module), isa::WaitCond::ModuleIdle));
        if (r.dest == Mem::Result) {
            e.push(isa::memory(Opcode::ACTS, r.dest, static_cast<uint32_t>(g * F)));
            continue;
        }
        for (int t = 0; t < T; ++t)
            e.push(isa::memory(Opcode::ACTS, r.dest, static_cast<uint32_t>(t * dst_w + g * F)));
    }
}

}  // namespace

Program generate(const QuantizedNetwork& q, const HardwarePlan& plan, const CodegenOptions& opts) {
    if (plan.routes.size() != q.layers.size() || plan.layers.size() != q.layers.size())
        throw CodegenError("plan and network disagree on the number of layers");
    Emitter e;
    for (std::size_t li = 0; li < q.layers.size(); ++li) {
        const auto& l = q.layers[li].spec;
        if (!(l == plan.layers[li])) throw CodegenError("layer " + std::to_string(li) + " differs from the plan");
        if (l.has_weights() && !plan.weight_mem(static_cast<int>(li)))
            throw CodegenError("layer " + std::to_string(li) + " has no weight memory");
        switch (l.kind) {
            case LayerKind::Conv2D: emit_conv(e, q, plan, static_cast<int>(li)); break;
            case LayerKind::Pool2D: emit_pool(e, q, plan, static_cast<int>(li)); break;
            case LayerKind::Linear: emit_linear(e, q, plan, static_cast<int>(li)); break;
        }
    }
    e.push(isa::end());
    if (opts.reorder) e.out = reorder_for_overlap(e.out);
    isa::check_program(e.out);
    return e.out;
}

Program reorder_for_overlap(const Program& p) {
    Program out;
    out.reserve(p.size());
    std::size_t i = 0;
    while (i < p.size()) {
        const auto& ins = p[i];
        const bool pattern = ins.op == Opcode::PROC && i + 2 < p.size() && p[i + 1].op == Opcode::WAIT &&
                             p[i + 2].op == Opcode::ACTL;
        if (!pattern) {
            out.push_back(ins);
            ++i;
            continue;
        }
        // Rows the PROC consumes: the ACTL run directly before it.
        std::set<std::pair<uint32_t, uint32_t>> consumed;
        for (std::size_t k = i; k-- > 0 && p[k].op == Opcode::ACTL;) consumed.insert({p[k].mem, p[k].address});

        out.push_back(ins);
        std::size_t j = i + 2;
        while (j < p.size() && p[j].op == Opcode::ACTL && !consumed.count({p[j].mem, p[j].address}))
            out.push_back(p[j++]);
        out.push_back(p[i + 1]);
        i = j;
    }
    return out;
}

std::string annotated_listing(const Program& p, const HardwarePlan& plan) {
    std::ostringstream os;
    os << "# network " << plan.network << ", " << p.size() << " instructions\n";
    for (std::size_t pc = 0; pc < p.size(); ++pc) {
        const auto& ins = p[pc];
        if (ins.op == Opcode::CONF && ins.param == static_cast<uint32_t>(Param::LayerSelect)) {
            const auto li = ins.value;
            os << "# layer " << li;
            if (li < plan.layers.size()) {
                const auto& l = plan.layers[li];
                os << " " << to_string(l.kind);
                if (l.is_2d())
                    os << " K=" << l.kernel << " " << l.in_channels << "x" << l.in_dim << " -> " << l.out_channels
                       << "x" << l.out_dim;
                else
                    os << " " << l.in_features << " -> " << l.out_features;
            }
            os << "\n";
        }
        char line[128];
        std::snprintf(line, sizeof line, "%-44s # %zu", isa::to_text(ins).c_str(), pc);
        os << line << "\n";
    }
    return os.str();
}

}  // namespace e3ne
