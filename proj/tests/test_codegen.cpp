#include "doctest.h"

#include <algorithm>
#include <random>

#include "e3ne/bundle.hpp"
#include "e3ne/codegen.hpp"
#include "e3ne/error.hpp"
#include "e3ne/oracle.hpp"
#include "e3ne/simulator.hpp"
#include "e3ne/zoo.hpp"
#include "support.hpp"

using namespace e3ne;
using isa::Opcode;

namespace {

Compiled single_conv(int c_in, int dim, int k, int t, bool reorder = true, int c_out = 1, int width = 0) {
    Network n;
    n.input = {c_in, dim, dim};
    LayerSpec l;
    l.kind = LayerKind::Conv2D;
    l.out_channels = c_out;
    l.kernel = k;
    n.layers = {l};
    n = infer_shapes(n);
    std::mt19937_64 rng(41);
    std::normal_distribution<double> w(0.0, 0.5);
    std::vector<float> v(element_count(n.layers[0].weight_shape()));
    for (auto& x : v) x = static_cast<float>(w(rng));
    n.weights[0] = FloatTensor(n.layers[0].weight_shape(), v);
    DesignVars d;
    d.quant.time_steps = t;
    d.reorder = reorder;
    if (width) d.pm_widths.push_back({LayerKind::Conv2D, k, width});
    return compile(n, d, random_inputs(rng, n.input, 2));
}

std::vector<Opcode> ops(const isa::Program& p) {
    std::vector<Opcode> out;
    for (const auto& i : p) out.push_back(i.op);
    return out;
}

long count(const isa::Program& p, Opcode op) {
    return std::count_if(p.begin(), p.end(), [&](const auto& i) { return i.op == op; });
}

bool touches(const isa::Instruction& i) {
    switch (i.op) {
        case Opcode::PROC:
        case Opcode::LIN:
        case Opcode::RST:
        case Opcode::KERL:
        case Opcode::KERD:
        case Opcode::ACTS:
        case Opcode::ENA:
        case Opcode::CONF:
        case Opcode::END: return true;
        default: return false;
    }
}

// After every PROC/LIN the next instruction that uses module results or
// state must be preceded by a WAIT.
void check_waits(const isa::Program& p) {
    for (std::size_t pc = 0; pc < p.size(); ++pc) {
        if (p[pc].op != Opcode::PROC && p[pc].op != Opcode::LIN) continue;
        bool waited = false;
        for (std::size_t k = pc + 1; k < p.size(); ++k) {
            if (p[k].op == Opcode::WAIT) {
                waited = true;
                break;
            }
            if (touches(p[k])) break;
        }
        CHECK_MESSAGE(waited, "PROC at " << pc << " has no WAIT");
    }
}

}  // namespace

TEST_CASE("one row, one channel, one time step") {
    const auto c = single_conv(1, 1, 1, 1);
    std::vector<Opcode> body;
    for (auto op : ops(c.program))
        if (op != Opcode::ENA && op != Opcode::CONF) body.push_back(op);
    CHECK(body == std::vector<Opcode>{Opcode::RST, Opcode::KERL, Opcode::ACTL, Opcode::PROC, Opcode::WAIT,
                                      Opcode::ACTS, Opcode::END});
    CHECK(c.program.front().op == Opcode::ENA);
    CHECK(c.program[1].op == Opcode::CONF);
    CHECK(reorder_for_overlap(c.program) == c.program);
}

TEST_CASE("accumulating loop scales with input channels") {
    long rst[3], kerl[3], actl[3];
    const int cin[3] = {1, 2, 4};
    for (int i = 0; i < 3; ++i) {
        const auto c = single_conv(cin[i], 6, 3, 2);
        rst[i] = count(c.program, Opcode::RST);
        kerl[i] = count(c.program, Opcode::KERL);
        actl[i] = count(c.program, Opcode::ACTL);
    }
    for (int i = 1; i < 3; ++i) {
        CHECK(rst[i] == 2 * rst[i - 1]);
        CHECK(kerl[i] == 2 * kerl[i - 1]);
        CHECK(actl[i] == 2 * actl[i - 1]);
    }
}

TEST_CASE("reorder hoists next-row loads above the wait") {
    const auto naive = single_conv(1, 5, 3, 1, false);
    const auto p = reorder_for_overlap(naive.program);
    CHECK(p.size() == naive.program.size());
    int hoisted = 0;
    for (std::size_t k = 0; k + 2 < p.size(); ++k)
        if (p[k].op == Opcode::PROC && p[k + 1].op == Opcode::ACTL) {
            ++hoisted;
            CHECK(p[k + 2].op == Opcode::WAIT);
        }
    CHECK(hoisted == 4);  // rows 1..4 of a five-row input

    // Each hoisted two-cycle row load disappears from the critical path.
    const auto in = encode_sample(naive.quantized, FloatTensor::zeros({1, 5, 5}));
    const auto a = run(naive.program, naive.plan, naive.images, in);
    const auto b = run(p, naive.plan, naive.images, in);
    CHECK(a.report.total_cycles - b.report.total_cycles == 2 * hoisted);
    CHECK(a.output == b.output);
}

TEST_CASE("reorder never hoists past a load it depends on") {
    isa::Program p = {isa::memory(Opcode::ACTL, isa::Mem::Ping2D, 0), isa::command(Opcode::PROC, 1),
                      isa::wait(0, isa::WaitCond::ModuleIdle), isa::memory(Opcode::ACTL, isa::Mem::Ping2D, 0),
                      isa::end()};
    CHECK(reorder_for_overlap(p) == p);
}

TEST_CASE("generated programs are well formed") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 40; ++i) {
        const auto fc = testing::fuzz_case(rng, 0, i % 2 == 0);
        CHECK_NOTHROW(isa::check_program(fc.compiled.program));
        CHECK(fc.compiled.program.back().op == Opcode::END);
        CHECK(count(fc.compiled.program, Opcode::END) == 1);
        check_waits(fc.compiled.program);
        check_waits(reorder_for_overlap(fc.compiled.program));
    }
    const auto net = lenet5();
    const auto c = compile(net, lenet_design(), random_inputs(rng, net.input, 2));
    check_waits(c.program);
}

TEST_CASE("requantization shift travels in a CONF") {
    std::mt19937_64 rng(43);
    const auto net = lenet5();
    const auto c = compile(net, lenet_design(), random_inputs(rng, net.input, 2));
    std::vector<uint32_t> shifts;
    for (const auto& i : c.program)
        if (i.op == Opcode::CONF && i.param == static_cast<uint32_t>(isa::Param::RequantShift))
            shifts.push_back(i.value);
    REQUIRE(shifts.size() == net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        CHECK(shifts[l] == static_cast<uint32_t>(c.quantized.layers[l].shift));
}

TEST_CASE("plan mismatch is a codegen error") {
    const auto c = single_conv(1, 4, 3, 2);
    auto plan = c.plan;
    plan.pms2d.clear();
    CHECK_THROWS_AS(generate(c.quantized, plan), CodegenError);
    auto q = c.quantized;
    q.layers.push_back(q.layers.front());
    CHECK_THROWS_AS(generate(q, c.plan), CodegenError);
}

TEST_CASE("annotated listing marks every layer") {
    std::mt19937_64 rng(44);
    const auto net = lenet5();
    const auto c = compile(net, lenet_design(), random_inputs(rng, net.input, 1));
    const auto text = annotated_listing(c.program, c.plan);
    for (int l = 0; l < 7; ++l) CHECK(text.find("# layer " + std::to_string(l)) != std::string::npos);
    CHECK(isa::assemble(text) == isa::encode_program(c.program));
}

TEST_CASE("remainder output channels form a shorter final group") {
    // Five output channels, two per pass on an eight-column module.
    const auto c = single_conv(1, 4, 3, 1, true, 5, 8);
    const auto* a = c.plan.assignment(0);
    REQUIRE(a != nullptr);
    CHECK(a->parallel == 2);
    CHECK(count(c.program, Opcode::KERL) == 5);
    CHECK(count(c.program, Opcode::PROC) == 3 * 4);  // three groups, four input rows
    std::mt19937_64 rng(45);
    const auto x = random_input(rng, {1, 4, 4});
    const auto in = encode_sample(c.quantized, x);
    CHECK(run(c.program, c.plan, c.images, in).output == quantized_forward(c.quantized, in).logits);
}
