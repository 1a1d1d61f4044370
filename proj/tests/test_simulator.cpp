#include "doctest.h"

#include <random>
#include <sstream>

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

Network conv_net(int c_in, int dim, int k, int c_out = 1) {
    Network n;
    n.input = {c_in, dim, dim};
    LayerSpec l;
    l.kind = LayerKind::Conv2D;
    l.out_channels = c_out;
    l.kernel = k;
    n.layers = {l};
    n = infer_shapes(n);
    n.weights[0] = FloatTensor(n.layers[0].weight_shape(),
                               std::vector<float>(element_count(n.layers[0].weight_shape()), 0.25f));
    return n;
}

Compiled compile_conv(int dim, int k, int t, bool reorder) {
    const auto net = conv_net(1, dim, k);
    DesignVars d;
    d.quant.time_steps = t;
    d.reorder = reorder;
    std::mt19937_64 rng(51);
    return compile(net, d, random_inputs(rng, net.input, 2));
}

SpikeTrain zeros_for(const Compiled& c) {
    return encode_sample(c.quantized, FloatTensor::zeros({c.plan.input.channels, c.plan.input.height,
                                                          c.plan.input.width}));
}

// Cycle cost of every executed instruction, in program order.
std::vector<int64_t> step_costs(const Compiled& c, const isa::Program& p) {
    Simulator sim(c.plan, c.images);
    sim.load_program(p);
    sim.load_input(zeros_for(c));
    std::vector<int64_t> costs;
    while (!sim.halted()) {
        const auto before = sim.state().cycle;
        sim.step();
        costs.push_back(sim.state().cycle - before);
    }
    return costs;
}

std::size_t first(const isa::Program& p, Opcode op, std::size_t from = 0) {
    for (std::size_t k = from; k < p.size(); ++k)
        if (p[k].op == op) return k;
    FAIL("opcode not found");
    return 0;
}

int64_t brute_row(const std::vector<uint8_t>& s, const std::vector<int32_t>& w, int x, int stride, int pad) {
    int64_t acc = 0;
    for (int kx = 0; kx < static_cast<int>(w.size()); ++kx) {
        const int ix = x * stride + kx - pad;
        if (ix >= 0 && ix < static_cast<int>(s.size())) acc += w[kx] * int64_t{s[ix]};
    }
    return acc;
}

}  // namespace

TEST_CASE("conv_row examples") {
    std::vector<int64_t> psum(3, 7);
    CHECK(conv_row(std::vector<uint8_t>(5, 0), 2, std::vector<int32_t>{1, 2, 3}, 1, 0, psum) == 0);
    CHECK(psum == std::vector<int64_t>{7, 7, 7});

    std::vector<int64_t> one(1, 0);
    conv_row(std::vector<uint8_t>{1}, 0, std::vector<int32_t>{-3}, 1, 0, one);
    CHECK(one[0] == -3);

    std::mt19937_64 rng(52);
    std::uniform_int_distribution<int> bit(0, 1), wd(-16, 15), sd(1, 3), pd(0, 2), kd(1, 5), dd(1, 12), td(0, 7);
    for (int i = 0; i < 2000; ++i) {
        const int d = dd(rng), k = kd(rng), str = sd(rng), pad = pd(rng), t = td(rng);
        if (d + 2 * pad < k) continue;
        const int out = (d + 2 * pad - k) / str + 1;
        std::vector<uint8_t> s(d);
        std::vector<int32_t> w(k);
        for (auto& b : s) b = static_cast<uint8_t>(bit(rng));
        for (auto& x : w) x = wd(rng);
        std::vector<int64_t> psum(out, 0);
        conv_row(s, t, w, str, pad, psum);
        for (int x = 0; x < out; ++x) CHECK(psum[x] == brute_row(s, w, x, str, pad) << t);
    }
}

TEST_CASE("identity 1x1 convolution returns the input integers") {
    const auto net = conv_net(1, 6, 1);
    DesignVars d;
    d.quant.time_steps = 4;
    d.quant.weight_bits = 3;
    const auto plan = make_plan(net, d);
    QuantizedNetwork q;
    q.input = net.input;
    q.weight_bits = 3;
    q.time_steps = 4;
    QuantizedLayer ql;
    ql.spec = net.layers[0];
    ql.weights.shape = {1, 1, 1, 1};
    ql.weights.data = {1};
    ql.act_radix = 4;
    q.layers = {ql};
    const auto program = generate(q, plan);
    SpikeTrain in;
    in.time_steps = 4;
    in.shape = net.input;
    for (uint32_t v = 0; v < 36; ++v) in.values.push_back((v * 7) % 16);
    const auto r = run(program, plan, build_weight_images(q, plan), in);
    REQUIRE(r.output.size() == 36);
    for (std::size_t k = 0; k < 36; ++k) CHECK(r.output[k] == in.values[k]);
}

TEST_CASE("cycle anchors") {
    SUBCASE("K=5 row without reordering waits eight cycles") {
        const auto c = compile_conv(5, 5, 1, false);
        const auto costs = step_costs(c, c.program);
        const auto proc = first(c.program, Opcode::PROC);
        CHECK(costs[proc] == 1);
        CHECK(c.program[proc + 1].op == Opcode::WAIT);
        CHECK(costs[proc + 1] - 1 == 8);
    }
    SUBCASE("hoisted row load leaves six") {
        const auto c = compile_conv(6, 5, 1, true);
        const auto costs = step_costs(c, c.program);
        const auto proc = first(c.program, Opcode::PROC);
        REQUIRE(c.program[proc + 1].op == Opcode::ACTL);
        CHECK(costs[proc + 1] == 2);
        REQUIRE(c.program[proc + 2].op == Opcode::WAIT);
        CHECK(costs[proc + 2] - 1 == 6);
    }
    SUBCASE("row loads take two cycles, waits on idle modules one") {
        const auto c = compile_conv(5, 5, 1, false);
        auto p = c.program;
        const auto actl = first(p, Opcode::ACTL);
        p.insert(p.begin() + static_cast<long>(actl), isa::wait(0, isa::WaitCond::ModuleIdle));
        const auto costs = step_costs(c, p);
        CHECK(costs[actl] == 1);
        CHECK(costs[actl + 1] == 2);
    }
}

TEST_CASE("fuzzed networks match the integer oracle") {
    std::mt19937_64 rng(53);
    int cases = 0;
    for (int i = 0; i < 60; ++i) {
        const auto fc = testing::fuzz_case(rng, 2, i % 2 == 0);
        for (const auto& x : fc.inputs) {
            const auto in = encode_sample(fc.compiled.quantized, x);
            QuantizedResult ref;
            try {
                ref = quantized_forward(fc.compiled.quantized, in);
            } catch (const PsumOverflow&) {
                continue;
            }
            const auto r = run(fc.compiled.program, fc.compiled.plan, fc.compiled.images, in);
            CHECK(r.output == ref.logits);
            ++cases;
        }
    }
    CHECK(cases >= 100);
}

TEST_CASE("reordering keeps outputs and never adds cycles") {
    std::mt19937_64 rng(54);
    for (int i = 0; i < 30; ++i) {
        const auto fc = testing::fuzz_case(rng, 1, false);
        const auto re = reorder_for_overlap(fc.compiled.program);
        const auto in = encode_sample(fc.compiled.quantized, fc.inputs[0]);
        const auto a = run(fc.compiled.program, fc.compiled.plan, fc.compiled.images, in);
        const auto b = run(re, fc.compiled.plan, fc.compiled.images, in);
        CHECK(a.output == b.output);
        CHECK(b.report.total_cycles <= a.report.total_cycles);
        CHECK(a.report.conditional_adds == b.report.conditional_adds);
    }
}

TEST_CASE("runs are deterministic") {
    std::mt19937_64 rng(55);
    const auto fc = testing::fuzz_case(rng, 1);
    const auto in = encode_sample(fc.compiled.quantized, fc.inputs[0]);
    const auto a = run(fc.compiled.program, fc.compiled.plan, fc.compiled.images, in);
    const auto b = run(fc.compiled.program, fc.compiled.plan, fc.compiled.images, in);
    CHECK(a.output == b.output);
    CHECK(a.report.to_json() == b.report.to_json());
}

TEST_CASE("work is conserved across parallelism and reordering") {
    std::mt19937_64 rng(56);
    const auto net = lenet5();
    const auto calib = random_inputs(rng, net.input, 2);
    const auto x = random_input(rng, net.input);
    int64_t adds = -1;
    std::vector<int64_t> out;
    for (int reps : {1, 3})
        for (bool intra : {true, false})
            for (bool reorder : {true, false}) {
                auto d = lenet_design();
                d.conv_replicas = reps;
                d.intra_parallelism = intra;
                d.reorder = reorder;
                const auto c = compile(net, d, calib);
                const auto r = run(c.program, c.plan, c.images, encode_sample(c.quantized, x));
                if (adds < 0) {
                    adds = r.report.conditional_adds;
                    out = r.output;
                }
                CHECK(r.report.conditional_adds == adds);
                CHECK(r.output == out);
            }
    CHECK(adds > 0);
}

TEST_CASE("report invariants") {
    std::mt19937_64 rng(57);
    const auto net = lenet5();
    const auto c = compile(net, lenet_design(), random_inputs(rng, net.input, 2));
    const auto r = run(c.program, c.plan, c.images, encode_sample(c.quantized, random_input(rng, net.input))).report;
    int64_t sum = 0;
    for (auto v : r.layer_cycles) sum += v;
    CHECK(r.layer_cycles.size() == net.layers.size());
    CHECK(sum <= r.total_cycles);
    CHECK(r.communication_cycles + r.wait_cycles + r.control_cycles == r.total_cycles);
    CHECK(r.instructions == static_cast<int64_t>(c.program.size()));
    CHECK(r.latency_us == doctest::Approx(r.total_cycles / 200.0));
    for (const auto& m : r.modules) {
        CHECK(m.utilization >= 0.0);
        CHECK(m.utilization <= 1.0);
    }
    const auto p = predict(c.program, c.plan, c.images);
    CHECK(p.total_cycles == r.total_cycles);
}

TEST_CASE("more replicas never slow lenet down") {
    std::mt19937_64 rng(58);
    const auto net = lenet5();
    const auto calib = random_inputs(rng, net.input, 2);
    int64_t prev = INT64_MAX;
    int64_t layer4[7] = {};
    for (int reps = 1; reps <= 6; ++reps) {
        auto d = lenet_design();
        d.conv_replicas = reps;
        const auto c = compile(net, d, calib);
        const auto r = predict(c.program, c.plan, c.images);
        CHECK(r.total_cycles <= prev);
        prev = r.total_cycles;
        layer4[reps] = r.layer_cycles[4];
    }
    const double ratio = static_cast<double>(layer4[1]) / static_cast<double>(layer4[6]);
    CHECK(ratio >= 4.0);
    CHECK(ratio <= 6.0);
}

TEST_CASE("trace output") {
    const auto c = compile_conv(4, 3, 2, true);
    std::ostringstream trace;
    SimOptions o;
    o.trace = &trace;
    run(c.program, c.plan, c.images, zeros_for(c), o);
    CHECK(trace.str().find("PROC") != std::string::npos);
}

TEST_CASE("faults carry cycle and pc") {
    const auto c = compile_conv(6, 3, 2, false);
    const auto in = zeros_for(c);

    SUBCASE("PROC on an unconfigured module") {
        const isa::Program p = {isa::ena(1), isa::command(Opcode::PROC, 1), isa::end()};
        try {
            run(p, c.plan, c.images, in);
            FAIL("no fault");
        } catch (const SimFault& f) {
            CHECK(f.pc() == 1);
            CHECK(f.cycle() >= 1);
        }
    }
    SUBCASE("row address outside the buffer") {
        auto p = c.program;
        p[first(p, Opcode::ACTL)].address = 100000;
        CHECK_THROWS_AS(run(p, c.plan, c.images, in), SimFault);
    }
    SUBCASE("PROC while the module is busy") {
        auto p = c.program;
        const auto proc = first(p, Opcode::PROC);
        REQUIRE(p[proc + 1].op == Opcode::WAIT);
        p.erase(p.begin() + static_cast<long>(proc) + 1);
        try {
            run(p, c.plan, c.images, in);
            FAIL("no fault");
        } catch (const SimFault& f) {
            CHECK(f.pc() > static_cast<long>(proc));
        }
    }
    SUBCASE("running past the end") {
        auto p = c.program;
        p.pop_back();
        CHECK_THROWS_AS(run(p, c.plan, c.images, in), SimFault);
    }
    SUBCASE("cycle budget") {
        SimOptions o;
        o.max_cycles = 10;
        CHECK_THROWS_AS(run(c.program, c.plan, c.images, in, o), SimFault);
    }
}

TEST_CASE("partial sums beyond their width fault") {
    std::mt19937_64 rng(59);
    const auto net = conv_net(3, 8, 5, 2);
    DesignVars d;
    d.quant.time_steps = 6;
    auto c = compile(net, d, random_inputs(rng, net.input, 2));
    c.plan.design.psum_headroom = -12;
    const auto in = encode_sample(c.quantized, FloatTensor({3, 8, 8}, std::vector<float>(192, 1.0f)));
    CHECK_THROWS_AS(run(c.program, c.plan, c.images, in), SimFault);
}
