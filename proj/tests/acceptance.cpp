// Acceptance checks. One PASS/FAIL line per criterion.
//
// Exit status is 0 when the set of failing criteria equals the set given
// with --expect-fail (empty by default), so a documented failure stays
// visible without masking regressions elsewhere.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "e3ne/bundle.hpp"
#include "e3ne/codegen.hpp"
#include "e3ne/encoder.hpp"
#include "e3ne/error.hpp"
#include "e3ne/isa.hpp"
#include "e3ne/oracle.hpp"
#include "e3ne/simulator.hpp"
#include "e3ne/zoo.hpp"
#include "support.hpp"

using namespace e3ne;
using isa::Opcode;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) pass = false;
        if (detail.tellp() > 0) detail << "; ";
        detail << what << (ok ? "" : " [x]");
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

const std::vector<FloatTensor>& lenet_calibration() {
    static const auto samples = [] {
        std::mt19937_64 rng(2024);
        return random_inputs(rng, {1, 32, 32}, 8);
    }();
    return samples;
}

Compiled lenet_with(int replicas, bool reorder, bool intra = true) {
    auto d = lenet_design();
    d.conv_replicas = replicas;
    d.reorder = reorder;
    d.intra_parallelism = intra;
    return compile(lenet5(), d, lenet_calibration());
}

SimReport lenet_report(int replicas, bool reorder, bool intra = true) {
    const auto c = lenet_with(replicas, reorder, intra);
    return predict(c.program, c.plan, c.images);
}

const PMConfig2D& pm_of(const HardwarePlan& plan, int layer) {
    return plan.pms2d.at(static_cast<std::size_t>(plan.routes.at(static_cast<std::size_t>(layer)).pm));
}

// ---------------------------------------------------------------------------

void table3(Outcome& o) {
    for (bool intra : {true, false}) {
        auto d = lenet_design();
        d.intra_parallelism = intra;
        const auto plan = make_plan(lenet5(), d);
        const std::vector<int> want_p = intra ? std::vector<int>{1, 1, 2, 2, 6} : std::vector<int>{1, 1, 1, 1, 1};
        const std::vector<double> want_u = intra ? std::vector<double>{90, 100, 65, 71} : std::vector<double>{90, 100, 32, 36};
        std::vector<int> p;
        for (int l = 0; l < 5; ++l) p.push_back(plan.assignment(l)->parallel);
        std::string ps;
        for (int v : p) ps += (ps.empty() ? "" : ",") + std::to_string(v);
        if (intra) o.require(p == want_p, "P=" + ps);
        bool ok = true;
        std::string us;
        for (int l = 0; l < 4; ++l) {
            const double u = utilization(pm_of(plan, l), *plan.assignment(l));
            ok &= std::abs(u - want_u[l]) <= 1.0;
            us += (us.empty() ? "" : ",") + fmt("%.1f", u);
        }
        o.require(ok, std::string(intra ? "util" : "util(no intra)") + "=" + us);
    }
}

void anchors(Outcome& o) {
    auto costs_of = [](int dim, bool reorder) {
        Network n;
        n.input = {1, dim, dim};
        LayerSpec l;
        l.kind = LayerKind::Conv2D;
        l.out_channels = 1;
        l.kernel = 5;
        n.layers = {l};
        n = infer_shapes(n);
        n.weights[0] = FloatTensor({1, 1, 5, 5}, std::vector<float>(25, 0.25f));
        DesignVars d;
        d.quant.time_steps = 1;
        d.reorder = reorder;
        auto c = compile(n, d, {FloatTensor({1, dim, dim}, std::vector<float>(dim * dim, 0.5f))});
        Simulator sim(c.plan, c.images);
        sim.load_program(c.program);
        sim.load_input(encode_sample(c.quantized, FloatTensor::zeros({1, dim, dim})));
        std::vector<int64_t> costs;
        while (!sim.halted()) {
            const auto before = sim.state().cycle;
            sim.step();
            costs.push_back(sim.state().cycle - before);
        }
        return std::make_pair(c.program, costs);
    };
    {
        const auto [p, costs] = costs_of(5, false);
        std::size_t k = 0;
        while (p[k].op != Opcode::PROC) ++k;
        const bool ok = p[k + 1].op == Opcode::WAIT;
        o.require(ok && costs[k + 1] - 1 == 8, "stall without overlap=" + std::to_string(costs[k + 1] - 1));
        std::size_t a = 0;
        while (p[a].op != Opcode::ACTL) ++a;
        o.require(costs[a] == 2, "ACTL=" + std::to_string(costs[a]));
    }
    {
        const auto [p, costs] = costs_of(6, true);
        std::size_t k = 0;
        while (p[k].op != Opcode::PROC) ++k;
        const bool ok = p[k + 1].op == Opcode::ACTL && p[k + 2].op == Opcode::WAIT;
        o.require(ok && costs[k + 2] - 1 == 6, "stall with overlap=" + std::to_string(costs[k + 2] - 1));
    }
}

void instruction_parallelism(Outcome& o) {
    std::vector<double> red;
    std::string rs;
    for (int r : {1, 2, 4, 8}) {
        const double naive = static_cast<double>(lenet_report(r, false).total_cycles);
        const double re = static_cast<double>(lenet_report(r, true).total_cycles);
        red.push_back(100.0 * (1.0 - re / naive));
        rs += (rs.empty() ? "" : ",") + fmt("%.1f%%", red.back());
    }
    o.require(std::abs(red[0] - 11.0) <= 4.0, "R=1 reduction " + fmt("%.1f%%", red[0]) + " (11 +- 4)");
    bool mono = true;
    for (std::size_t k = 1; k < red.size(); ++k) mono &= red[k] < red[k - 1];
    o.require(mono, "R=1,2,4,8: " + rs + " decreasing");
}

void inter_module(Outcome& o) {
    std::vector<int64_t> lat;
    int64_t comm10 = 0;
    for (int r = 1; r <= 10; ++r) {
        const auto rep = lenet_report(r, true);
        lat.push_back(rep.total_cycles);
        if (r == 10) comm10 = rep.communication_cycles;
    }
    bool mono = true;
    for (std::size_t k = 1; k < lat.size(); ++k) mono &= lat[k] <= lat[k - 1];
    o.require(mono, "non-increasing over 1..10");
    const double ratio = static_cast<double>(lat[0]) / static_cast<double>(lat[9]);
    o.require(ratio >= 2.0, "latency(1)/latency(10)=" + fmt("%.2f", ratio) + " (>= 2.0)");
    const double floor_ratio = static_cast<double>(lat[9]) / static_cast<double>(comm10);
    o.require(floor_ratio <= 1.10, "latency(10)=" + std::to_string(lat[9]) + " vs communication floor " +
                                       std::to_string(comm10) + " = " + fmt("%.2fx", floor_ratio) + " (<= 1.10x)");
}

void intra_module(Outcome& o) {
    const auto with = lenet_report(1, true, true);
    const auto without = lenet_report(1, true, false);
    const double layer = static_cast<double>(without.layer_cycles[4]) / static_cast<double>(with.layer_cycles[4]);
    const double total = static_cast<double>(without.total_cycles) / static_cast<double>(with.total_cycles);
    o.require(layer >= 4.0 && layer <= 6.0, "120C5 P=1/P=6 = " + fmt("%.2f", layer) + " in [4, 6]");
    o.require(total >= 3.0 && total <= 5.0, "network = " + fmt("%.2f", total) + " in [3, 5]");
}

void oracle_equivalence(Outcome& o) {
    std::mt19937_64 rng(777);
    int nets = 0, runs = 0, exact = 0, avg = 0, max = 0;
    for (; nets < 100; ++nets) {
        const auto fc = testing::fuzz_case(rng, 2, false);
        for (const auto& l : fc.net.layers)
            if (l.kind == LayerKind::Pool2D) (l.pool_mode == PoolMode::Max ? max : avg)++;
        const auto re_program = reorder_for_overlap(fc.compiled.program);
        for (const auto& x : fc.inputs) {
            const auto in = encode_sample(fc.compiled.quantized, x);
            ++runs;
            try {
                const auto ref = quantized_forward(fc.compiled.quantized, in).logits;
                const auto a = run(fc.compiled.program, fc.compiled.plan, fc.compiled.images, in).output;
                const auto b = run(re_program, fc.compiled.plan, fc.compiled.images, in).output;
                exact += a == ref && b == ref;
            } catch (const Error&) {
            }
        }
    }
    o.require(exact == runs, std::to_string(exact) + "/" + std::to_string(runs) + " runs bit-exact on " +
                                 std::to_string(nets) + " networks, naive and reordered");
    o.require(avg > 0 && max > 0, "pool layers avg=" + std::to_string(avg) + " max=" + std::to_string(max));
}

// round_half_up(p / 2^s) clamped, on exact integers.
int64_t requant_rational(int64_t p, int s, int t) {
    if (p <= 0) return 0;
    const __int128 q = (__int128(p) * 2 + (__int128(1) << s)) / (__int128(1) << (s + 1));
    const __int128 top = (__int128(1) << t) - 1;
    return static_cast<int64_t>(q < top ? q : top);
}

void encoding(Outcome& o) {
    std::mt19937_64 rng(4242);
    {
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        std::uniform_int_distribution<int> td(1, 16);
        const int n = 100000;
        std::vector<float> v(n);
        for (auto& x : v) x = u(rng);
        double worst = 0.0;
        for (int off = 0; off < n; off += 1000) {
            const int t = td(rng);
            const std::vector<float> chunk(v.begin() + off, v.begin() + off + 1000);
            const auto s = encode_input(FloatTensor({1, 1, 1000}, chunk), {1, 1, 1000}, t, t);
            const double scale = std::ldexp(1.0, t) - 1.0;
            for (int k = 0; k < 1000; ++k) worst = std::max(worst, std::abs(chunk[k] * scale - s.values[k]));
        }
        o.require(worst <= 0.5 + 1e-9, "encode error max " + fmt("%.4f", worst) + " LSB over 1e5");
    }
    {
        std::uniform_int_distribution<int64_t> p(-(int64_t{1} << 40), int64_t{1} << 40);
        std::uniform_int_distribution<int> s(0, 40), t(1, 16);
        int bad = 0;
        for (int k = 0; k < 100000; ++k) {
            const int64_t x = k % 3 ? p(rng) : p(rng) >> 26;
            const int sh = s(rng), tt = t(rng);
            bad += requantize(x, sh, tt) != static_cast<uint32_t>(requant_rational(x, sh, tt));
        }
        o.require(bad == 0, "requantize mismatches " + std::to_string(bad) + "/1e5");
    }
    {
        // Conv layer whose output feeds a second layer, so it is requantized.
        // Weights sit on the grid of the radix the encoder picks, so only the
        // activations carry quantization error. Outputs stay below 1.
        Network n;
        n.input = {1, 12, 12};
        LayerSpec c;
        c.kind = LayerKind::Conv2D;
        c.out_channels = 4;
        c.kernel = 2;
        LayerSpec lin;
        lin.kind = LayerKind::Linear;
        lin.out_features = 2;
        n.layers = {c, lin};
        n = infer_shapes(n);
        std::uniform_int_distribution<int> wd(-3, 3);
        std::vector<float> w(element_count(n.layers[0].weight_shape()));
        for (auto& x : w) x = static_cast<float>(wd(rng)) / 8.0f;
        n.weights[0] = FloatTensor(n.layers[0].weight_shape(), w);
        QuantConfig qc;
        qc.weight_bits = 4;
        const int rw = weight_scale(n.weights[0], qc);
        for (auto& x : n.weights[0].data)
            x = static_cast<float>(std::ldexp(std::clamp(std::round(std::ldexp(double{x}, rw)), -8.0, 7.0), -rw));
        n.weights[1] = FloatTensor(n.layers[1].weight_shape(),
                                   std::vector<float>(element_count(n.layers[1].weight_shape()), 0.125f));
        const auto xs = random_inputs(rng, n.input, 64);

        std::vector<double> err;
        for (int t = 3; t <= 7; ++t) {
            DesignVars d;
            d.quant.weight_bits = 4;
            d.quant.time_steps = t;
            const auto q = compile(n, d, xs).quantized;
            if (q.layers[0].weights.radix != rw) o.require(false, "weight radix moved at T=" + std::to_string(t));
            const double scale = std::ldexp(1.0, q.layers[1].act_radix) - 1.0;
            double sum = 0.0;
            std::size_t cnt = 0;
            for (const auto& x : xs) {
                const auto f = float_forward(n, x)[0].data;
                const auto a = quantized_forward(q, encode_sample(q, x)).activations[0];
                for (std::size_t k = 0; k < f.size(); ++k, ++cnt) sum += std::abs(f[k] - a[k] / scale);
            }
            err.push_back(sum / static_cast<double>(cnt));
        }
        bool ok = true;
        std::string fs;
        for (std::size_t k = 1; k < err.size(); ++k) {
            const double f = err[k - 1] / err[k];
            ok &= f >= 1.8 && f <= 2.2;
            fs += (fs.empty() ? "" : ",") + fmt("%.2f", f);
        }
        o.require(ok, "error decay per T (3..7): " + fs + " in [1.8, 2.2]");
    }
}

void isa_bijection(Outcome& o) {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> op(0, isa::kOpcodeCount - 1);
    std::uniform_int_distribution<uint32_t> p5(0, 31), v22(0, isa::kMaxValue), m27(0, isa::kMaxMask), m4(0, 15),
        b1(0, 1);
    int bad = 0;
    for (int k = 0; k < 10000; ++k) {
        isa::Instruction i;
        i.op = static_cast<Opcode>(op(rng));
        switch (isa::category_of(i.op)) {
            case isa::Category::Config:
                i.param = p5(rng);
                i.value = v22(rng);
                break;
            case isa::Category::Command: i.mask = m27(rng); break;
            case isa::Category::Memory:
                i.mem = m4(rng);
                i.store = b1(rng);
                i.address = v22(rng);
                break;
            case isa::Category::Wait:
                i.module = p5(rng);
                i.condition = v22(rng);
                break;
        }
        const auto w = isa::encode(i);
        bad += !(isa::decode(w) == i) || isa::encode(isa::decode(w)) != w;
    }
    o.require(bad == 0, "roundtrip mismatches " + std::to_string(bad) + "/1e4");
    const auto words = isa::encode_program(lenet_with(1, true).program);
    o.require(isa::assemble(isa::disassemble(words)) == words,
              "LeNet asm(disasm) identical over " + std::to_string(words.size()) + " words");
}

void ipc(Outcome& o) {
    const auto rep = lenet_report(1, true);
    o.require(std::abs(rep.ipc - 0.4) <= 0.15, "IPC " + fmt("%.3f", rep.ipc) + " (0.4 +- 0.15), " +
                                                   std::to_string(rep.instructions) + " instructions / " +
                                                   std::to_string(rep.total_cycles) + " cycles");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::vector<std::string> expect_fail;
    app.add_option("--expect-fail", expect_fail, "criterion ids known to fail");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
        {"table3", table3},
        {"cycle_anchors", anchors},
        {"instruction_parallelism", instruction_parallelism},
        {"inter_module", inter_module},
        {"intra_module", intra_module},
        {"oracle_equivalence", oracle_equivalence},
        {"encoding", encoding},
        {"isa_bijection", isa_bijection},
        {"ipc", ipc},
    };

    std::set<std::string> failed;
    for (const auto& [id, fn] : criteria) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fn(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %-24s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id.c_str(), o.detail.str().c_str(), secs);
        if (!o.pass) failed.insert(id);
    }
    const std::set<std::string> expected(expect_fail.begin(), expect_fail.end());
    std::printf("%zu/%zu criteria pass", criteria.size() - failed.size(), criteria.size());
    if (!expected.empty()) {
        std::printf("; expected failures:");
        for (const auto& e : expected) std::printf(" %s", e.c_str());
    }
    std::printf("\n");
    return failed == expected ? 0 : 1;
}
