// e3ne: compile, run and inspect spiking-network accelerator bundles.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "e3ne/bundle.hpp"
#include "e3ne/codegen.hpp"
#include "e3ne/error.hpp"
#include "e3ne/oracle.hpp"
#include "e3ne/zoo.hpp"

namespace fs = std::filesystem;
using namespace e3ne;

namespace {

constexpr int kVerifyMismatch = 1;

void write_file(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << text;
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& args) {
    std::vector<fs::path> out;
    for (const auto& a : args) {
        if (fs::is_directory(a)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(a))
                if (e.is_regular_file()) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            out.insert(out.end(), files.begin(), files.end());
        } else {
            out.emplace_back(a);
        }
    }
    if (out.empty()) throw IoError("no input files");
    return out;
}

std::string logits_json(const std::vector<int64_t>& logits) {
    nlohmann::ordered_json j;
    j["logits"] = logits;
    j["argmax"] = logits.empty() ? -1 : static_cast<long>(argmax(logits));
    return j.dump(2) + "\n";
}

int cmd_compile(const std::string& model, const std::string& design_file, const std::string& calibration,
                const std::string& out) {
    DesignVars design;
    if (!design_file.empty()) design = load_design_vars(design_file);
    const auto net = load_model(model, design.pool_mode);
    const auto samples = read_calibration_dir(calibration, net.input);
    const auto c = compile(net, design, samples);
    write_bundle(c, out);
    for (const auto& w : c.quantized.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& w : c.plan.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "compiled " << net.name << ": " << c.program.size() << " instructions, " << c.plan.module_count
              << " modules, " << c.plan.onchip_bits << " on-chip bits -> " << out << "\n";
    return 0;
}

int cmd_run(const std::string& bundle, const std::string& input, const std::string& out, const std::string& trace) {
    const auto c = read_bundle(bundle);
    const auto x = read_input(input, c.quantized);
    std::ofstream trace_out;
    SimOptions opts;
    if (!trace.empty()) {
        trace_out.open(trace, std::ios::trunc);
        if (!trace_out) throw IoError("cannot write " + trace);
        opts.trace = &trace_out;
    }
    const auto res = run(c.program, c.plan, c.images, x, opts);
    const fs::path dir = out.empty() ? fs::path(bundle) : fs::path(out);
    fs::create_directories(dir);
    write_file(dir / "logits.json", logits_json(res.output));
    write_file(dir / "report.json", res.report.to_json());
    std::cout << "argmax " << (res.output.empty() ? -1 : static_cast<long>(argmax(res.output))) << ", "
              << res.report.total_cycles << " cycles, " << res.report.latency_us << " us\n";
    return 0;
}

int cmd_verify(const std::string& bundle, const std::vector<std::string>& inputs, int jobs) {
    const auto c = read_bundle(bundle);
    const auto files = expand_inputs(inputs);
    std::vector<std::string> lines(files.size());
    std::vector<char> ok(files.size(), 0);
    auto check = [&](std::size_t i) {
        const auto x = read_input(files[i], c.quantized);
        const auto expect = quantized_forward(c.quantized, x, c.plan.design.psum_headroom);
        const auto got = run(c.program, c.plan, c.images, x).output;
        ok[i] = got == expect.logits;
        std::ostringstream os;
        os << (ok[i] ? "PASS " : "FAIL ") << files[i].string();
        if (!ok[i])
            for (std::size_t k = 0; k < got.size() && k < expect.logits.size(); ++k)
                if (got[k] != expect.logits[k]) {
                    os << " (first difference at " << k << ": simulator " << got[k] << ", oracle "
                       << expect.logits[k] << ")";
                    break;
                }
        lines[i] = os.str();
    };
    jobs = std::max(1, jobs);
    for (std::size_t start = 0; start < files.size(); start += jobs) {
        std::vector<std::future<void>> batch;
        for (std::size_t i = start; i < std::min(files.size(), start + jobs); ++i)
            batch.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, check, i));
        for (auto& f : batch) f.get();
    }
    std::size_t passed = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        std::cout << lines[i] << "\n";
        passed += ok[i];
    }
    std::cout << passed << "/" << files.size() << " bit-exact\n";
    return passed == files.size() ? 0 : kVerifyMismatch;
}

int cmd_disasm(const std::string& program) {
    const auto words = isa::read_program(program);
    std::cout << isa::disassemble(words);
    return 0;
}

int cmd_report(const std::string& bundle) {
    const auto c = read_bundle(bundle);
    const auto& plan = c.plan;
    const auto rep = predict(c.program, plan, c.images);
    std::printf("network %s: %d modules, weights %s, %lld on-chip bits\n", plan.network.c_str(), plan.module_count,
                to_string(plan.storage), static_cast<long long>(plan.onchip_bits));
    std::printf("%-5s %-8s %-11s %-5s %-24s %7s %10s %10s\n", "layer", "kind", "out", "para", "windows S..E",
                "util%", "cycles", "time_us");
    for (std::size_t li = 0; li < plan.layers.size(); ++li) {
        const auto& l = plan.layers[li];
        std::string shape, windows, util = "-", para = "-";
        if (l.is_2d()) {
            shape = std::to_string(l.out_channels) + "x" + std::to_string(l.out_dim) + "x" + std::to_string(l.out_dim);
            const auto* a = plan.assignment(static_cast<int>(li));
            const auto& pm = plan.pms2d[plan.routes[li].pm];
            para = std::to_string(a->parallel);
            for (const auto& w : a->windows)
                windows += (windows.empty() ? "" : " ") + std::to_string(w.start) + ".." + std::to_string(w.end);
            char buf[16];
            std::snprintf(buf, sizeof buf, "%.0f", utilization(pm, *a));
            util = buf;
        } else {
            shape = std::to_string(l.out_features);
            para = std::to_string(plan.pm1d->parallel_features);
        }
        const auto cycles = rep.layer_cycles[li];
        std::printf("%-5zu %-8s %-11s %-5s %-24s %7s %10lld %10.2f\n", li, to_string(l.kind), shape.c_str(),
                    para.c_str(), windows.c_str(), util.c_str(), static_cast<long long>(cycles),
                    static_cast<double>(cycles) / plan.design.clock_mhz);
    }
    std::printf("memories: ping2d %dx%d, pong2d %dx%d, ping1d %dx%d, pong1d %dx%d\n", plan.buffers.ping2d.width,
                plan.buffers.ping2d.height, plan.buffers.pong2d.width, plan.buffers.pong2d.height,
                plan.buffers.ping1d.width, plan.buffers.ping1d.height, plan.buffers.pong1d.width,
                plan.buffers.pong1d.height);
    for (const auto& m : plan.weight_mems)
        std::printf("  weights layer %d: %d bits x %d rows\n", m.layer, m.width_bits, m.rows);
    if (plan.staging) std::printf("  staging RAM: %d bits x %d rows\n", plan.staging->width_bits, plan.staging->rows);
    std::printf("predicted: %lld cycles, %.2f us at %.0f MHz, %lld instructions, %.3f per clock\n",
                static_cast<long long>(rep.total_cycles), rep.latency_us, plan.design.clock_mhz,
                static_cast<long long>(rep.instructions), rep.ipc);
    std::printf("cycle split: communication %lld, wait %lld, control %lld\n",
                static_cast<long long>(rep.communication_cycles), static_cast<long long>(rep.wait_cycles),
                static_cast<long long>(rep.control_cycles));
    return 0;
}

int cmd_fixture(const std::string& out, uint64_t seed, int samples, const std::string& pool) {
    const auto mode = parse_pool_mode(pool);
    const auto net = lenet5(seed, mode);
    const fs::path dir(out);
    save_model(net, dir / "model");
    fs::create_directories(dir / "calibration");
    fs::create_directories(dir / "inputs");
    std::mt19937_64 rng(seed + 1);
    for (int i = 0; i < samples; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample%03d.f32", i);
        write_f32_blob(dir / "calibration" / name, random_input(rng, net.input).data);
        write_f32_blob(dir / "inputs" / name, random_input(rng, net.input).data);
    }
    auto design = lenet_design();
    design.pool_mode = mode;
    write_file(dir / "design.json", design_vars_to_json(design));
    std::cout << "wrote LeNet-5 fixture (" << net.parameter_count() << " parameters) to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Compiler and cycle simulator for radix-encoded spiking network accelerators"};
    app.require_subcommand(1);

    std::string model, design, calibration, out, bundle, input, trace, program, pool = "avg";
    std::vector<std::string> inputs;
    int jobs = 1, samples = 8;
    uint64_t seed = 1;

    auto* compile_cmd = app.add_subcommand("compile", "quantize, plan and generate a bundle");
    compile_cmd->add_option("--model", model, "model directory (manifest.json + blobs)")->required();
    compile_cmd->add_option("--design", design, "design variables file (JSON)");
    compile_cmd->add_option("--calibration", calibration, "directory of float32 input samples")->required();
    compile_cmd->add_option("--out", out, "bundle directory")->required();

    auto* run_cmd = app.add_subcommand("run", "simulate a bundle on one input");
    run_cmd->add_option("--bundle", bundle, "bundle directory")->required();
    run_cmd->add_option("--input", input, "spike file or float32 tensor")->required();
    run_cmd->add_option("--out", out, "directory for logits.json and report.json (default: bundle)");
    run_cmd->add_option("--trace", trace, "write a per-instruction trace");

    auto* verify_cmd = app.add_subcommand("verify", "compare simulator and integer oracle");
    verify_cmd->add_option("--bundle", bundle, "bundle directory")->required();
    verify_cmd->add_option("inputs", inputs, "input files or directories")->required();
    verify_cmd->add_option("--jobs", jobs, "parallel simulations");

    auto* disasm_cmd = app.add_subcommand("disasm", "print a program as assembly");
    disasm_cmd->add_option("program", program, "program.bin")->required();

    auto* report_cmd = app.add_subcommand("report", "summarize a bundle's plan and predicted cycles");
    report_cmd->add_option("--bundle", bundle, "bundle directory")->required();

    auto* fixture_cmd = app.add_subcommand("fixture", "write the LeNet-5 fixture model and samples");
    fixture_cmd->add_option("--out", out, "output directory")->required();
    fixture_cmd->add_option("--seed", seed, "weight seed");
    fixture_cmd->add_option("--samples", samples, "calibration and input samples");
    fixture_cmd->add_option("--pool", pool, "pooling mode (avg or max)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*compile_cmd) return cmd_compile(model, design, calibration, out);
        if (*run_cmd) return cmd_run(bundle, input, out, trace);
        if (*verify_cmd) return cmd_verify(bundle, inputs, jobs);
        if (*disasm_cmd) return cmd_disasm(program);
        if (*report_cmd) return cmd_report(bundle);
        if (*fixture_cmd) return cmd_fixture(out, seed, samples, pool);
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error [io]: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::Io);
    }
    return 0;
}
