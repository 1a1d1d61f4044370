#include "e3ne/bundle.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "json.hpp"

#include "e3ne/codegen.hpp"
#include "e3ne/error.hpp"

namespace e3ne {

namespace fs = std::filesystem;
using nlohmann::json;

Compiled compile(const Network& net, const DesignVars& design, const std::vector<FloatTensor>& calibration) {
    design.check();
    validate(net);
    Compiled c;
    const auto scales = calibrate_activations(net, calibration, design.quant);
    c.quantized = quantize_network(net, scales, design.quant);
    c.plan = make_plan(net, design);
    c.program = generate(c.quantized, c.plan, {design.reorder});
    c.images = build_weight_images(c.quantized, c.plan);
    return c;
}

SpikeTrain encode_sample(const QuantizedNetwork& q, const FloatTensor& x) {
    if (q.layers.empty()) throw ShapeError("network has no layers");
    return encode_input(x, q.input, q.layers.front().act_radix, q.time_steps);
}

// ---------------------------------------------------------------------------
// Binary helpers

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(const std::vector<uint8_t>& in, std::size_t at) {
    if (at + 4 > in.size()) throw ParseError("file truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t{in[at + i]} << (8 * i);
    return v;
}

std::vector<uint8_t> read_bytes(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& file, const std::vector<uint8_t>& bytes) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + file.string());
}

std::string read_text(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << text;
    if (!out) throw IoError("short write to " + file.string());
}

bool has_magic(const std::vector<uint8_t>& b, const char* magic) {
    return b.size() >= 4 && std::memcmp(b.data(), magic, 4) == 0;
}

}  // namespace

std::vector<uint8_t> pack_weight_image(const WeightImage& img) {
    if (img.entries * img.weight_bits > img.width_bits)
        throw FieldOverflow("weight row wider than its memory");
    std::vector<uint8_t> out{'E', '3', 'N', 'W'};
    for (uint32_t v : {kWeightImageVersion, static_cast<uint32_t>(img.layer), static_cast<uint32_t>(img.weight_bits),
                       static_cast<uint32_t>(img.width_bits), static_cast<uint32_t>(img.rows),
                       static_cast<uint32_t>(img.entries)})
        put_u32(out, v);
    const std::size_t row_bytes = (static_cast<std::size_t>(img.width_bits) + 7) / 8;
    const uint32_t field = (1u << img.weight_bits) - 1u;
    for (int r = 0; r < img.rows; ++r) {
        std::vector<uint8_t> row(row_bytes, 0);
        for (int e = 0; e < img.entries; ++e) {
            const uint32_t bits = static_cast<uint32_t>(img.at(r, e)) & field;
            for (int b = 0; b < img.weight_bits; ++b)
                if (bits >> b & 1u) {
                    const std::size_t pos = static_cast<std::size_t>(e) * img.weight_bits + b;
                    row[pos / 8] |= static_cast<uint8_t>(1u << (pos % 8));
                }
        }
        out.insert(out.end(), row.begin(), row.end());
    }
    return out;
}

WeightImage unpack_weight_image(const std::vector<uint8_t>& bytes) {
    if (!has_magic(bytes, "E3NW")) throw ParseError("not a weight image");
    if (get_u32(bytes, 4) != kWeightImageVersion) throw ParseError("unsupported weight image version");
    WeightImage img;
    img.layer = static_cast<int>(get_u32(bytes, 8));
    img.weight_bits = static_cast<int>(get_u32(bytes, 12));
    img.width_bits = static_cast<int>(get_u32(bytes, 16));
    img.rows = static_cast<int>(get_u32(bytes, 20));
    img.entries = static_cast<int>(get_u32(bytes, 24));
    if (img.weight_bits < 1 || img.weight_bits > 16 || img.entries * img.weight_bits > img.width_bits)
        throw ParseError("weight image header is inconsistent");
    const std::size_t row_bytes = (static_cast<std::size_t>(img.width_bits) + 7) / 8;
    if (bytes.size() != 28 + row_bytes * img.rows) throw ParseError("weight image size does not match its header");
    img.values.resize(static_cast<std::size_t>(img.rows) * img.entries);
    for (int r = 0; r < img.rows; ++r) {
        const uint8_t* row = bytes.data() + 28 + row_bytes * r;
        for (int e = 0; e < img.entries; ++e) {
            uint32_t v = 0;
            for (int b = 0; b < img.weight_bits; ++b) {
                const std::size_t pos = static_cast<std::size_t>(e) * img.weight_bits + b;
                v |= uint32_t{static_cast<uint8_t>(row[pos / 8] >> (pos % 8) & 1u)} << b;
            }
            if (v >> (img.weight_bits - 1) & 1u) v |= ~((1u << img.weight_bits) - 1u);  // sign extend
            img.values[static_cast<std::size_t>(r) * img.entries + e] = static_cast<int32_t>(v);
        }
    }
    return img;
}

void write_spike_file(const fs::path& file, const SpikeTrain& s) {
    std::vector<uint8_t> out{'E', '3', 'N', 'S'};
    for (uint32_t v : {kSpikeFileVersion, static_cast<uint32_t>(s.time_steps), static_cast<uint32_t>(s.shape.channels),
                       static_cast<uint32_t>(s.shape.height), static_cast<uint32_t>(s.shape.width)})
        put_u32(out, v);
    for (uint32_t v : s.values) {
        if (v > 0xFFFF) throw FieldOverflow("spike value does not fit 16 bits");
        out.push_back(static_cast<uint8_t>(v));
        out.push_back(static_cast<uint8_t>(v >> 8));
    }
    write_bytes(file, out);
}

SpikeTrain read_spike_file(const fs::path& file) {
    const auto b = read_bytes(file);
    if (!has_magic(b, "E3NS")) throw ParseError(file.string() + ": not a spike file");
    if (get_u32(b, 4) != kSpikeFileVersion) throw ParseError(file.string() + ": unsupported spike file version");
    SpikeTrain s;
    s.time_steps = static_cast<int>(get_u32(b, 8));
    s.shape = {static_cast<int>(get_u32(b, 12)), static_cast<int>(get_u32(b, 16)), static_cast<int>(get_u32(b, 20))};
    const std::size_t n = static_cast<std::size_t>(s.shape.channels) * s.shape.height * s.shape.width;
    if (b.size() != 24 + 2 * n) throw ParseError(file.string() + ": size does not match its header");
    for (std::size_t i = 0; i < n; ++i) {
        const uint32_t v = b[24 + 2 * i] | uint32_t{b[25 + 2 * i]} << 8;
        if (s.time_steps < 16 && v >> s.time_steps) throw ParseError(file.string() + ": value wider than T bits");
        s.values.push_back(v);
    }
    return s;
}

SpikeTrain read_input(const fs::path& file, const QuantizedNetwork& q) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() == 4 && std::memcmp(magic, "E3NS", 4) == 0) {
        auto s = read_spike_file(file);
        if (s.shape != q.input || s.time_steps != q.time_steps)
            throw ShapeError(file.string() + ": spike train does not match the network input");
        return s;
    }
    auto values = read_f32_blob(file);
    const std::vector<int> shape{q.input.channels, q.input.height, q.input.width};
    if (values.size() != element_count(shape)) throw ShapeError(file.string() + ": input size does not match the network");
    return encode_sample(q, FloatTensor(shape, std::move(values)));
}

std::vector<FloatTensor> read_calibration_dir(const fs::path& dir, const Shape3& shape) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    const std::vector<int> dims{shape.channels, shape.height, shape.width};
    std::vector<FloatTensor> out;
    for (const auto& f : files) {
        auto v = read_f32_blob(f);
        if (v.size() != element_count(dims)) throw ShapeError(f.string() + ": sample size does not match the network");
        out.emplace_back(dims, std::move(v));
    }
    if (out.empty()) throw EmptyCalibrationSet(dir.string() + " holds no samples");
    return out;
}

// ---------------------------------------------------------------------------
// Quantized network

std::string quantized_to_json(const QuantizedNetwork& q) {
    json j;
    j["format"] = "e3ne-quantized";
    j["version"] = 1;
    j["network"] = q.name;
    j["weight_bits"] = q.weight_bits;
    j["time_steps"] = q.time_steps;
    json layers = json::array();
    for (const auto& ql : q.layers) {
        json lj{{"act_radix", ql.act_radix}, {"shift", ql.shift}, {"max_activation", ql.max_activation}};
        if (ql.spec.has_weights())
            lj["weights"] = {{"radix", ql.weights.radix},
                             {"clamped", ql.weights.clamped},
                             {"shape", ql.weights.shape},
                             {"data", ql.weights.data}};
        layers.push_back(lj);
    }
    j["layers"] = layers;
    j["warnings"] = q.warnings;
    return j.dump() + "\n";
}

QuantizedNetwork quantized_from_json(const std::string& text, const HardwarePlan& plan) {
    QuantizedNetwork q;
    try {
        const json j = json::parse(text);
        if (j.at("format") != "e3ne-quantized" || j.at("version") != 1)
            throw ParseError("not a version 1 quantized network");
        q.name = j.at("network");
        q.input = plan.input;
        q.weight_bits = j.at("weight_bits");
        q.time_steps = j.at("time_steps");
        const auto& layers = j.at("layers");
        if (layers.size() != plan.layers.size()) throw ParseError("quantized network and plan disagree on layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& lj = layers[i];
            QuantizedLayer ql;
            ql.spec = plan.layers[i];
            ql.act_radix = lj.at("act_radix");
            ql.shift = lj.at("shift");
            ql.max_activation = lj.at("max_activation");
            if (ql.spec.has_weights()) {
                const auto& w = lj.at("weights");
                ql.weights.radix = w.at("radix");
                ql.weights.clamped = w.at("clamped");
                ql.weights.shape = w.at("shape").get<std::vector<int>>();
                ql.weights.data = w.at("data").get<std::vector<int32_t>>();
                if (ql.weights.shape != ql.spec.weight_shape() ||
                    ql.weights.data.size() != element_count(ql.weights.shape))
                    throw ParseError("layer " + std::to_string(i) + ": weight shape mismatch");
            }
            q.layers.push_back(std::move(ql));
        }
        q.warnings = j.at("warnings").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("quantized network: ") + e.what());
    }
    return q;
}

// ---------------------------------------------------------------------------
// Bundles

namespace {

constexpr const char* kBundleFormat = "e3ne-bundle";

fs::path image_name(int layer) { return fs::path("weights") / ("layer" + std::to_string(layer) + ".e3nw"); }

bool is_bundle_or_empty(const fs::path& dir) {
    return fs::is_empty(dir) || fs::exists(dir / "bundle.json");
}

}  // namespace

void write_bundle(const Compiled& c, const fs::path& dir) {
    const fs::path target = fs::absolute(dir).lexically_normal();
    const fs::path parent = target.parent_path();
    if (fs::exists(target) && (!fs::is_directory(target) || !is_bundle_or_empty(target)))
        throw IoError(target.string() + " exists and is not a bundle");
    fs::create_directories(parent);
    const fs::path tmp = parent / ("." + target.filename().string() + ".tmp" + std::to_string(::getpid()));
    fs::remove_all(tmp);
    try {
        fs::create_directories(tmp / "weights");
        write_text(tmp / "plan.json", plan_to_json(c.plan));
        const auto words = isa::encode_program(c.program);
        isa::write_program(tmp / "program.bin", words);
        write_text(tmp / "program.s", annotated_listing(c.program, c.plan));
        json images = json::array();
        for (const auto& img : c.images) {
            write_bytes(tmp / image_name(img.layer), pack_weight_image(img));
            images.push_back(image_name(img.layer).generic_string());
        }
        write_text(tmp / "quantized.json", quantized_to_json(c.quantized));
        write_text(tmp / "quant_report.json", quantization_report(c.quantized));
        json manifest{{"format", kBundleFormat},
                      {"version", 1},
                      {"network", c.plan.network},
                      {"instructions", c.program.size()},
                      {"weight_images", images}};
        write_text(tmp / "bundle.json", manifest.dump(2) + "\n");

        if (fs::exists(target)) {
            const fs::path old = parent / ("." + target.filename().string() + ".old" + std::to_string(::getpid()));
            fs::rename(target, old);
            fs::rename(tmp, target);
            fs::remove_all(old);
        } else {
            fs::rename(tmp, target);
        }
    } catch (...) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw;
    }
}

Compiled read_bundle(const fs::path& dir) {
    const auto manifest_text = read_text(dir / "bundle.json");
    Compiled c;
    json manifest;
    try {
        manifest = json::parse(manifest_text);
        if (manifest.at("format") != kBundleFormat || manifest.at("version") != 1)
            throw ParseError(dir.string() + ": not a version 1 bundle");
    } catch (const json::exception& e) {
        throw ParseError(dir.string() + "/bundle.json: " + e.what());
    }
    c.plan = load_plan(dir / "plan.json");
    c.program = isa::decode_program(isa::read_program(dir / "program.bin"));
    c.quantized = quantized_from_json(read_text(dir / "quantized.json"), c.plan);
    for (const auto& name : manifest.at("weight_images")) c.images.push_back(unpack_weight_image(read_bytes(dir / name.get<std::string>())));
    return c;
}

}  // namespace e3ne
