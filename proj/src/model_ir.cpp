#include "e3ne/model_ir.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "e3ne/error.hpp"

namespace e3ne {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Parse: return "ParseError";
        case ErrorKind::Shape: return "ShapeError";
        case ErrorKind::MissingParams: return "MissingParams";
        case ErrorKind::DegenerateWeights: return "DegenerateWeights";
        case ErrorKind::NegativeInput: return "NegativeInput";
        case ErrorKind::EmptyCalibrationSet: return "EmptyCalibrationSet";
        case ErrorKind::Requant: return "RequantError";
        case ErrorKind::Unsupported: return "Unsupported";
        case ErrorKind::Plan: return "PlanError";
        case ErrorKind::Capacity: return "CapacityError";
        case ErrorKind::FieldOverflow: return "FieldOverflow";
        case ErrorKind::IllegalOpcode: return "IllegalOpcode";
        case ErrorKind::Codegen: return "CodegenError";
        case ErrorKind::SimFault: return "SimFault";
        case ErrorKind::PsumOverflow: return "PsumOverflow";
        case ErrorKind::Io: return "IoError";
    }
    return "Error";
}

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::Pool2D: return "pool2d";
        case LayerKind::Linear: return "linear";
    }
    return "?";
}

const char* to_string(PoolMode mode) { return mode == PoolMode::Max ? "max" : "avg"; }

PoolMode parse_pool_mode(const std::string& text) {
    if (text == "avg") return PoolMode::Avg;
    if (text == "max") return PoolMode::Max;
    throw ParseError("unknown pool mode '" + text + "'");
}

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d < 0 ? 0 : d);
    return n;
}

FloatTensor::FloatTensor(std::vector<int> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count(shape))
        throw ShapeError("tensor data length does not match its shape");
}

FloatTensor FloatTensor::zeros(std::vector<int> s) {
    auto n = element_count(s);
    return FloatTensor(std::move(s), std::vector<float>(n, 0.0f));
}

int LayerSpec::output_size() const {
    if (kind == LayerKind::Linear) return out_features;
    return out_channels * out_dim * out_dim;
}

int LayerSpec::input_size() const {
    if (kind == LayerKind::Linear) return in_features;
    return in_channels * in_dim * in_dim;
}

std::vector<int> LayerSpec::weight_shape() const {
    switch (kind) {
        case LayerKind::Conv2D: return {out_channels, in_channels, kernel, kernel};
        case LayerKind::Linear: return {out_features, in_features};
        case LayerKind::Pool2D: return {};
    }
    return {};
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : weights) n += t.size();
    for (const auto& [_, t] : biases) n += t.size();
    return n;
}

Network infer_shapes(Network net) {
    if (net.layers.empty()) throw ShapeError("network has no layers");
    if (net.input.height != net.input.width)
        throw ShapeError("only square input feature maps are supported");
    if (net.input.channels < 1 || net.input.height < 1)
        throw ShapeError("input shape must be positive");

    int channels = net.input.channels;
    int dim = net.input.height;
    int features = -1;  // >= 0 once the chain is one-dimensional

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& l = net.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        if (l.kernel < 1 || l.stride < 1 || l.padding < 0)
            throw ShapeError(where + ": kernel and stride must be >= 1, padding >= 0");

        if (l.kind == LayerKind::Linear) {
            const int in = features >= 0 ? features : channels * dim * dim;
            if (l.in_features != 0 && l.in_features != in)
                throw ShapeError(where + ": expects " + std::to_string(l.in_features) +
                                 " input features, chain provides " + std::to_string(in));
            if (l.out_features < 1) throw ShapeError(where + ": out_features must be >= 1");
            l.in_features = in;
            l.kernel = 1;
            l.stride = 1;
            l.padding = 0;
            l.in_channels = l.out_channels = 0;
            l.in_dim = l.out_dim = 0;
            features = l.out_features;
            continue;
        }

        if (features >= 0)
            throw ShapeError(where + ": 2D layers must precede all linear layers");
        if (l.in_channels != 0 && l.in_channels != channels)
            throw ShapeError(where + ": expects " + std::to_string(l.in_channels) +
                             " input channels, chain provides " + std::to_string(channels));
        l.in_channels = channels;
        l.in_dim = dim;

        if (l.kind == LayerKind::Conv2D) {
            if (l.out_channels < 1) throw ShapeError(where + ": out_channels must be >= 1");
            const int span = dim + 2 * l.padding - l.kernel;
            if (span < 0) throw ShapeError(where + ": kernel larger than padded input");
            l.out_dim = span / l.stride + 1;
        } else {
            if (l.kernel != l.stride)
                throw ShapeError(where + ": pooling requires kernel == stride");
            if (l.padding != 0) throw ShapeError(where + ": pooling does not support padding");
            l.out_channels = channels;
            l.out_dim = dim / l.stride;
        }
        if (l.out_dim < 1) throw ShapeError(where + ": output dimension below 1");
        channels = l.out_channels;
        dim = l.out_dim;
    }
    return net;
}

void validate(const Network& net) {
    const Network inferred = infer_shapes(net);
    if (inferred.layers != net.layers)
        throw ShapeError("layer shapes do not chain (run infer_shapes first)");

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        const int idx = static_cast<int>(i);
        if (!l.has_weights()) {
            if (net.weights.count(idx))
                throw ShapeError("pooling layer " + std::to_string(i) + " carries weights");
            continue;
        }
        auto it = net.weights.find(idx);
        if (it == net.weights.end())
            throw MissingParams("layer " + std::to_string(i) + " has no weight tensor");
        if (it->second.shape != l.weight_shape())
            throw ShapeError("layer " + std::to_string(i) + " weight tensor has wrong shape");
        for (float v : it->second.data)
            if (!std::isfinite(v))
                throw ParseError("layer " + std::to_string(i) + " has non-finite weights");
        if (auto b = net.biases.find(idx); b != net.biases.end()) {
            const int outs = l.kind == LayerKind::Linear ? l.out_features : l.out_channels;
            if (b->second.shape != std::vector<int>{outs})
                throw ShapeError("layer " + std::to_string(i) + " bias has wrong shape");
        }
    }
    for (const auto& [idx, _] : net.weights)
        if (idx < 0 || idx >= static_cast<int>(net.layers.size()))
            throw ShapeError("weights for nonexistent layer " + std::to_string(idx));
}

// ---------------------------------------------------------------------------
// Blob I/O

static_assert(sizeof(float) == 4);

std::vector<float> read_f32_blob(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0)
        throw ParseError(file.string() + ": blob length is not a multiple of 4 bytes");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        uint32_t u = 0;
        for (int b = 0; b < 4; ++b)
            u |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

void write_f32_blob(const fs::path& file, const std::vector<float>& values) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    for (float v : values) {
        const uint32_t u = std::bit_cast<uint32_t>(v);
        const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                           static_cast<char>((u >> 16) & 0xff), static_cast<char>(u >> 24)};
        out.write(b, 4);
    }
    if (!out) throw IoError("write failed for " + file.string());
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(where + ": bad field '" + key + "': " + e.what());
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    return j.contains(key) ? get_field<T>(j, key, where) : fallback;
}

FloatTensor load_tensor(const json& ref, const fs::path& dir, const std::string& where) {
    const auto file = get_field<std::string>(ref, "file", where);
    const auto shape = get_field<std::vector<int>>(ref, "shape", where);
    auto data = read_f32_blob(dir / file);
    if (data.size() != element_count(shape))
        throw ParseError(where + ": blob " + file + " holds " + std::to_string(data.size()) +
                         " values, shape needs " + std::to_string(element_count(shape)));
    return FloatTensor(shape, std::move(data));
}

}  // namespace

Network load_model(const fs::path& dir, PoolMode default_pool_mode) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open " + manifest_path.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }
    const std::string top = "manifest";
    if (get_field<std::string>(m, "format", top) != kModelFormat)
        throw ParseError("manifest format is not '" + std::string(kModelFormat) + "'");
    if (get_field<int>(m, "version", top) != kModelVersion)
        throw ParseError("unsupported manifest version");

    Network net;
    net.name = get_or<std::string>(m, "name", "model", top);
    const json& input = m.contains("input") ? m["input"] : throw ParseError("manifest: missing field 'input'");
    net.input.channels = get_field<int>(input, "channels", "input");
    net.input.height = get_field<int>(input, "height", "input");
    net.input.width = get_field<int>(input, "width", "input");

    const auto& layers = m.contains("layers") ? m["layers"] : throw ParseError("manifest: missing field 'layers'");
    if (!layers.is_array()) throw ParseError("manifest: 'layers' must be a list");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const json& lj = layers[i];
        const std::string where = "layer " + std::to_string(i);
        const auto kind = get_field<std::string>(lj, "kind", where);
        LayerSpec l;
        if (kind == "conv2d") {
            l.kind = LayerKind::Conv2D;
            l.out_channels = get_field<int>(lj, "out_channels", where);
            l.in_channels = get_or<int>(lj, "in_channels", 0, where);
            l.kernel = get_field<int>(lj, "kernel", where);
            l.stride = get_or<int>(lj, "stride", 1, where);
            l.padding = get_or<int>(lj, "padding", 0, where);
        } else if (kind == "pool2d") {
            l.kind = LayerKind::Pool2D;
            l.kernel = get_field<int>(lj, "kernel", where);
            l.stride = get_or<int>(lj, "stride", l.kernel, where);
            l.pool_mode = lj.contains("mode") ? parse_pool_mode(get_field<std::string>(lj, "mode", where))
                                           : default_pool_mode;
        } else if (kind == "linear") {
            l.kind = LayerKind::Linear;
            l.out_features = get_field<int>(lj, "out_features", where);
            l.in_features = get_or<int>(lj, "in_features", 0, where);
        } else {
            throw ParseError(where + ": unsupported layer kind '" + kind + "'");
        }
        if (l.has_weights()) {
            const auto act = get_or<std::string>(lj, "activation", "relu", where);
            if (act != "relu" && act != "none")
                throw ParseError(where + ": unsupported activation '" + act + "'");
            if (lj.contains("weight"))
                net.weights[static_cast<int>(i)] = load_tensor(lj["weight"], dir, where + " weight");
            if (lj.contains("bias"))
                net.biases[static_cast<int>(i)] = load_tensor(lj["bias"], dir, where + " bias");
        }
        net.layers.push_back(l);
    }

    net = infer_shapes(std::move(net));
    validate(net);
    return net;
}

void save_model(const Network& net, const fs::path& dir) {
    validate(net);
    fs::create_directories(dir);
    json m;
    m["format"] = kModelFormat;
    m["version"] = kModelVersion;
    m["name"] = net.name;
    m["input"] = {{"channels", net.input.channels},
                  {"height", net.input.height},
                  {"width", net.input.width}};
    json layers = json::array();
    bool flattened = false;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        const int idx = static_cast<int>(i);
        json lj;
        lj["kind"] = to_string(l.kind);
        switch (l.kind) {
            case LayerKind::Conv2D:
                lj["in_channels"] = l.in_channels;
                lj["out_channels"] = l.out_channels;
                lj["kernel"] = l.kernel;
                lj["stride"] = l.stride;
                lj["padding"] = l.padding;
                break;
            case LayerKind::Pool2D:
                lj["kernel"] = l.kernel;
                lj["stride"] = l.stride;
                lj["mode"] = to_string(l.pool_mode);
                break;
            case LayerKind::Linear:
                lj["in_features"] = l.in_features;
                lj["out_features"] = l.out_features;
                if (!flattened) lj["flatten"] = true;
                flattened = true;
                break;
        }
        if (l.has_weights()) {
            lj["activation"] = i + 1 == net.layers.size() ? "none" : "relu";
            const auto& w = net.weights.at(idx);
            const std::string wfile = "layer" + std::to_string(i) + ".weight.f32";
            write_f32_blob(dir / wfile, w.data);
            lj["weight"] = {{"file", wfile}, {"shape", w.shape}};
            if (auto b = net.biases.find(idx); b != net.biases.end()) {
                const std::string bfile = "layer" + std::to_string(i) + ".bias.f32";
                write_f32_blob(dir / bfile, b->second.data);
                lj["bias"] = {{"file", bfile}, {"shape", b->second.shape}};
            }
        }
        layers.push_back(std::move(lj));
    }
    m["layers"] = std::move(layers);
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << m.dump(2) << "\n";
}

}  // namespace e3ne
