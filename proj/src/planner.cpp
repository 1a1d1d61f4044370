#include "e3ne/planner.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "e3ne/error.hpp"

namespace e3ne {

using nlohmann::json;

const char* to_string(PMKind k) { return k == PMKind::Conv ? "conv" : "pool"; }
const char* to_string(Storage s) { return s == Storage::OnChipROM ? "onchip_rom" : "external_staged"; }

void DesignVars::check() const {
    quant.check();
    if (conv_replicas < 1) throw ParseError("conv_replicas must be >= 1");
    if (pool_replicas < 1) throw ParseError("pool_replicas must be >= 1");
    if (onchip_capacity_bits < 1) throw ParseError("onchip_capacity_bits must be positive");
    if (!(clock_mhz > 0)) throw ParseError("clock_mhz must be positive");
    if (psum_headroom < 0) throw ParseError("psum_headroom must be >= 0");
    if (external_penalty_cycles < 0) throw ParseError("external_penalty_cycles must be >= 0");
    if (linear_weight_width_bits < 1) throw ParseError("linear_weight_width_bits must be >= 1");
    for (const auto& o : pm_widths)
        if (o.kernel < 1 || o.width < 1) throw ParseError("pm_widths entries need positive kernel and width");
}

uint32_t PMConfig2D::module_mask() const {
    return ((1u << replicas) - 1u) << first_module;
}

const PMAssignment* HardwarePlan::assignment(int layer) const {
    for (const auto& pm : pms2d)
        for (const auto& a : pm.layers)
            if (a.layer == layer) return &a;
    return nullptr;
}

const WeightMemConfig* HardwarePlan::weight_mem(int layer) const {
    for (const auto& m : weight_mems)
        if (m.layer == layer) return &m;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Processing modules

namespace {

// Intra-module windows for one layer on a PM of the given width. A channel
// keeps its slot only if its column range and its share of the input
// spacing (up to the next channel's start) fit inside the module and its
// range starts after the previous channel's.
std::vector<ChannelWindow> channel_windows(const LayerSpec& l, int columns, bool intra) {
    const int fit = columns / l.out_dim;
    const int wanted = intra ? std::min(fit, l.out_channels) : 1;
    std::vector<ChannelWindow> windows;
    for (int p = 0; p < wanted; ++p) {
        const int start = p * (l.in_dim + l.padding) / l.stride;
        const int end = start + l.out_dim - 1;
        if (end > columns - 1) break;
        if (p > 0 && (p + 1) * (l.in_dim + l.padding) / l.stride > columns) break;
        if (p > 0 && start <= windows.back().end) break;
        windows.push_back({start, end});
    }
    return windows;
}

}  // namespace

PMPlan plan_pms(const Network& net, const DesignVars& design) {
    PMPlan out;
    // One PM per distinct (kind, kernel) in order of first appearance.
    std::map<std::pair<int, int>, std::size_t> index;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& l = net.layers[li];
        if (!l.is_2d()) continue;
        const PMKind kind = l.kind == LayerKind::Conv2D ? PMKind::Conv : PMKind::Pool;
        const auto key = std::make_pair(static_cast<int>(kind), l.kernel);
        auto it = index.find(key);
        if (it == index.end()) {
            PMConfig2D pm;
            pm.id = static_cast<int>(out.pms2d.size());
            pm.kind = kind;
            pm.rows = l.kernel;
            pm.columns = l.out_dim;
            for (const auto& o : design.pm_widths)
                if (o.kernel == l.kernel && (o.kind == LayerKind::Conv2D) == (kind == PMKind::Conv))
                    pm.columns = o.width;
            pm.replicas = kind == PMKind::Conv ? design.conv_replicas : 1;
            it = index.emplace(key, out.pms2d.size()).first;
            out.pms2d.push_back(pm);
        }
        auto& pm = out.pms2d[it->second];
        if (l.out_dim > pm.columns)
            throw PlanError("layer " + std::to_string(li) + " output dimension " + std::to_string(l.out_dim) +
                            " exceeds the width " + std::to_string(pm.columns) + " of its " +
                            to_string(pm.kind) + " module (K=" + std::to_string(pm.rows) + ")");
        PMAssignment a;
        a.layer = static_cast<int>(li);
        a.spec = l;
        a.windows = channel_windows(l, pm.columns, design.intra_parallelism);
        a.parallel = static_cast<int>(a.windows.size());
        pm.layers.push_back(a);
        if (std::find(pm.strides.begin(), pm.strides.end(), l.stride) == pm.strides.end())
            pm.strides.push_back(l.stride);
    }
    if (design.pool_replicas > 1)
        out.warnings.push_back("pool_replicas ignored: only convolution modules are replicated");

    int module = 0;
    for (auto& pm : out.pms2d) {
        pm.first_module = module;
        module += pm.replicas;
    }
    const bool has_linear = std::any_of(net.layers.begin(), net.layers.end(),
                                        [](const LayerSpec& l) { return l.kind == LayerKind::Linear; });
    if (has_linear) {
        const int width = design.linear_weight_width_bits;
        if (width < design.quant.weight_bits)
            throw PlanError("linear weight memory narrower than one weight");
        PMConfig1D pm;
        pm.module = module++;
        pm.parallel_features = width / design.quant.weight_bits;
        pm.weight_width_bits = width;
        for (std::size_t li = 0; li < net.layers.size(); ++li)
            if (net.layers[li].kind == LayerKind::Linear) pm.layers.push_back(static_cast<int>(li));
        out.pm1d = pm;
    }
    if (module > isa::kMaxModules)
        throw PlanError("design needs " + std::to_string(module) + " modules, the instruction set addresses " +
                        std::to_string(isa::kMaxModules));
    out.module_count = module;
    return out;
}

double utilization(const PMConfig2D& pm, const PMAssignment& a) {
    return 100.0 * a.parallel * a.spec.out_dim / pm.columns;
}

// ---------------------------------------------------------------------------
// Memories

WeightMemPlan plan_weight_memory(const Network& net, const QuantConfig& cfg, int64_t capacity_bits,
                                 int linear_parallel_features, int64_t reserved_bits) {
    WeightMemPlan out;
    int64_t total = 0;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& l = net.layers[li];
        if (!l.has_weights()) continue;
        WeightMemConfig m;
        m.layer = static_cast<int>(li);
        if (l.kind == LayerKind::Conv2D) {
            m.width_bits = l.kernel * l.kernel * cfg.weight_bits;
            m.rows = l.out_channels * l.in_channels;
        } else {
            const int groups = (l.out_features + linear_parallel_features - 1) / linear_parallel_features;
            m.width_bits = linear_parallel_features * cfg.weight_bits;
            m.rows = groups * l.in_features;
        }
        total += m.bits();
        out.mems.push_back(m);
    }
    if (total + reserved_bits <= capacity_bits) return out;

    out.storage = Storage::ExternalStaged;
    WeightMemConfig staging;
    for (auto& m : out.mems) {
        m.storage = Storage::ExternalStaged;
        staging.width_bits = std::max(staging.width_bits, m.width_bits);
        staging.rows = std::max(staging.rows, m.rows);
    }
    staging.storage = Storage::ExternalStaged;
    if (staging.bits() + reserved_bits > capacity_bits)
        throw CapacityError("staging RAM of " + std::to_string(staging.bits()) + " bits plus " +
                            std::to_string(reserved_bits) + " buffer bits exceeds capacity " +
                            std::to_string(capacity_bits));
    out.staging = staging;
    return out;
}

BufferConfig plan_buffers(const Network& net, int time_steps) {
    BufferConfig b;
    bool ping = true;
    for (const auto& l : net.layers) {
        if (!l.is_2d()) continue;
        BufferDims& dst = ping ? b.ping2d : b.pong2d;
        dst.width = std::max(dst.width, l.in_dim);
        dst.height = std::max(dst.height, l.in_dim * l.in_channels * time_steps);
        ping = !ping;
    }
    ping = true;
    for (const auto& l : net.layers) {
        if (l.kind != LayerKind::Linear) continue;
        BufferDims& dst = ping ? b.ping1d : b.pong1d;
        dst.width = std::max(dst.width, l.in_features);
        dst.height = std::max(dst.height, time_steps);
        ping = !ping;
    }
    return b;
}

std::vector<LayerRoute> plan_routes(const Network& net, const PMPlan& pms) {
    std::vector<LayerRoute> routes;
    int k2 = 0, k1 = 0;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& l = net.layers[li];
        LayerRoute r;
        r.layer = static_cast<int>(li);
        const bool last = li + 1 == net.layers.size();
        if (l.is_2d()) {
            r.source = k2 % 2 == 0 ? isa::Mem::Ping2D : isa::Mem::Pong2D;
            if (last) r.dest = isa::Mem::Result;
            else if (net.layers[li + 1].is_2d()) r.dest = k2 % 2 == 0 ? isa::Mem::Pong2D : isa::Mem::Ping2D;
            else r.dest = isa::Mem::Ping1D;
            ++k2;
            for (std::size_t p = 0; p < pms.pms2d.size(); ++p)
                for (const auto& a : pms.pms2d[p].layers)
                    if (a.layer == r.layer) {
                        r.pm = static_cast<int>(p);
                        r.module_mask = pms.pms2d[p].module_mask();
                    }
        } else {
            r.source = k1 % 2 == 0 ? isa::Mem::Ping1D : isa::Mem::Pong1D;
            r.dest = last ? isa::Mem::Result : (k1 % 2 == 0 ? isa::Mem::Pong1D : isa::Mem::Ping1D);
            ++k1;
            r.pm = -1;
            r.module_mask = 1u << pms.pm1d->module;
        }
        routes.push_back(r);
    }
    return routes;
}

HardwarePlan make_plan(const Network& net, const DesignVars& design) {
    design.check();
    validate(net);
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& l = net.layers[li];
        if (l.kind == LayerKind::Pool2D && l.pool_mode == PoolMode::Avg && (l.kernel & (l.kernel - 1)) != 0)
            throw UnsupportedError("layer " + std::to_string(li) +
                                   ": average pooling needs a power-of-two window to divide by shifting");
    }
    HardwarePlan plan;
    plan.network = net.name;
    plan.design = design;
    plan.input = net.input;
    plan.layers = net.layers;

    PMPlan pms = plan_pms(net, design);
    plan.buffers = plan_buffers(net, design.quant.time_steps);
    const int fpar = pms.pm1d ? pms.pm1d->parallel_features : 1;
    WeightMemPlan mems = plan_weight_memory(net, design.quant, design.onchip_capacity_bits, fpar,
                                            plan.buffers.bits());
    plan.routes = plan_routes(net, pms);
    plan.pms2d = std::move(pms.pms2d);
    plan.pm1d = pms.pm1d;
    plan.module_count = pms.module_count;
    plan.warnings = std::move(pms.warnings);
    plan.storage = mems.storage;
    plan.weight_mems = std::move(mems.mems);
    plan.staging = mems.staging;

    plan.onchip_bits = plan.buffers.bits();
    if (plan.storage == Storage::OnChipROM)
        for (const auto& m : plan.weight_mems) plan.onchip_bits += m.bits();
    else
        plan.onchip_bits += plan.staging->bits();
    return plan;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json layer_json(const LayerSpec& l) {
    return {{"kind", to_string(l.kind)}, {"kernel", l.kernel},           {"stride", l.stride},
            {"padding", l.padding},      {"in_channels", l.in_channels}, {"out_channels", l.out_channels},
            {"in_dim", l.in_dim},        {"out_dim", l.out_dim},         {"pool_mode", to_string(l.pool_mode)},
            {"in_features", l.in_features}, {"out_features", l.out_features}};
}

LayerKind parse_kind(const std::string& s) {
    if (s == "conv2d") return LayerKind::Conv2D;
    if (s == "pool2d") return LayerKind::Pool2D;
    if (s == "linear") return LayerKind::Linear;
    throw ParseError("unknown layer kind '" + s + "'");
}

LayerSpec layer_from(const json& j) {
    LayerSpec l;
    l.kind = parse_kind(j.at("kind").get<std::string>());
    l.kernel = j.at("kernel");
    l.stride = j.at("stride");
    l.padding = j.at("padding");
    l.in_channels = j.at("in_channels");
    l.out_channels = j.at("out_channels");
    l.in_dim = j.at("in_dim");
    l.out_dim = j.at("out_dim");
    l.pool_mode = parse_pool_mode(j.at("pool_mode").get<std::string>());
    l.in_features = j.at("in_features");
    l.out_features = j.at("out_features");
    return l;
}

json design_json(const DesignVars& d) {
    json widths = json::array();
    for (const auto& o : d.pm_widths)
        widths.push_back({{"kind", o.kind == LayerKind::Conv2D ? "conv" : "pool"},
                          {"kernel", o.kernel},
                          {"width", o.width}});
    return {{"weight_bits", d.quant.weight_bits},
            {"time_steps", d.quant.time_steps},
            {"clamp_range", d.quant.clamp_range},
            {"conv_replicas", d.conv_replicas},
            {"pool_replicas", d.pool_replicas},
            {"onchip_capacity_bits", d.onchip_capacity_bits},
            {"clock_mhz", d.clock_mhz},
            {"pool_mode", to_string(d.pool_mode)},
            {"psum_headroom", d.psum_headroom},
            {"external_penalty_cycles", d.external_penalty_cycles},
            {"linear_weight_width_bits", d.linear_weight_width_bits},
            {"intra_parallelism", d.intra_parallelism},
            {"reorder", d.reorder},
            {"pm_widths", widths}};
}

DesignVars design_from(const json& j) {
    DesignVars d;
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    try {
        static const char* known[] = {"weight_bits", "time_steps", "clamp_range", "conv_replicas",
                                      "pool_replicas", "onchip_capacity_bits", "clock_mhz", "pool_mode",
                                      "psum_headroom", "external_penalty_cycles", "linear_weight_width_bits",
                                      "intra_parallelism", "reorder", "pm_widths"};
        for (const auto& [key, _] : j.items())
            if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
                std::end(known))
                throw ParseError("unknown design variable '" + key + "'");
        take("weight_bits", d.quant.weight_bits);
        take("time_steps", d.quant.time_steps);
        take("clamp_range", d.quant.clamp_range);
        take("conv_replicas", d.conv_replicas);
        take("pool_replicas", d.pool_replicas);
        take("onchip_capacity_bits", d.onchip_capacity_bits);
        take("clock_mhz", d.clock_mhz);
        if (j.contains("pool_mode")) d.pool_mode = parse_pool_mode(j.at("pool_mode").get<std::string>());
        take("psum_headroom", d.psum_headroom);
        take("external_penalty_cycles", d.external_penalty_cycles);
        take("linear_weight_width_bits", d.linear_weight_width_bits);
        take("intra_parallelism", d.intra_parallelism);
        take("reorder", d.reorder);
        if (j.contains("pm_widths"))
            for (const auto& o : j.at("pm_widths")) {
                PMWidthOverride w;
                const auto kind = o.at("kind").get<std::string>();
                if (kind != "conv" && kind != "pool") throw ParseError("pm_widths kind must be conv or pool");
                w.kind = kind == "conv" ? LayerKind::Conv2D : LayerKind::Pool2D;
                w.kernel = o.at("kernel");
                w.width = o.at("width");
                d.pm_widths.push_back(w);
            }
    } catch (const json::exception& e) {
        throw ParseError(std::string("design variables: ") + e.what());
    }
    d.check();
    return d;
}

json mem_json(const WeightMemConfig& m) {
    return {{"layer", m.layer}, {"width_bits", m.width_bits}, {"rows", m.rows}, {"storage", to_string(m.storage)}};
}

WeightMemConfig mem_from(const json& j) {
    WeightMemConfig m;
    m.layer = j.at("layer");
    m.width_bits = j.at("width_bits");
    m.rows = j.at("rows");
    m.storage = j.at("storage").get<std::string>() == "onchip_rom" ? Storage::OnChipROM : Storage::ExternalStaged;
    return m;
}

json dims_json(const BufferDims& b) { return {{"width", b.width}, {"height", b.height}}; }
BufferDims dims_from(const json& j) { return {j.at("width").get<int>(), j.at("height").get<int>()}; }

}  // namespace

std::string design_vars_to_json(const DesignVars& d) { return design_json(d).dump(2) + "\n"; }

DesignVars design_vars_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("design variables: ") + e.what());
    }
    return design_from(j);
}

DesignVars load_design_vars(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return design_vars_from_json(ss.str());
}

std::string plan_to_json(const HardwarePlan& plan) {
    json j;
    j["format"] = "e3ne-plan";
    j["version"] = kPlanVersion;
    j["isa_param_registry"] = isa::kParamRegistryVersion;
    j["network"] = plan.network;
    j["design"] = design_json(plan.design);
    j["input"] = {{"channels", plan.input.channels}, {"height", plan.input.height}, {"width", plan.input.width}};
    json layers = json::array();
    for (const auto& l : plan.layers) layers.push_back(layer_json(l));
    j["layers"] = layers;
    json pms = json::array();
    for (const auto& pm : plan.pms2d) {
        json layers = json::array();
        for (const auto& a : pm.layers) {
            json windows = json::array();
            for (const auto& w : a.windows) windows.push_back({w.start, w.end});
            layers.push_back({{"layer", a.layer}, {"spec", layer_json(a.spec)}, {"parallel", a.parallel},
                              {"windows", windows}});
        }
        pms.push_back({{"id", pm.id}, {"kind", to_string(pm.kind)}, {"rows", pm.rows}, {"columns", pm.columns},
                       {"replicas", pm.replicas}, {"first_module", pm.first_module}, {"strides", pm.strides},
                       {"layers", layers}});
    }
    j["pms2d"] = pms;
    if (plan.pm1d)
        j["pm1d"] = {{"module", plan.pm1d->module}, {"parallel_features", plan.pm1d->parallel_features},
                     {"weight_width_bits", plan.pm1d->weight_width_bits}, {"layers", plan.pm1d->layers}};
    j["storage"] = to_string(plan.storage);
    json mems = json::array();
    for (const auto& m : plan.weight_mems) mems.push_back(mem_json(m));
    j["weight_mems"] = mems;
    if (plan.staging) j["staging"] = mem_json(*plan.staging);
    j["buffers"] = {{"ping2d", dims_json(plan.buffers.ping2d)}, {"pong2d", dims_json(plan.buffers.pong2d)},
                    {"ping1d", dims_json(plan.buffers.ping1d)}, {"pong1d", dims_json(plan.buffers.pong1d)}};
    json routes = json::array();
    for (const auto& r : plan.routes)
        routes.push_back({{"layer", r.layer}, {"source", static_cast<int>(r.source)},
                          {"dest", static_cast<int>(r.dest)}, {"module_mask", r.module_mask}, {"pm", r.pm}});
    j["routes"] = routes;
    j["module_count"] = plan.module_count;
    j["onchip_bits"] = plan.onchip_bits;
    j["warnings"] = plan.warnings;
    return j.dump(2) + "\n";
}

HardwarePlan plan_from_json(const std::string& text) {
    HardwarePlan plan;
    try {
        const json j = json::parse(text);
        if (j.at("format") != "e3ne-plan") throw ParseError("not a plan file");
        if (j.at("version") != kPlanVersion) throw ParseError("unsupported plan version");
        if (j.at("isa_param_registry") != isa::kParamRegistryVersion)
            throw ParseError("plan targets a different parameter registry");
        plan.network = j.at("network");
        plan.design = design_from(j.at("design"));
        plan.input.channels = j.at("input").at("channels");
        plan.input.height = j.at("input").at("height");
        plan.input.width = j.at("input").at("width");
        for (const auto& lj : j.at("layers")) plan.layers.push_back(layer_from(lj));
        for (const auto& pj : j.at("pms2d")) {
            PMConfig2D pm;
            pm.id = pj.at("id");
            pm.kind = pj.at("kind").get<std::string>() == "conv" ? PMKind::Conv : PMKind::Pool;
            pm.rows = pj.at("rows");
            pm.columns = pj.at("columns");
            pm.replicas = pj.at("replicas");
            pm.first_module = pj.at("first_module");
            pm.strides = pj.at("strides").get<std::vector<int>>();
            for (const auto& aj : pj.at("layers")) {
                PMAssignment a;
                a.layer = aj.at("layer");
                a.spec = layer_from(aj.at("spec"));
                a.parallel = aj.at("parallel");
                for (const auto& w : aj.at("windows")) a.windows.push_back({w.at(0).get<int>(), w.at(1).get<int>()});
                pm.layers.push_back(a);
            }
            plan.pms2d.push_back(pm);
        }
        if (j.contains("pm1d")) {
            PMConfig1D pm;
            pm.module = j["pm1d"].at("module");
            pm.parallel_features = j["pm1d"].at("parallel_features");
            pm.weight_width_bits = j["pm1d"].at("weight_width_bits");
            pm.layers = j["pm1d"].at("layers").get<std::vector<int>>();
            plan.pm1d = pm;
        }
        plan.storage = j.at("storage").get<std::string>() == "onchip_rom" ? Storage::OnChipROM
                                                                          : Storage::ExternalStaged;
        for (const auto& mj : j.at("weight_mems")) plan.weight_mems.push_back(mem_from(mj));
        if (j.contains("staging")) plan.staging = mem_from(j.at("staging"));
        const auto& b = j.at("buffers");
        plan.buffers = {dims_from(b.at("ping2d")), dims_from(b.at("pong2d")), dims_from(b.at("ping1d")),
                        dims_from(b.at("pong1d"))};
        for (const auto& rj : j.at("routes")) {
            LayerRoute r;
            r.layer = rj.at("layer");
            r.source = static_cast<isa::Mem>(rj.at("source").get<int>());
            r.dest = static_cast<isa::Mem>(rj.at("dest").get<int>());
            r.module_mask = rj.at("module_mask");
            r.pm = rj.at("pm");
            plan.routes.push_back(r);
        }
        plan.module_count = j.at("module_count");
        plan.onchip_bits = j.at("onchip_bits");
        plan.warnings = j.at("warnings").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("plan file: ") + e.what());
    }
    return plan;
}

void save_plan(const HardwarePlan& plan, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << plan_to_json(plan);
}

HardwarePlan load_plan(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return plan_from_json(ss.str());
}

}  // namespace e3ne
