#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace e3ne {

enum class LayerKind { Conv2D, Pool2D, Linear };
enum class PoolMode { Avg, Max };

const char* to_string(LayerKind kind);
const char* to_string(PoolMode mode);
PoolMode parse_pool_mode(const std::string& text);

/// Dense row-major float tensor.
struct FloatTensor {
    std::vector<int> shape;
    std::vector<float> data;

    FloatTensor() = default;
    FloatTensor(std::vector<int> s, std::vector<float> d);
    static FloatTensor zeros(std::vector<int> s);

    std::size_t size() const { return data.size(); }
    bool operator==(const FloatTensor&) const = default;
};

std::size_t element_count(const std::vector<int>& shape);

struct Shape3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    bool operator==(const Shape3&) const = default;
};

/// One layer of the network. Feature maps are square, so a single
/// dimension (in_dim/out_dim) describes them. Linear layers use the
/// feature counts instead.
struct LayerSpec {
    LayerKind kind = LayerKind::Conv2D;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int in_channels = 0;
    int out_channels = 0;
    int in_dim = 0;
    int out_dim = 0;
    PoolMode pool_mode = PoolMode::Avg;
    int in_features = 0;
    int out_features = 0;

    bool is_2d() const { return kind != LayerKind::Linear; }
    bool has_weights() const { return kind != LayerKind::Pool2D; }
    // Number of values this layer produces (C*D*D or F_out).
    int output_size() const;
    int input_size() const;
    std::vector<int> weight_shape() const;

    bool operator==(const LayerSpec&) const = default;
};

struct Network {
    std::string name;
    Shape3 input;
    std::vector<LayerSpec> layers;
    std::map<int, FloatTensor> weights;  // keyed by layer index
    std::map<int, FloatTensor> biases;   // optional extension, usually empty

    std::size_t parameter_count() const;
    bool operator==(const Network&) const = default;
};

/// Fills in_dim/out_dim, channel and feature counts along the chain.
/// Idempotent; throws ShapeError on an impossible chain.
Network infer_shapes(Network net);

/// Checks every structural invariant and that parameters are present
/// with matching shapes and finite values.
void validate(const Network& net);

// Model directory: manifest.json plus one little-endian float32 blob per
// parameter tensor.
inline constexpr const char* kModelFormat = "e3ne-model";
inline constexpr int kModelVersion = 1;

/// `default_pool_mode` applies to pooling layers that do not name a mode.
Network load_model(const std::filesystem::path& dir, PoolMode default_pool_mode = PoolMode::Avg);
void save_model(const Network& net, const std::filesystem::path& dir);

// Raw little-endian float32 blobs (also used for calibration samples).
std::vector<float> read_f32_blob(const std::filesystem::path& file);
void write_f32_blob(const std::filesystem::path& file, const std::vector<float>& values);

}  // namespace e3ne
