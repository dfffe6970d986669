#pragma once
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stegoshield/tensor.hpp"

namespace stegoshield {

enum class LayerKind : uint8_t {
    linear,
    conv2d,
    relu,
    global_avg_pool,
    flatten,
    residual_begin,
    residual_add,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

struct LayerSpec {
    LayerKind kind;
    std::string weight_name; // empty for parameter-free kinds
    std::string bias_name;
    uint32_t stride = 1;  // conv2d only
    uint32_t padding = 0; // conv2d only

    bool has_params() const { return !weight_name.empty(); }
};

struct ModelSpec {
    std::vector<LayerSpec> layers;
    std::vector<uint32_t> input_shape;
};

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Inverse permutation per hooked layer, applied to that layer's output
// (channel axis for conv2d, feature axis for linear) after the bias add.
struct HookSet {
    std::map<size_t, std::vector<uint32_t>> inverse;

    bool empty() const { return inverse.empty(); }
};

// Static shape check. Returns the output shape of every layer; throws
// ModelError (message carries the layer index) if propagation fails.
std::vector<std::vector<uint32_t>> propagate_shapes(const ModelSpec& spec, const StateDict& state);

// Layer indices eligible for permutation: linear and conv2d with params.
std::vector<size_t> eligible_layers(const ModelSpec& spec);

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);
void save_model_spec(const ModelSpec& spec, const std::string& path);
ModelSpec load_model_spec(const std::string& path);

// Desk-scale architectures. Both take 1x8x8 inputs and emit 8 logits.
ModelSpec make_mlp_spec(uint32_t class_count = 8);
ModelSpec make_micro_resnet_spec(uint32_t class_count = 8, uint32_t channels = 80);

// Seeded He-normal initialization for every parametric layer.
StateDict init_state(const ModelSpec& spec, uint64_t seed);

} // namespace stegoshield
