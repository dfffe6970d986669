#include "stegoshield/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stegoshield/rng.hpp"

namespace stegoshield {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::global_avg_pool: return "global-avg-pool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::residual_begin: return "residual-begin";
        case LayerKind::residual_add: return "residual-add";
    }
    throw ModelError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "linear") return LayerKind::linear;
    if (s == "conv2d") return LayerKind::conv2d;
    if (s == "relu") return LayerKind::relu;
    if (s == "global-avg-pool") return LayerKind::global_avg_pool;
    if (s == "flatten") return LayerKind::flatten;
    if (s == "residual-begin") return LayerKind::residual_begin;
    if (s == "residual-add") return LayerKind::residual_add;
    throw ModelError("unknown layer kind '" + s + "'");
}

namespace {

[[noreturn]] void fail(size_t layer, const std::string& msg) {
    throw ModelError("layer " + std::to_string(layer) + ": " + msg);
}

uint64_t product(const std::vector<uint32_t>& shape) {
    uint64_t n = 1;
    for (uint32_t e : shape) n *= e;
    return n;
}

} // namespace

std::vector<std::vector<uint32_t>> propagate_shapes(const ModelSpec& spec, const StateDict& state) {
    std::vector<std::vector<uint32_t>> out;
    std::vector<uint32_t> cur = spec.input_shape;
    std::vector<std::pair<size_t, std::vector<uint32_t>>> residual_stack;

    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.has_params() && !state.contains(l.weight_name)) fail(i, "missing parameter entry '" + l.weight_name + "'");
        if (!l.bias_name.empty() && !state.contains(l.bias_name)) fail(i, "missing parameter entry '" + l.bias_name + "'");
        switch (l.kind) {
            case LayerKind::linear: {
                const Tensor& w = state.at(l.weight_name);
                const Tensor& b = state.at(l.bias_name);
                if (w.shape.size() != 2) fail(i, "linear weight must be 2-D");
                if (b.shape.size() != 1 || b.shape[0] != w.shape[0]) fail(i, "linear bias shape mismatch");
                if (cur.size() != 1 || cur[0] != w.shape[1]) fail(i, "linear input shape mismatch");
                cur = {w.shape[0]};
                break;
            }
            case LayerKind::conv2d: {
                const Tensor& w = state.at(l.weight_name);
                const Tensor& b = state.at(l.bias_name);
                if (w.shape.size() != 4) fail(i, "conv2d weight must be 4-D");
                if (b.shape.size() != 1 || b.shape[0] != w.shape[0]) fail(i, "conv2d bias shape mismatch");
                if (cur.size() != 3) fail(i, "conv2d input must be CxHxW");
                if (cur[0] != w.shape[1]) fail(i, "conv2d input channel mismatch");
                uint32_t kh = w.shape[2], kw = w.shape[3];
                int64_t h = int64_t(cur[1]) + 2 * l.padding - kh;
                int64_t wd = int64_t(cur[2]) + 2 * l.padding - kw;
                if (h < 0 || wd < 0) fail(i, "conv2d kernel larger than padded input");
                if (l.stride == 0) fail(i, "conv2d stride must be >= 1");
                cur = {w.shape[0], uint32_t(h / l.stride + 1), uint32_t(wd / l.stride + 1)};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::global_avg_pool:
                if (cur.size() != 3) fail(i, "global-avg-pool input must be CxHxW");
                cur = {cur[0]};
                break;
            case LayerKind::flatten:
                cur = {static_cast<uint32_t>(product(cur))};
                break;
            case LayerKind::residual_begin:
                residual_stack.emplace_back(i, cur);
                break;
            case LayerKind::residual_add:
                if (residual_stack.empty()) fail(i, "residual-add without matching residual-begin");
                if (residual_stack.back().second != cur) fail(i, "residual shapes differ between begin and add");
                residual_stack.pop_back();
                break;
        }
        out.push_back(cur);
    }
    if (!residual_stack.empty()) fail(residual_stack.back().first, "residual-begin without matching residual-add");
    return out;
}

std::vector<size_t> eligible_layers(const ModelSpec& spec) {
    std::vector<size_t> out;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        LayerKind k = spec.layers[i].kind;
        if ((k == LayerKind::linear || k == LayerKind::conv2d) && spec.layers[i].has_params()) out.push_back(i);
    }
    return out;
}

std::string model_spec_to_json(const ModelSpec& spec) {
    nlohmann::json j;
    j["input_shape"] = spec.input_shape;
    j["layers"] = nlohmann::json::array();
    for (const LayerSpec& l : spec.layers) {
        nlohmann::json jl;
        jl["kind"] = layer_kind_name(l.kind);
        if (!l.weight_name.empty()) jl["weight"] = l.weight_name;
        if (!l.bias_name.empty()) jl["bias"] = l.bias_name;
        if (l.kind == LayerKind::conv2d) {
            jl["stride"] = l.stride;
            jl["padding"] = l.padding;
        }
        j["layers"].push_back(jl);
    }
    return j.dump(2) + "\n";
}

ModelSpec model_spec_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelSpec spec;
    spec.input_shape = j.at("input_shape").get<std::vector<uint32_t>>();
    for (const auto& jl : j.at("layers")) {
        LayerSpec l;
        l.kind = layer_kind_from_name(jl.at("kind").get<std::string>());
        if (jl.contains("weight")) l.weight_name = jl["weight"].get<std::string>();
        if (jl.contains("bias")) l.bias_name = jl["bias"].get<std::string>();
        if (jl.contains("stride")) l.stride = jl["stride"].get<uint32_t>();
        if (jl.contains("padding")) l.padding = jl["padding"].get<uint32_t>();
        spec.layers.push_back(std::move(l));
    }
    return spec;
}

void save_model_spec(const ModelSpec& spec, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ModelError("cannot open '" + path + "' for writing");
    f << model_spec_to_json(spec);
}

ModelSpec load_model_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ModelError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return model_spec_from_json(ss.str());
}

namespace {

LayerSpec linear_layer(size_t idx) {
    return LayerSpec{LayerKind::linear, "layers." + std::to_string(idx) + ".weight",
                     "layers." + std::to_string(idx) + ".bias"};
}

LayerSpec conv_layer(size_t idx, uint32_t stride, uint32_t padding) {
    LayerSpec l{LayerKind::conv2d, "layers." + std::to_string(idx) + ".weight",
                "layers." + std::to_string(idx) + ".bias"};
    l.stride = stride;
    l.padding = padding;
    return l;
}

} // namespace

ModelSpec make_mlp_spec(uint32_t class_count) {
    (void)class_count;
    ModelSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.layers.push_back(LayerSpec{LayerKind::flatten});
    spec.layers.push_back(linear_layer(1)); // 64 -> 32
    spec.layers.push_back(LayerSpec{LayerKind::relu});
    spec.layers.push_back(linear_layer(3)); // 32 -> 16
    spec.layers.push_back(LayerSpec{LayerKind::relu});
    spec.layers.push_back(linear_layer(5)); // 16 -> classes
    return spec;
}

ModelSpec make_micro_resnet_spec(uint32_t class_count, uint32_t channels) {
    (void)class_count;
    (void)channels;
    ModelSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.layers.push_back(conv_layer(0, 2, 1)); // stem: 1 -> C, 8x8 -> 4x4
    spec.layers.push_back(LayerSpec{LayerKind::relu});
    for (int block = 0; block < 2; ++block) {
        size_t base = spec.layers.size();
        spec.layers.push_back(LayerSpec{LayerKind::residual_begin});
        spec.layers.push_back(conv_layer(base + 1, 1, 1));
        spec.layers.push_back(LayerSpec{LayerKind::relu});
        spec.layers.push_back(conv_layer(base + 3, 1, 1));
        spec.layers.push_back(LayerSpec{LayerKind::residual_add});
    }
    spec.layers.push_back(LayerSpec{LayerKind::global_avg_pool});
    spec.layers.push_back(linear_layer(spec.layers.size())); // C -> classes
    return spec;
}

StateDict init_state(const ModelSpec& spec, uint64_t seed) {
    // Parameter shapes for the two built-in architectures are fixed here so
    // init does not depend on a pre-existing state.
    StateDict state;
    SplitMix64 rng(derive_stream(seed, 0xA11Cu));

    auto add_linear = [&](const LayerSpec& l, uint32_t in, uint32_t out) {
        float std_dev = std::sqrt(2.0f / static_cast<float>(in));
        std::vector<float> w(static_cast<size_t>(in) * out);
        for (float& v : w) v = static_cast<float>(rng.next_gaussian()) * std_dev;
        state.insert(l.weight_name, Tensor({out, in}, std::move(w)));
        state.insert(l.bias_name, Tensor({out}, std::vector<float>(out, 0.0f)));
    };
    auto add_conv = [&](const LayerSpec& l, uint32_t cin, uint32_t cout, uint32_t kh, uint32_t kw) {
        float std_dev = std::sqrt(2.0f / static_cast<float>(cin * kh * kw));
        std::vector<float> w(static_cast<size_t>(cout) * cin * kh * kw);
        for (float& v : w) v = static_cast<float>(rng.next_gaussian()) * std_dev;
        state.insert(l.weight_name, Tensor({cout, cin, kh, kw}, std::move(w)));
        state.insert(l.bias_name, Tensor({cout}, std::vector<float>(cout, 0.0f)));
    };

    // Walk the spec tracking shapes to derive fan-in/out per layer.
    std::vector<uint32_t> cur = spec.input_shape;
    std::vector<std::vector<uint32_t>> residual_stack;
    const uint32_t mlp_widths[3] = {32, 16, 8};
    size_t linear_seen = 0;
    bool is_mlp = spec.layers.size() > 0 && spec.layers[0].kind == LayerKind::flatten;
    const uint32_t conv_channels = 80;
    const uint32_t classes = 8;

    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::flatten: {
                uint64_t n = 1;
                for (uint32_t e : cur) n *= e;
                cur = {static_cast<uint32_t>(n)};
                break;
            }
            case LayerKind::linear: {
                uint32_t in = cur[0];
                uint32_t out = is_mlp ? mlp_widths[linear_seen] : classes;
                ++linear_seen;
                add_linear(l, in, out);
                cur = {out};
                break;
            }
            case LayerKind::conv2d: {
                uint32_t cin = cur[0];
                uint32_t cout = conv_channels;
                add_conv(l, cin, cout, 3, 3);
                uint32_t h = (cur[1] + 2 * l.padding - 3) / l.stride + 1;
                uint32_t w = (cur[2] + 2 * l.padding - 3) / l.stride + 1;
                cur = {cout, h, w};
                break;
            }
            case LayerKind::global_avg_pool:
                cur = {cur[0]};
                break;
            case LayerKind::residual_begin:
                residual_stack.push_back(cur);
                break;
            case LayerKind::residual_add:
                cur = residual_stack.back();
                residual_stack.pop_back();
                break;
            case LayerKind::relu:
                break;
        }
    }
    return state;
}

} // namespace stegoshield
