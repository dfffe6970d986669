#include "stegoshield/defense.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stegoshield/checkpoint.hpp"
#include "stegoshield/rng.hpp"

namespace stegoshield {

namespace {

// out[c] <- in[perm[c]] along axis 0, per-channel blocks.
void gather_axis0(Tensor& t, const std::vector<uint32_t>& perm) {
    uint64_t block = t.size() / t.shape[0];
    std::vector<float> out(t.data.size());
    for (uint32_t c = 0; c < t.shape[0]; ++c) {
        std::memcpy(out.data() + uint64_t(c) * block, t.data.data() + uint64_t(perm[c]) * block,
                    block * sizeof(float));
    }
    t.data = std::move(out);
}

// Input-axis gather for the layer consuming a permuted output:
// W[o][c*group + s] <- W[o][perm[c]*group + s].
void gather_input_axis(Tensor& w, const std::vector<uint32_t>& perm, uint64_t group) {
    uint32_t channels = static_cast<uint32_t>(perm.size());
    if (w.shape.size() == 2) {
        uint32_t out_f = w.shape[0];
        uint64_t in_f = w.shape[1];
        if (uint64_t(channels) * group != in_f) throw ModelError("cascade: input axis mismatch");
        std::vector<float> next(w.data.size());
        for (uint32_t o = 0; o < out_f; ++o) {
            const float* src = w.data.data() + uint64_t(o) * in_f;
            float* dst = next.data() + uint64_t(o) * in_f;
            for (uint32_t c = 0; c < channels; ++c) {
                std::memcpy(dst + uint64_t(c) * group, src + uint64_t(perm[c]) * group, group * sizeof(float));
            }
        }
        w.data = std::move(next);
    } else if (w.shape.size() == 4) {
        uint32_t cout = w.shape[0], cin = w.shape[1];
        uint64_t kk = uint64_t(w.shape[2]) * w.shape[3];
        if (cin != channels || group != 1) throw ModelError("cascade: input axis mismatch");
        std::vector<float> next(w.data.size());
        for (uint32_t o = 0; o < cout; ++o) {
            for (uint32_t c = 0; c < channels; ++c) {
                std::memcpy(next.data() + (uint64_t(o) * cin + c) * kk,
                            w.data.data() + (uint64_t(o) * cin + perm[c]) * kk, kk * sizeof(float));
            }
        }
        w.data = std::move(next);
    } else {
        throw ModelError("cascade: unsupported consumer weight rank");
    }
}

} // namespace

std::string PermutationManifest::to_json() const {
    nlohmann::json j;
    j["mode"] = mode == PermutationMode::hooked ? "hooked" : "cascaded";
    j["seed"] = seed;
    j["fraction"] = fraction;
    j["element_fraction"] = element_fraction;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
        nlohmann::json jl;
        jl["layer_index"] = l.layer_index;
        jl["axis"] = l.axis;
        jl["permuted"] = l.permuted;
        jl["permutation"] = l.permutation;
        j["layers"].push_back(jl);
    }
    return j.dump(2) + "\n";
}

PermutationManifest PermutationManifest::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    PermutationManifest m;
    m.mode = j.at("mode").get<std::string>() == "cascaded" ? PermutationMode::cascaded : PermutationMode::hooked;
    m.seed = j.at("seed").get<uint64_t>();
    m.fraction = j.at("fraction").get<double>();
    m.element_fraction = j.value("element_fraction", 0.0);
    for (const auto& jl : j.at("layers")) {
        LayerEntry e;
        e.layer_index = jl.at("layer_index").get<size_t>();
        e.axis = jl.at("axis").get<std::string>();
        e.permuted = jl.at("permuted").get<bool>();
        e.permutation = jl.at("permutation").get<std::vector<uint32_t>>();
        m.layers.push_back(std::move(e));
    }
    return m;
}

void PermutationManifest::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ModelError("manifest: cannot open '" + path + "' for writing");
    f << to_json();
}

PermutationManifest PermutationManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ModelError("manifest: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

PermutationResult permute_model(const ModelSpec& spec, const StateDict& state, double fraction, uint64_t seed,
                                bool force_identity) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("permute: fraction must be in [0,1]");
    propagate_shapes(spec, state);
    auto eligible = eligible_layers(spec);
    size_t chosen_count = static_cast<size_t>(std::ceil(fraction * double(eligible.size())));

    SplitMix64 rng(derive_stream(seed, 0xFE57u));
    std::vector<size_t> pool = eligible;
    fisher_yates(pool, rng);
    std::vector<size_t> chosen(pool.begin(), pool.begin() + chosen_count);
    std::sort(chosen.begin(), chosen.end());

    PermutationResult result{state, {}, {}};
    result.manifest.mode = PermutationMode::hooked;
    result.manifest.seed = seed;
    result.manifest.fraction = eligible.empty() ? 0.0 : double(chosen_count) / double(eligible.size());

    uint64_t moved_elements = 0, total_elements = 0;
    for (size_t layer : eligible) total_elements += state.at(spec.layers[layer].weight_name).size();

    size_t next_chosen = 0;
    for (size_t layer : eligible) {
        PermutationManifest::LayerEntry entry;
        entry.layer_index = layer;
        bool is_chosen = next_chosen < chosen.size() && chosen[next_chosen] == layer;
        if (is_chosen) {
            ++next_chosen;
            Tensor& w = result.state.at(spec.layers[layer].weight_name);
            Tensor& b = result.state.at(spec.layers[layer].bias_name);
            std::vector<uint32_t> perm = force_identity ? std::vector<uint32_t>{} : random_permutation(w.shape[0], rng);
            if (force_identity) {
                perm.resize(w.shape[0]);
                for (uint32_t i = 0; i < w.shape[0]; ++i) perm[i] = i;
            }
            gather_axis0(w, perm);
            gather_axis0(b, perm);
            result.hooks.inverse[layer] = invert_permutation(perm);
            uint64_t block = w.size() / w.shape[0];
            for (uint32_t c = 0; c < w.shape[0]; ++c) {
                if (perm[c] != c) moved_elements += block;
            }
            entry.permutation = std::move(perm);
            entry.permuted = true;
        }
        result.manifest.layers.push_back(std::move(entry));
    }
    result.manifest.element_fraction = total_elements == 0 ? 0.0 : double(moved_elements) / double(total_elements);
    return result;
}

PermutationResult cascade_permute(const ModelSpec& spec, const StateDict& state, uint64_t seed) {
    for (const LayerSpec& l : spec.layers) {
        if (l.kind == LayerKind::residual_begin || l.kind == LayerKind::residual_add) {
            throw ModelError("cascade_permute: unsupported structure (residual span crosses a cascade boundary)");
        }
    }
    auto shapes = propagate_shapes(spec, state);
    auto eligible = eligible_layers(spec);

    PermutationResult result{state, {}, {}};
    result.manifest.mode = PermutationMode::cascaded;
    result.manifest.seed = seed;
    result.manifest.fraction = eligible.empty() ? 0.0 : 1.0;

    SplitMix64 rng(derive_stream(seed, 0xCA5Cu));
    uint64_t moved_elements = 0, total_elements = 0;
    for (size_t layer : eligible) total_elements += state.at(spec.layers[layer].weight_name).size();

    for (size_t ei = 0; ei < eligible.size(); ++ei) {
        size_t layer = eligible[ei];
        Tensor& w = result.state.at(spec.layers[layer].weight_name);
        Tensor& b = result.state.at(spec.layers[layer].bias_name);
        std::vector<uint32_t> perm = random_permutation(w.shape[0], rng);
        gather_axis0(w, perm);
        gather_axis0(b, perm);
        uint64_t block = w.size() / w.shape[0];
        for (uint32_t c = 0; c < w.shape[0]; ++c) {
            if (perm[c] != c) moved_elements += block;
        }

        if (ei + 1 < eligible.size()) {
            // Fold the output permutation into the next consumer's input
            // axis. Parameter-free layers between them preserve the channel
            // identity; flatten turns it into per-channel feature groups.
            size_t consumer = eligible[ei + 1];
            Tensor& wnext = result.state.at(spec.layers[consumer].weight_name);
            uint64_t group = 1;
            if (wnext.shape.size() == 2) {
                group = uint64_t(wnext.shape[1]) / perm.size();
            }
            gather_input_axis(wnext, perm, group);
        } else {
            result.hooks.inverse[layer] = invert_permutation(perm);
        }

        PermutationManifest::LayerEntry entry;
        entry.layer_index = layer;
        entry.permutation = std::move(perm);
        entry.permuted = true;
        result.manifest.layers.push_back(std::move(entry));
    }
    (void)shapes;
    result.manifest.element_fraction = total_elements == 0 ? 0.0 : double(moved_elements) / double(total_elements);
    return result;
}

StateDict unpermute_state(const ModelSpec& spec, const StateDict& state, const PermutationManifest& manifest) {
    StateDict out = state;
    // Output-axis gathers invert independently; cascaded input-axis gathers
    // commute with them (rows vs columns), so a single pass suffices.
    for (size_t mi = 0; mi < manifest.layers.size(); ++mi) {
        const auto& entry = manifest.layers[mi];
        if (!entry.permuted) continue;
        auto inv = invert_permutation(entry.permutation);
        Tensor& w = out.at(spec.layers[entry.layer_index].weight_name);
        Tensor& b = out.at(spec.layers[entry.layer_index].bias_name);
        gather_axis0(w, inv);
        gather_axis0(b, inv);
        if (manifest.mode == PermutationMode::cascaded && mi + 1 < manifest.layers.size()) {
            Tensor& wnext = out.at(spec.layers[manifest.layers[mi + 1].layer_index].weight_name);
            uint64_t group = 1;
            if (wnext.shape.size() == 2) group = uint64_t(wnext.shape[1]) / entry.permutation.size();
            gather_input_axis(wnext, inv, group);
        }
    }
    return out;
}

StateDict prune_global(const StateDict& state, double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("prune: rate must be in [0,1)");
    StateDict out = state;
    FlatView view = flatten_view(out, weight_selector(out));
    uint64_t n = view.total_elements();
    uint64_t prune_count = static_cast<uint64_t>(rate * double(n));
    if (prune_count == 0) return out;

    std::vector<uint64_t> order(n);
    for (uint64_t i = 0; i < n; ++i) order[i] = i;
    std::vector<float> mags(n);
    for (uint64_t i = 0; i < n; ++i) mags[i] = std::fabs(view.get(out, view.position(i)));
    std::sort(order.begin(), order.end(), [&](uint64_t a, uint64_t b) {
        if (mags[a] != mags[b]) return mags[a] < mags[b];
        return a < b; // earlier flatten position pruned first
    });
    for (uint64_t i = 0; i < prune_count; ++i) view.set(out, view.position(order[i]), 0.0f);
    return out;
}

StateDict retrain_defense(const ModelSpec& spec, const StateDict& state, const Dataset& dataset,
                          uint32_t epochs, double lr, uint64_t seed) {
    return train_sgd(spec, state, dataset, epochs, lr, seed);
}

} // namespace stegoshield
