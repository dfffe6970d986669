#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "stegoshield/model.hpp"
#include "stegoshield/nn.hpp"
#include "stegoshield/tensor.hpp"

namespace stegoshield {

enum class PermutationMode : uint8_t { hooked, cascaded };

struct PermutationManifest {
    struct LayerEntry {
        size_t layer_index = 0;
        std::string axis = "output"; // output-channel/feature axis
        std::vector<uint32_t> permutation;
        bool permuted = false;
    };
    std::vector<LayerEntry> layers;
    PermutationMode mode = PermutationMode::hooked;
    uint64_t seed = 0;
    double fraction = 0.0; // permuted-layer count / eligible-layer count
    // Share of weight elements whose value moved; reported so partial
    // sweeps can be plotted per layer or per element.
    double element_fraction = 0.0;

    std::string to_json() const;
    static PermutationManifest from_json(const std::string& text);
    void save(const std::string& path) const;
    static PermutationManifest load(const std::string& path);
};

struct PermutationResult {
    StateDict state;
    HookSet hooks;
    PermutationManifest manifest;
};

// Alg.-style per-layer shuffle: ceil(fraction * eligible) layers chosen
// (seeded, uniform, without replacement); each chosen layer's output axis
// (weight rows + bias for linear, C_out for conv2d) permuted by a fresh
// Fisher-Yates draw; the HookSet carries the inverse permutations.
// force_identity is a test seam that pins every drawn permutation to
// identity.
PermutationResult permute_model(const ModelSpec& spec, const StateDict& state, double fraction, uint64_t seed,
                                bool force_identity = false);

// Single-hook variant: each layer's output permutation is folded into the
// next layer's input axis; only the final eligible layer keeps a hook.
// Requires a purely sequential chain (throws on residual spans).
PermutationResult cascade_permute(const ModelSpec& spec, const StateDict& state, uint64_t seed);

// Applies the manifest's inverse permutations to a permuted state,
// recovering the original bit-exactly.
StateDict unpermute_state(const ModelSpec& spec, const StateDict& state, const PermutationManifest& manifest);

// Global unstructured magnitude pruning: zeroes (+0.0) exactly
// floor(rate * N) smallest-|w| weight elements (biases excluded); ties
// break toward the earlier flatten position.
StateDict prune_global(const StateDict& state, double rate);

// Named alias of train_sgd so experiment configs treat defenses uniformly.
StateDict retrain_defense(const ModelSpec& spec, const StateDict& state, const Dataset& dataset,
                          uint32_t epochs, double lr, uint64_t seed);

} // namespace stegoshield
