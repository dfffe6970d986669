#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "stegoshield/checkpoint.hpp"
#include "stegoshield/defense.hpp"
#include "stegoshield/nn.hpp"
#include "stegoshield/rng.hpp"

using namespace stegoshield;

namespace {

ModelSpec two_unit_spec() {
    ModelSpec spec;
    spec.input_shape = {2};
    spec.layers.push_back(LayerSpec{LayerKind::linear, "layers.0.weight", "layers.0.bias"});
    return spec;
}

StateDict two_unit_state() {
    StateDict s;
    s.insert("layers.0.weight", Tensor({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}));
    s.insert("layers.0.bias", Tensor({2}, {5.0f, 6.0f}));
    return s;
}

Tensor random_input(const std::vector<uint32_t>& shape, SplitMix64& rng) {
    uint64_t n = 1;
    for (auto e : shape) n *= e;
    Tensor t;
    t.shape = shape;
    t.data.resize(n);
    for (float& v : t.data) v = static_cast<float>(rng.next_gaussian());
    return t;
}

} // namespace

TEST_CASE("hand example: swapping a 2-unit layer moves rows and bias") {
    ModelSpec spec = two_unit_spec();
    StateDict state = two_unit_state();
    bool saw_swap = false, saw_identity = false;
    for (uint64_t seed = 1; seed <= 30 && !(saw_swap && saw_identity); ++seed) {
        PermutationResult pr = permute_model(spec, state, 1.0, seed);
        REQUIRE(pr.manifest.layers.size() == 1);
        const auto& perm = pr.manifest.layers[0].permutation;
        const auto& w = pr.state.at("layers.0.weight").data;
        const auto& b = pr.state.at("layers.0.bias").data;
        if (perm == std::vector<uint32_t>{1, 0}) {
            saw_swap = true;
            CHECK(w == std::vector<float>{3, 4, 1, 2});
            CHECK(b == std::vector<float>{6, 5});
            CHECK(pr.hooks.inverse.at(0) == std::vector<uint32_t>{1, 0});
        } else {
            REQUIRE(perm == std::vector<uint32_t>{0, 1});
            saw_identity = true;
            CHECK(bit_equal(pr.state, state));
        }
        // Either way the hooked forward matches the original.
        Tensor x({2}, {10.0f, 100.0f});
        CHECK(bit_equal(forward(spec, state, HookSet{}, x), forward(spec, pr.state, pr.hooks, x)));
    }
    CHECK(saw_swap);
    CHECK(saw_identity);
}

TEST_CASE("fraction 0 leaves the state untouched with no hooks") {
    ModelSpec spec = make_mlp_spec();
    StateDict state = init_state(spec, 2);
    PermutationResult pr = permute_model(spec, state, 0.0, 99);
    CHECK(bit_equal(pr.state, state));
    CHECK(pr.hooks.empty());
    CHECK(pr.manifest.fraction == 0.0);
    CHECK(pr.manifest.element_fraction == 0.0);
}

TEST_CASE("identity permutation test seam leaves the state untouched") {
    ModelSpec spec = make_mlp_spec();
    StateDict state = init_state(spec, 2);
    PermutationResult pr = permute_model(spec, state, 1.0, 99, /*force_identity=*/true);
    CHECK(bit_equal(pr.state, state));
    CHECK(pr.manifest.fraction == 1.0);
}

TEST_CASE("fractional selection permutes ceil(fraction * eligible) layers") {
    ModelSpec spec = make_mlp_spec(); // 3 eligible layers
    StateDict state = init_state(spec, 4);
    for (auto [fraction, expected] : {std::pair<double, size_t>{0.1, 1}, {0.5, 2}, {1.0, 3}}) {
        PermutationResult pr = permute_model(spec, state, fraction, 8);
        size_t permuted = 0;
        for (const auto& l : pr.manifest.layers) permuted += l.permuted ? 1 : 0;
        CHECK(permuted == expected);
        CHECK(pr.hooks.inverse.size() == expected);
        CHECK(pr.manifest.fraction == doctest::Approx(double(expected) / 3.0));
    }
    CHECK_THROWS_AS(permute_model(spec, state, 1.5, 1), std::invalid_argument);
}

TEST_CASE("manifest inverts the permutation bit-exactly, json included") {
    ModelSpec spec = make_micro_resnet_spec();
    StateDict state = init_state(spec, 5);
    PermutationResult pr = permute_model(spec, state, 1.0, 6);
    CHECK_FALSE(bit_equal(pr.state, state));

    PermutationManifest reloaded = PermutationManifest::from_json(pr.manifest.to_json());
    CHECK(reloaded.seed == pr.manifest.seed);
    CHECK(reloaded.mode == pr.manifest.mode);
    StateDict restored = unpermute_state(spec, pr.state, reloaded);
    CHECK(bit_equal(restored, state));
}

TEST_CASE("cascade: stacked linear layers fold to a single final hook") {
    ModelSpec spec;
    spec.input_shape = {6};
    spec.layers.push_back(LayerSpec{LayerKind::linear, "layers.0.weight", "layers.0.bias"});
    spec.layers.push_back(LayerSpec{LayerKind::relu});
    spec.layers.push_back(LayerSpec{LayerKind::linear, "layers.2.weight", "layers.2.bias"});
    StateDict state;
    SplitMix64 init(0xF00D);
    std::vector<float> w0(5 * 6), b0(5), w2(4 * 5), b2(4);
    for (auto* vec : {&w0, &b0, &w2, &b2}) {
        for (float& v : *vec) v = static_cast<float>(init.next_gaussian());
    }
    state.insert("layers.0.weight", Tensor({5, 6}, w0));
    state.insert("layers.0.bias", Tensor({5}, b0));
    state.insert("layers.2.weight", Tensor({4, 5}, w2));
    state.insert("layers.2.bias", Tensor({4}, b2));

    PermutationResult pr = cascade_permute(spec, state, 21);
    CHECK(pr.hooks.inverse.size() == 1);
    CHECK(pr.hooks.inverse.count(2) == 1);

    SplitMix64 rng(0xCA7);
    for (int t = 0; t < 100; ++t) {
        Tensor x = random_input(spec.input_shape, rng);
        CHECK(bit_equal(forward(spec, state, HookSet{}, x), forward(spec, pr.state, pr.hooks, x)));
    }

    StateDict restored = unpermute_state(spec, pr.state, pr.manifest);
    CHECK(bit_equal(restored, state));
}

TEST_CASE("cascade through flatten permutes feature groups") {
    ModelSpec spec;
    spec.input_shape = {1, 4, 4};
    spec.layers.push_back(LayerSpec{LayerKind::conv2d, "layers.0.weight", "layers.0.bias", 1, 1});
    spec.layers.push_back(LayerSpec{LayerKind::relu});
    spec.layers.push_back(LayerSpec{LayerKind::flatten});
    spec.layers.push_back(LayerSpec{LayerKind::linear, "layers.3.weight", "layers.3.bias"});
    StateDict state;
    SplitMix64 init(0xBEEF);
    std::vector<float> w0(3 * 1 * 3 * 3), b0(3), w3(2 * 48), b3(2);
    for (auto* vec : {&w0, &b0, &w3, &b3}) {
        for (float& v : *vec) v = static_cast<float>(init.next_gaussian());
    }
    state.insert("layers.0.weight", Tensor({3, 1, 3, 3}, w0));
    state.insert("layers.0.bias", Tensor({3}, b0));
    state.insert("layers.3.weight", Tensor({2, 48}, w3));
    state.insert("layers.3.bias", Tensor({2}, b3));

    PermutationResult pr = cascade_permute(spec, state, 33);
    SplitMix64 rng(0xCA8);
    for (int t = 0; t < 100; ++t) {
        Tensor x = random_input(spec.input_shape, rng);
        CHECK(bit_equal(forward(spec, state, HookSet{}, x), forward(spec, pr.state, pr.hooks, x)));
    }
    CHECK(bit_equal(unpermute_state(spec, pr.state, pr.manifest), state));
}

TEST_CASE("cascade rejects residual spans") {
    ModelSpec spec = make_micro_resnet_spec();
    StateDict state = init_state(spec, 7);
    CHECK_THROWS_AS(cascade_permute(spec, state, 1), ModelError);
}

TEST_CASE("cascade on a single-layer model degenerates to the hooked variant") {
    ModelSpec spec = two_unit_spec();
    StateDict state = two_unit_state();
    PermutationResult pr = cascade_permute(spec, state, 13);
    CHECK(pr.hooks.inverse.size() == 1);
    Tensor x({2}, {-1.0f, 2.5f});
    CHECK(bit_equal(forward(spec, state, HookSet{}, x), forward(spec, pr.state, pr.hooks, x)));
}

TEST_CASE("prune oracle: rate 0.5 zeroes the two smallest magnitudes") {
    StateDict s;
    s.insert("a.weight", Tensor({4}, {0.1f, -0.5f, 0.05f, 2.0f}));
    StateDict pruned = prune_global(s, 0.5);
    CHECK(pruned.at("a.weight").data == std::vector<float>{0.0f, -0.5f, 0.0f, 2.0f});
    // Zeros are +0.0, not -0.0.
    CHECK(std::bit_cast<uint32_t>(pruned.at("a.weight").data[0]) == 0u);
}

TEST_CASE("prune rate 0 is a no-op and rate bounds are enforced") {
    StateDict s;
    s.insert("a.weight", Tensor({3}, {1.0f, 2.0f, 3.0f}));
    CHECK(bit_equal(prune_global(s, 0.0), s));
    CHECK_THROWS_AS(prune_global(s, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(prune_global(s, -0.1), std::invalid_argument);
}

TEST_CASE("prune zeroes exactly floor(rate * N) elements, biases excluded") {
    ModelSpec spec = make_mlp_spec();
    StateDict state = init_state(spec, 9);
    uint64_t total = 0;
    for (const auto& [name, t] : state) {
        if (name.ends_with(".weight")) total += t.size();
    }
    for (double rate : {0.1, 0.25, 0.5, 0.9}) {
        StateDict pruned = prune_global(state, rate);
        uint64_t zeros = 0;
        for (const auto& [name, t] : pruned) {
            if (!name.ends_with(".weight")) {
                CHECK(bit_equal(t, state.at(name)));
                continue;
            }
            for (float v : t.data) zeros += (v == 0.0f) ? 1 : 0;
        }
        CHECK(zeros == uint64_t(rate * double(total)));
    }
}

TEST_CASE("prune ties break toward the earlier flatten position") {
    StateDict s;
    s.insert("a.weight", Tensor({4}, {0.5f, -0.5f, 0.5f, 1.0f}));
    StateDict pruned = prune_global(s, 0.5);
    CHECK(pruned.at("a.weight").data == std::vector<float>{0.0f, 0.0f, 0.5f, 1.0f});
}

TEST_CASE("retrain defense is deterministic and delegates to sgd") {
    ModelSpec spec = make_mlp_spec();
    Dataset train = make_blob_dataset(128, 3);
    StateDict state = init_state(spec, 3);
    StateDict a = retrain_defense(spec, state, train, 2, 0.05, 5);
    StateDict b = retrain_defense(spec, state, train, 2, 0.05, 5);
    CHECK(bit_equal(a, b));
    CHECK(bit_equal(a, train_sgd(spec, state, train, 2, 0.05, 5)));
}

TEST_CASE("manifest file save/load roundtrip") {
    ModelSpec spec = make_mlp_spec();
    StateDict state = init_state(spec, 31);
    PermutationResult pr = permute_model(spec, state, 0.5, 17);
    std::string path = "test_defense_manifest.json";
    pr.manifest.save(path);
    PermutationManifest back = PermutationManifest::load(path);
    std::remove(path.c_str());
    REQUIRE(back.layers.size() == pr.manifest.layers.size());
    for (size_t i = 0; i < back.layers.size(); ++i) {
        CHECK(back.layers[i].layer_index == pr.manifest.layers[i].layer_index);
        CHECK(back.layers[i].permutation == pr.manifest.layers[i].permutation);
        CHECK(back.layers[i].permuted == pr.manifest.layers[i].permuted);
    }
    CHECK(bit_equal(unpermute_state(spec, pr.state, back), state));
}
