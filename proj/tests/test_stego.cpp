#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "stegoshield/rng.hpp"
#include "stegoshield/stego.hpp"

using namespace stegoshield;

namespace {

StateDict gaussian_state(const std::vector<std::pair<std::string, uint64_t>>& layout, uint64_t seed) {
    StateDict s;
    SplitMix64 rng(seed);
    for (const auto& [name, count] : layout) {
        std::vector<float> data(count);
        for (float& v : data) v = static_cast<float>(rng.next_gaussian());
        s.insert(name, Tensor({static_cast<uint32_t>(count)}, std::move(data)));
    }
    return s;
}

Payload bytes_payload(uint64_t n, uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<uint8_t> b(n);
    for (auto& v : b) v = uint8_t(rng.next());
    return Payload::from_bytes(std::move(b));
}

} // namespace

TEST_CASE("lsb capacity counts n_bits per weight element") {
    StateDict s = gaussian_state({{"a.weight", 100}, {"a.bias", 10}}, 1);
    CHECK(capacity(s, LsbScheme{1}) == 100);
    CHECK(capacity(s, LsbScheme{4}) == 400);
}

TEST_CASE("lsb embedding flips only the lowest mantissa bits") {
    StateDict s = gaussian_state({{"a.weight", 4096}}, 2);
    Payload p = bytes_payload(64, 3);
    for (uint32_t n_bits : {1u, 3u, 8u}) {
        StateDict infected = embed_lsb(s, p, n_bits);
        uint32_t mask = ~((1u << n_bits) - 1u);
        for (size_t i = 0; i < 4096; ++i) {
            uint32_t before = std::bit_cast<uint32_t>(s.at("a.weight").data[i]);
            uint32_t after = std::bit_cast<uint32_t>(infected.at("a.weight").data[i]);
            REQUIRE((before & mask) == (after & mask));
        }
    }
}

TEST_CASE("lsb bit-1 on 1.0f produces the next float above 1.0") {
    StateDict s;
    std::vector<float> ones(256, 1.0f);
    s.insert("a.weight", Tensor({256}, ones));
    Payload p = bytes_payload(8, 4);
    StateDict infected = embed_lsb(s, p, 1);
    bool saw_bump = false;
    for (float v : infected.at("a.weight").data) {
        if (v != 1.0f) {
            CHECK(v == std::nextafter(1.0f, 2.0f));
            saw_bump = true;
        }
    }
    CHECK(saw_bump);
}

TEST_CASE("lsb roundtrip across multiple layers") {
    StateDict s = gaussian_state({{"a.weight", 800}, {"a.bias", 16}, {"b.weight", 300}}, 5);
    Payload p = bytes_payload(100, 6);
    StateDict infected = embed_lsb(s, p, 1);
    ExtractionResult ex = extract_lsb(infected, 1);
    CHECK(ex.found_any);
    CHECK(ex.recovered);
    CHECK(ex.data == p.data);
    // Bias untouched.
    CHECK(bit_equal(s.at("a.bias"), infected.at("a.bias")));
}

TEST_CASE("lsb capacity error carries the deficit") {
    StateDict s = gaussian_state({{"a.weight", 256}}, 7);
    CHECK_THROWS_AS(embed_lsb(s, bytes_payload(1000, 8), 1), CapacityError);
}

TEST_CASE("extract on a clean state reports no payload") {
    StateDict s = gaussian_state({{"a.weight", 4096}}, 9);
    ExtractionResult ex = extract_lsb(s, 1);
    CHECK_FALSE(ex.found_any);
    CHECK_FALSE(ex.recovered);

    LdpcCode code = LdpcCode::make(64, 32, 5);
    SpreadParams params;
    params.chips_per_bit = 8;
    ExtractionResult ex2 = extract_spread(s, code, params);
    CHECK_FALSE(ex2.recovered);
}

TEST_CASE("chip signs are deterministic, balanced, and layer-independent") {
    int sum = 0;
    for (uint64_t pos = 0; pos < 10000; ++pos) {
        int c = chip_sign(1, 0, pos);
        CHECK((c == 1 || c == -1));
        CHECK(c == chip_sign(1, 0, pos));
        sum += c;
    }
    CHECK(std::abs(sum) < 300); // |mean| < 3/sqrt(10^4)

    // Streams differ across layers and seeds.
    int diff_layer = 0, diff_seed = 0;
    for (uint64_t pos = 0; pos < 1000; ++pos) {
        diff_layer += chip_sign(1, 0, pos) != chip_sign(1, 1, pos);
        diff_seed += chip_sign(1, 0, pos) != chip_sign(2, 0, pos);
    }
    CHECK(diff_layer > 300);
    CHECK(diff_seed > 300);
}

TEST_CASE("spread capacity floors to whole codeword blocks") {
    LdpcCode code = LdpcCode::make(64, 32, 5);
    SpreadParams params;
    params.chips_per_bit = 8;
    // One block costs n*L = 512 elements; header costs 12 bytes = 96 bits
    // of message = 3 blocks of k=32.
    StateDict s = gaussian_state({{"a.weight", 4096}}, 10);
    EmbedPlan plan = build_spread_plan(s, code, params);
    REQUIRE(plan.layers.size() == 1);
    CHECK(plan.layers[0].capacity_bits == 8 * 64); // 8 blocks
    CHECK(plan.layers[0].usable);
    CHECK(plan.layers[0].max_body_bytes == 8 * 4 - 12);

    StateDict tiny = gaussian_state({{"a.weight", 511}}, 11);
    EmbedPlan tiny_plan = build_spread_plan(tiny, code, params);
    CHECK_FALSE(tiny_plan.layers[0].usable);
}

TEST_CASE("spread roundtrip recovers the payload exactly") {
    LdpcCode code = LdpcCode::make(64, 32, 5);
    SpreadParams params;
    params.chips_per_bit = 8;
    params.gamma = 2.0;
    StateDict s = gaussian_state({{"a.weight", 8192}, {"b.weight", 8192}}, 12);
    Payload p = bytes_payload(30, 13);
    StateDict infected = embed_spread(s, p, code, params);
    ExtractionResult ex = extract_spread(infected, code, params);
    CHECK(ex.found_any);
    CHECK(ex.recovered);
    CHECK(ex.data == p.data);
    CHECK(ex.raw_ber <= 0.05);
    CHECK(spread_true_ber(infected, p, code, params) <= 0.05);
    for (const auto& c : ex.chunks) {
        CHECK(c.crc_ok);
        CHECK(c.ldpc_converged);
    }
}

TEST_CASE("spread embedding is local: untouched positions keep their bits") {
    LdpcCode code = LdpcCode::make(64, 32, 5);
    SpreadParams params;
    params.chips_per_bit = 8;
    StateDict s = gaussian_state({{"a.weight", 4096}, {"a.bias", 64}}, 14);
    Payload p = bytes_payload(4, 15);
    StateDict infected = embed_spread(s, p, code, params);
    CHECK(bit_equal(s.at("a.bias"), infected.at("a.bias")));
    // Header (3 blocks) + 2 body blocks of payload: 4 bytes = 32 bits = 1
    // block, total blocks used = ceil((12+4)*8/32)=4 -> 4*512 elements.
    uint64_t touched = 0;
    for (size_t i = 0; i < 4096; ++i) {
        if (std::bit_cast<uint32_t>(s.at("a.weight").data[i]) !=
            std::bit_cast<uint32_t>(infected.at("a.weight").data[i]))
            ++touched;
    }
    CHECK(touched <= 4 * 512);
    CHECK(touched > 0);
}

TEST_CASE("gamma zero leaves the state bit-identical") {
    LdpcCode code = LdpcCode::make(64, 32, 5);
    SpreadParams params;
    params.chips_per_bit = 8;
    params.gamma = 0.0;
    StateDict s = gaussian_state({{"a.weight", 4096}}, 16);
    StateDict infected = embed_spread(s, bytes_payload(4, 17), code, params);
    CHECK(bit_equal(s, infected));
}

TEST_CASE("embedding is deterministic") {
    LdpcCode code = LdpcCode::make(64, 32, 5);
    SpreadParams params;
    params.chips_per_bit = 8;
    StateDict s = gaussian_state({{"a.weight", 4096}}, 18);
    Payload p = bytes_payload(8, 19);
    CHECK(bit_equal(embed_spread(s, p, code, params), embed_spread(s, p, code, params)));
    CHECK(bit_equal(embed_lsb(s, p, 2), embed_lsb(s, p, 2)));
}

TEST_CASE("spread capacity error for oversized payloads") {
    LdpcCode code = LdpcCode::make(64, 32, 5);
    SpreadParams params;
    params.chips_per_bit = 8;
    StateDict s = gaussian_state({{"a.weight", 4096}}, 20);
    // 8 blocks -> 32 message bytes -> 20 body bytes max.
    CHECK_THROWS_AS(embed_spread(s, bytes_payload(21, 21), code, params), CapacityError);
    CHECK_NOTHROW(embed_spread(s, bytes_payload(20, 21), code, params));
}
