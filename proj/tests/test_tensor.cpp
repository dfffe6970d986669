#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "stegoshield/checkpoint.hpp"
#include "stegoshield/rng.hpp"
#include "stegoshield/tensor.hpp"

using namespace stegoshield;

namespace {

StateDict random_state(SplitMix64& rng) {
    StateDict state;
    size_t entries = 1 + rng.next_below(5);
    for (size_t e = 0; e < entries; ++e) {
        size_t ndim = 1 + rng.next_below(4);
        std::vector<uint32_t> shape(ndim);
        uint64_t n = 1;
        for (auto& s : shape) {
            s = 1 + static_cast<uint32_t>(rng.next_below(6));
            n *= s;
        }
        std::vector<float> data(n);
        for (auto& v : data) {
            switch (rng.next_below(16)) {
                case 0: v = std::numeric_limits<float>::quiet_NaN(); break;
                case 1: v = std::numeric_limits<float>::infinity(); break;
                case 2: v = -std::numeric_limits<float>::infinity(); break;
                case 3: v = -0.0f; break;
                case 4: v = std::numeric_limits<float>::denorm_min(); break;
                default: v = static_cast<float>(rng.next_gaussian()); break;
            }
        }
        state.insert("entry" + std::to_string(e) + ".weight", Tensor(std::move(shape), std::move(data)));
    }
    return state;
}

} // namespace

TEST_CASE("tensor validation") {
    CHECK_THROWS_AS(Tensor({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 0}, {}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f}), std::invalid_argument);
    Tensor t = Tensor::zeros({3, 4});
    CHECK(t.size() == 12);
}

TEST_CASE("bit_equal distinguishes payload-relevant bit patterns") {
    Tensor a({1}, {0.0f});
    Tensor b({1}, {-0.0f});
    CHECK_FALSE(bit_equal(a, b)); // 0.0 == -0.0 but the bits differ
    Tensor n1({1}, {std::numeric_limits<float>::quiet_NaN()});
    Tensor n2 = n1;
    CHECK(bit_equal(n1, n2)); // NaN != NaN but identical bits compare equal
}

TEST_CASE("state dict preserves insertion order and rejects duplicates") {
    StateDict s;
    s.insert("b.weight", Tensor::zeros({2}));
    s.insert("a.weight", Tensor::zeros({3}));
    CHECK(s.entry(0).first == "b.weight");
    CHECK(s.entry(1).first == "a.weight");
    CHECK_THROWS(s.insert("a.weight", Tensor::zeros({1})));
    CHECK(s.contains("b.weight"));
    CHECK_FALSE(s.contains("c.weight"));
}

TEST_CASE("checkpoint roundtrip is bijective on 1000 randomized states") {
    SplitMix64 rng(0xC0DEC);
    for (int trial = 0; trial < 1000; ++trial) {
        StateDict state = random_state(rng);
        std::vector<uint8_t> bytes = write_checkpoint(state);
        StateDict back = read_checkpoint(bytes);
        REQUIRE(bit_equal(state, back));
        // Serialization is canonical: re-encoding reproduces the bytes.
        CHECK(write_checkpoint(back) == bytes);
    }
}

TEST_CASE("empty checkpoint is exactly the 12-byte header") {
    StateDict empty;
    std::vector<uint8_t> bytes = write_checkpoint(empty);
    CHECK(bytes.size() == 12);
    CHECK(std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0);
    StateDict back = read_checkpoint(bytes);
    CHECK(back.size() == 0);
}

TEST_CASE("checkpoint decoder rejects malformed input") {
    StateDict state;
    state.insert("w.weight", Tensor({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}));
    std::vector<uint8_t> good = write_checkpoint(state);

    SUBCASE("bad magic") {
        auto bad = good;
        bad[0] = 'X';
        CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
    }
    SUBCASE("bad version") {
        auto bad = good;
        bad[4] = 9;
        CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
    }
    SUBCASE("truncation at every prefix length") {
        for (size_t len = 0; len < good.size(); ++len) {
            std::vector<uint8_t> cut(good.begin(), good.begin() + len);
            CHECK_THROWS_AS(read_checkpoint(cut), CheckpointError);
        }
    }
    SUBCASE("trailing bytes") {
        auto bad = good;
        bad.push_back(0);
        CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
    }
    SUBCASE("unknown dtype") {
        auto bad = good;
        // dtype byte sits right after magic+version+count+name_len+name.
        size_t off = 4 + 4 + 4 + 2 + std::strlen("w.weight");
        bad[off] = 7;
        CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
    }
    SUBCASE("duplicate entry name") {
        // Two identical entries: splice the entry bytes twice.
        std::vector<uint8_t> two(good.begin(), good.begin() + 12);
        two[8] = 2; // entry_count
        two.insert(two.end(), good.begin() + 12, good.end());
        two.insert(two.end(), good.begin() + 12, good.end());
        CHECK_THROWS_AS(read_checkpoint(two), CheckpointError);
    }
    SUBCASE("zero extent") {
        auto bad = good;
        size_t dims_off = 4 + 4 + 4 + 2 + std::strlen("w.weight") + 2;
        for (int i = 0; i < 4; ++i) bad[dims_off + i] = 0;
        CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
    }
}

TEST_CASE("flat view walks entries in dict order") {
    StateDict s;
    s.insert("a.weight", Tensor({2}, {1.0f, 2.0f}));
    s.insert("a.bias", Tensor({2}, {9.0f, 9.0f}));
    s.insert("b.weight", Tensor({3}, {3.0f, 4.0f, 5.0f}));

    FlatView view = flatten_view(s, weight_selector(s));
    REQUIRE(view.total_elements() == 5); // bias excluded
    std::vector<float> seen;
    for (uint64_t i = 0; i < view.total_elements(); ++i) seen.push_back(view.get(s, view.position(i)));
    CHECK(seen == std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f, 5.0f});

    view.set(s, view.position(4), 7.0f);
    CHECK(s.at("b.weight").data[2] == 7.0f);
}

TEST_CASE("weight selector falls back to all entries when nothing matches") {
    StateDict s;
    s.insert("alpha", Tensor({1}, {1.0f}));
    s.insert("beta", Tensor({1}, {2.0f}));
    FlatView view = flatten_view(s, weight_selector(s));
    CHECK(view.total_elements() == 2);
}

TEST_CASE("flat view with empty selection throws") {
    StateDict s;
    s.insert("a.weight", Tensor({1}, {1.0f}));
    CHECK_THROWS(flatten_view(s, [](const std::string&) { return false; }));
}

TEST_CASE("file roundtrip") {
    SplitMix64 rng(0xF11E);
    StateDict state = random_state(rng);
    std::string path = "test_tensor_roundtrip.ckpt";
    save_checkpoint_file(state, path);
    StateDict back = load_checkpoint_file(path);
    CHECK(bit_equal(state, back));
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint_file(path), CheckpointError);
}
