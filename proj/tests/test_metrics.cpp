#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stegoshield/metrics.hpp"
#include "stegoshield/rng.hpp"

using namespace stegoshield;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("accuracy quotient") {
    CHECK(accuracy_quotient(0.8, 0.8) == doctest::Approx(1.0));
    CHECK(accuracy_quotient(0.8, 0.4) == doctest::Approx(0.5));
    CHECK_THROWS_AS(accuracy_quotient(0.0, 0.5), std::domain_error);
}

TEST_CASE("payload integrity records the true BER alongside the verdict") {
    ExtractionResult ex;
    ex.found_any = true;
    ex.recovered = true;
    ex.data = {1, 2, 3};
    Payload truth = Payload::from_bytes({1, 2, 3});

    IntegrityReport clean = payload_integrity(ex, truth, 0.0);
    CHECK(clean.recovered);
    REQUIRE(clean.true_ber.has_value());
    CHECK(*clean.true_ber == 0.0);

    // true_ber is the pre-decoding channel BER; a small nonzero value is
    // exactly what the code corrects, so the verdict stands.
    IntegrityReport dirty = payload_integrity(ex, truth, 0.01);
    CHECK(dirty.recovered);
    CHECK(*dirty.true_ber == 0.01);

    // Byte mismatch against ground truth also fails the verdict.
    Payload other = Payload::from_bytes({9, 9, 9});
    CHECK_FALSE(payload_integrity(ex, other).recovered);
}

TEST_CASE("spearman rho on known series") {
    CHECK(spearman_rho({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman_rho({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
    CHECK(spearman_rho({1, 2, 3, 4}, {5, 5, 5, 5}) == doctest::Approx(0.0));
    // Ties get averaged ranks; monotone-with-ties stays positive.
    CHECK(spearman_rho({1, 1, 2, 2}, {3, 3, 7, 9}) > 0.8);
    CHECK_THROWS_AS(spearman_rho({1}, {1}), std::invalid_argument);
}

TEST_CASE("timing profile enforces the trial floor and reports medians") {
    ModelSpec spec = make_mlp_spec();
    StateDict state = init_state(spec, 2);
    CHECK_THROWS_AS(timing_profile(spec, state, 1.0, 10, 1), std::invalid_argument);
    TimingProfile tp = timing_profile(spec, state, 1.0, 30, 1);
    CHECK(tp.trials == 30);
    CHECK(tp.load_ms > 0.0);
    CHECK(tp.permute_ms > 0.0);
    CHECK(tp.forward_plain_us > 0.0);
    CHECK(tp.forward_hooked_us > 0.0);
}

TEST_CASE("partial permutation sweep: endpoints behave as expected") {
    // One fat linear layer so the spread scheme has capacity at L=8.
    ModelSpec spec;
    spec.input_shape = {16};
    spec.layers.push_back(LayerSpec{LayerKind::linear, "layers.0.weight", "layers.0.bias"});
    StateDict state;
    SplitMix64 rng(0x5EED);
    std::vector<float> w(512 * 16), b(512);
    for (float& v : w) v = static_cast<float>(rng.next_gaussian());
    for (float& v : b) v = static_cast<float>(rng.next_gaussian());
    state.insert("layers.0.weight", Tensor({512, 16}, w));
    state.insert("layers.0.bias", Tensor({512}, b));

    LdpcCode code = LdpcCode::make(64, 32, 5);
    SpreadParams params;
    params.chips_per_bit = 8;
    params.gamma = 2.0;
    Payload payload = Payload::from_bytes({0xDE, 0xAD, 0xBE, 0xEF});
    StateDict embedded = embed_spread(state, payload, code, params);

    auto records = sweep_partial_permutation(spec, embedded, payload, code, params, {0.0, 1.0}, {1, 2, 3});
    REQUIRE(records.size() == 6);
    for (const auto& r : records) {
        REQUIRE(r.integrity.true_ber.has_value());
        if (r.defense_param == 0.0) {
            CHECK(r.integrity.recovered);
            CHECK(*r.integrity.true_ber == 0.0);
        } else {
            CHECK_FALSE(r.integrity.recovered);
            CHECK(*r.integrity.true_ber > 0.3);
        }
    }
    std::string csv = format_fig3_csv(records);
    CHECK(csv.find("fraction,seed,true_ber,recovered") == 0);
}

TEST_CASE("experiment config json roundtrip") {
    ExperimentConfig c;
    c.models = {"mlp"};
    c.scheme = "lsb";
    c.payload_sizes = {37};
    c.defenses = {{"none", 0.0}, {"prune", 0.25}};
    c.seeds = {4, 5};
    c.spread.gamma = 0.123;
    ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.models == c.models);
    CHECK(back.scheme == c.scheme);
    CHECK(back.payload_sizes == c.payload_sizes);
    CHECK(back.defenses.size() == 2);
    CHECK(back.defenses[1].kind == "prune");
    CHECK(back.seeds == c.seeds);
    CHECK(back.spread.gamma == doctest::Approx(0.123));
}

TEST_CASE("experiment matrix on the mlp with lsb is deterministic") {
    ExperimentConfig config;
    config.models = {"mlp"};
    config.scheme = "lsb";
    config.payload_sizes = {64};
    config.defenses = {{"none", 0.0}, {"permute", 1.0}, {"prune", 0.1}, {"retrain", 1.0}};
    config.seeds = {1, 2};
    config.train_epochs = 4;
    config.out_dir = "test_metrics_out";

    ExperimentOutput out = run_experiment_matrix(config);
    REQUIRE(out.records.size() == 8);

    for (const auto& r : out.records) {
        if (r.defense_kind == "none") {
            CHECK(r.integrity.recovered);
            CHECK(r.quotient == doctest::Approx(1.0));
        }
        if (r.defense_kind == "permute") {
            CHECK_FALSE(r.integrity.recovered);
            CHECK(r.quotient == doctest::Approx(1.0)); // hooks restore accuracy exactly
        }
    }

    std::string csv_a = slurp(out.results_csv_path);
    std::string table = slurp(out.table1_md_path);
    CHECK(table.find("mlp") != std::string::npos);
    CHECK(table.find("\xE2\x9C\x93") != std::string::npos); // permute row is marked corrupted

    ExperimentOutput again = run_experiment_matrix(config);
    CHECK(slurp(again.results_csv_path) == csv_a);

    std::filesystem::remove_all(config.out_dir);
}

TEST_CASE("experiment matrix rejects unknown models and defenses") {
    ExperimentConfig bad;
    bad.models = {"mystery"};
    CHECK_THROWS(run_experiment_matrix(bad));
    ExperimentConfig bad2;
    bad2.models = {"mlp"};
    bad2.defenses = {{"quantize", 0.5}};
    CHECK_THROWS(run_experiment_matrix(bad2));
}
