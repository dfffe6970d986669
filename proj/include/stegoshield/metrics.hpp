#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stegoshield/defense.hpp"
#include "stegoshield/ldpc.hpp"
#include "stegoshield/model.hpp"
#include "stegoshield/nn.hpp"
#include "stegoshield/stego.hpp"
#include "stegoshield/tensor.hpp"

namespace stegoshield {

struct IntegrityReport {
    bool recovered = false; // complete chunk set, every CRC ok, bytes match truth
    double raw_ber = 0.0;
    std::optional<double> true_ber; // set when ground truth available
    std::vector<ChunkStatus> per_chunk;
};

// after / before; throws std::domain_error when before == 0.
double accuracy_quotient(double before, double after);

IntegrityReport payload_integrity(const ExtractionResult& attempt, const Payload& truth);
IntegrityReport payload_integrity(const ExtractionResult& attempt, const Payload& truth, double true_ber);

struct TimingProfile {
    double load_ms = 0.0;          // median checkpoint read from disk
    double permute_ms = 0.0;       // median permute + hook attach
    double forward_plain_us = 0.0; // median single-input forward, no hooks
    double forward_hooked_us = 0.0;
    double exec_overhead_pct = 0.0; // (hooked - plain) / plain * 100
    uint32_t trials = 0;
};

// Medians over `trials` measurements (>= 30) with warm-up runs discarded.
TimingProfile timing_profile(const ModelSpec& spec, const StateDict& state, double fraction, uint32_t trials,
                             uint64_t seed);

struct ExperimentRecord {
    std::string model_id;
    uint64_t payload_size = 0;
    std::string scheme;       // "lsb" | "spread"
    std::string defense_kind; // "none" | "permute" | "prune" | "retrain"
    double defense_param = 0.0;
    double accuracy_before = 0.0;
    double accuracy_after = 0.0;
    double quotient = 0.0;
    IntegrityReport integrity;
    uint64_t seed = 0;
};

// Spearman rank correlation with tie-averaged ranks. Returns 0 when either
// series is constant.
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

// One record per (fraction, seed): permute the embedded state at the given
// fraction and attempt extraction.
std::vector<ExperimentRecord> sweep_partial_permutation(const ModelSpec& spec, const StateDict& embedded,
                                                        const Payload& truth, const LdpcCode& code,
                                                        const SpreadParams& params,
                                                        const std::vector<double>& fractions,
                                                        const std::vector<uint64_t>& seeds);

struct ExperimentConfig {
    struct DefenseCell {
        std::string kind;   // "none" | "permute" | "prune" | "retrain"
        double param = 0.0; // fraction / rate / epochs
    };
    std::vector<std::string> models{"micro-resnet"}; // "mlp" | "micro-resnet"
    std::vector<uint64_t> payload_sizes{100};
    std::string scheme = "spread";
    uint32_t lsb_bits = 1;
    SpreadParams spread;
    uint32_t ldpc_n = 256;
    uint32_t ldpc_k = 128;
    uint64_t ldpc_seed = 9;
    std::vector<DefenseCell> defenses{{"none", 0.0}, {"permute", 1.0}};
    std::vector<uint64_t> seeds{1};
    uint64_t train_seed = 7;
    uint32_t train_epochs = 8;
    double lr = 0.05;
    uint32_t retrain_epochs_lr_scale = 1; // retrain uses the same lr
    std::vector<double> sweep_fractions;  // empty = skip fig3
    std::vector<uint64_t> sweep_seeds;
    std::string out_dir = ".";

    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig load(const std::string& path);
};

struct ExperimentOutput {
    std::vector<ExperimentRecord> records;
    std::vector<ExperimentRecord> sweep_records;
    std::string results_csv_path;
    std::string table1_md_path;
    std::string fig3_csv_path; // empty when no sweep configured
};

// Runs the defense grid, writes results.csv + table1.md (+ fig3.csv when a
// sweep is configured) into config.out_dir. Deterministic given seeds;
// timing is deliberately kept out of these files.
ExperimentOutput run_experiment_matrix(const ExperimentConfig& config);

std::string format_results_csv(const std::vector<ExperimentRecord>& records);
std::string format_table1_md(const std::vector<ExperimentRecord>& records);
std::string format_fig3_csv(const std::vector<ExperimentRecord>& sweep_records);

} // namespace stegoshield
