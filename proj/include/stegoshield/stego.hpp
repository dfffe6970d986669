#pragma once
#include <cstdint>
#include <optional>
#include <vector>

#include "stegoshield/checkpoint.hpp"
#include "stegoshield/ldpc.hpp"
#include "stegoshield/payload.hpp"
#include "stegoshield/tensor.hpp"

namespace stegoshield {

struct LsbScheme {
    uint32_t n_bits = 1; // 1..8 lowest mantissa bits per element
};

struct SpreadParams {
    uint64_t seed = 1;
    double gamma = 0.35;        // gain, as a fraction of per-layer weight std (calibrated)
    uint32_t chips_per_bit = 64; // L
};

// Total embedding capacity in bits over the default (weight) selector.
uint64_t capacity(const StateDict& state, LsbScheme scheme);
uint64_t capacity(const StateDict& state, const SpreadParams& params);

// Per-layer plan shared by embedding and extraction. One slot per entry of
// the weight flatten view, in view order.
struct LayerPlan {
    uint32_t entry = 0;          // index into the StateDict
    uint64_t elements = 0;       // elements in this layer's region
    uint64_t capacity_bits = 0;  // scheme capacity (stream bits for lsb, codeword bits for spread)
    uint64_t max_body_bytes = 0; // chunk body budget after framing/coding overhead
    bool usable = false;         // header (and one code block, for spread) fits
    uint64_t assigned_bits = 0;  // bits actually embedded (0 when unused)
};

struct EmbedPlan {
    std::vector<LayerPlan> layers;
};

EmbedPlan build_lsb_plan(const StateDict& state, uint32_t n_bits);
EmbedPlan build_spread_plan(const StateDict& state, const LdpcCode& code, const SpreadParams& params);

// ±1 chip for an element position, a pure function of (seed, layer, pos) so
// embedding and extraction never need to agree on a stream cursor.
int chip_sign(uint64_t seed, uint64_t layer_ordinal, uint64_t position);

struct ChunkStatus {
    uint32_t index = 0;
    bool crc_ok = false;
    bool ldpc_converged = true; // always true for lsb
};

struct ExtractionResult {
    bool found_any = false;  // at least one plausible chunk header seen
    bool recovered = false;  // complete chunk set, every CRC ok
    std::vector<uint8_t> data;
    uint64_t recovered_bytes = 0; // bytes from CRC-clean chunks
    std::vector<ChunkStatus> chunks;
    double raw_ber = 0.0; // spread only: hard bits vs re-encoded decode output
};

StateDict embed_lsb(const StateDict& state, const Payload& payload, uint32_t n_bits);
ExtractionResult extract_lsb(const StateDict& state, uint32_t n_bits);

StateDict embed_spread(const StateDict& state, const Payload& payload, const LdpcCode& code,
                       const SpreadParams& params);
ExtractionResult extract_spread(const StateDict& state, const LdpcCode& code, const SpreadParams& params);

// Ground-truth codeword bits per view layer for a known payload (layers
// that carry no chunk get an empty vector). Only shapes of the reference
// state matter.
std::vector<std::vector<uint8_t>> planned_codeword_bits(const StateDict& reference, const Payload& payload,
                                                        const LdpcCode& code, const SpreadParams& params);

// Despreads `suspect` at the positions the plan assigned for `truth` and
// returns the bit error rate against the true codeword bits.
double spread_true_ber(const StateDict& suspect, const Payload& truth, const LdpcCode& code,
                       const SpreadParams& params);

} // namespace stegoshield
