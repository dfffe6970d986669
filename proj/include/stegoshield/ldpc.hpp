#pragma once
#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace stegoshield {

// Regular Gallager-ensemble LDPC code, column weight 3, systematic encoding
// (codeword = [message | parity]). H is reproducible from (n, k, seed);
// seeds that yield a singular parity block are skipped and the skip count
// is reported via `regenerations`.
class LdpcCode {
public:
    static LdpcCode make(uint32_t n, uint32_t k, uint64_t seed);

    uint32_t n() const { return n_; }
    uint32_t k() const { return k_; }
    uint64_t requested_seed() const { return requested_seed_; }
    uint64_t seed_used() const { return seed_used_; }
    uint32_t regenerations() const { return regenerations_; }

    // Rows of H carrying a 1 in column c (always 3 of them).
    const std::array<uint32_t, 3>& column_rows(uint32_t c) const { return col_rows_[c]; }
    const std::vector<uint32_t>& row_columns(uint32_t r) const { return row_cols_[r]; }

    // Message bits (0/1, length k) -> codeword bits (length n), H*c = 0.
    std::vector<uint8_t> encode(const std::vector<uint8_t>& message) const;

    struct DecodeResult {
        std::vector<uint8_t> message;  // first k bits of the final state
        std::vector<uint8_t> codeword; // full final state, length n
        bool converged = false;        // all parity checks satisfied
        uint32_t iterations = 0;
    };

    // Hard-decision bit flipping, at most 50 iterations.
    DecodeResult decode(const std::vector<uint8_t>& hard_bits) const;

    // Soft input: negative correlation means bit 1. Magnitudes are used
    // only for the initial hard decision.
    DecodeResult decode_soft(const std::vector<double>& correlations) const;

    bool parity_ok(const std::vector<uint8_t>& codeword) const;

private:
    uint32_t n_ = 0, k_ = 0;
    uint64_t requested_seed_ = 0, seed_used_ = 0;
    uint32_t regenerations_ = 0;
    std::vector<std::array<uint32_t, 3>> col_rows_;
    std::vector<std::vector<uint32_t>> row_cols_;
    // Parity generator: parity = P * message over GF(2); rows are bit-packed
    // over the k message bits.
    std::vector<std::vector<uint64_t>> parity_gen_;
};

} // namespace stegoshield
