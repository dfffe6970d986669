#include "stegoshield/ldpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stegoshield/rng.hpp"

namespace stegoshield {

namespace {

// GF(2) Gauss-Jordan inversion of a square bit matrix given as packed rows.
// Returns empty on singular input.
std::vector<std::vector<uint64_t>> gf2_invert(std::vector<std::vector<uint64_t>> m, uint32_t dim) {
    size_t words = (dim + 63) / 64;
    std::vector<std::vector<uint64_t>> inv(dim, std::vector<uint64_t>(words, 0));
    for (uint32_t i = 0; i < dim; ++i) inv[i][i / 64] = 1ull << (i % 64);
    for (uint32_t col = 0; col < dim; ++col) {
        uint32_t pivot = col;
        while (pivot < dim && !((m[pivot][col / 64] >> (col % 64)) & 1ull)) ++pivot;
        if (pivot == dim) return {};
        std::swap(m[col], m[pivot]);
        std::swap(inv[col], inv[pivot]);
        for (uint32_t r = 0; r < dim; ++r) {
            if (r == col) continue;
            if ((m[r][col / 64] >> (col % 64)) & 1ull) {
                for (size_t w = 0; w < words; ++w) {
                    m[r][w] ^= m[col][w];
                    inv[r][w] ^= inv[col][w];
                }
            }
        }
    }
    return inv;
}

} // namespace

LdpcCode LdpcCode::make(uint32_t n, uint32_t k, uint64_t seed) {
    if (n <= k || k == 0) throw std::invalid_argument("ldpc: require n > k > 0");
    uint32_t rows = n - k;
    if (rows < 3) throw std::invalid_argument("ldpc: need at least 3 check rows for column weight 3");

    for (uint64_t attempt_seed = seed;; ++attempt_seed) {
        SplitMix64 rng(derive_stream(attempt_seed, 0x1D9Cu));
        std::vector<std::array<uint32_t, 3>> cols(n);
        bool bad = false;
        for (uint32_t c = 0; c < n && !bad; ++c) {
            // Draw distinct row triples. Duplicate columns are always
            // rejected (they would defeat single-error correction); columns
            // sharing two rows (4-cycles) are rejected on a best-effort
            // basis since they only degrade multi-error decoding.
            bool placed = false;
            for (int tries = 0; tries < 400 && !placed; ++tries) {
                std::array<uint32_t, 3> pick{};
                pick[0] = static_cast<uint32_t>(rng.next_below(rows));
                do {
                    pick[1] = static_cast<uint32_t>(rng.next_below(rows));
                } while (pick[1] == pick[0]);
                do {
                    pick[2] = static_cast<uint32_t>(rng.next_below(rows));
                } while (pick[2] == pick[0] || pick[2] == pick[1]);
                std::sort(pick.begin(), pick.end());
                int shared_limit = tries < 200 ? 2 : 3; // relax to "no duplicates" late
                bool clash = false;
                for (uint32_t p = 0; p < c && !clash; ++p) {
                    int shared = 0;
                    for (uint32_t a : pick) {
                        for (uint32_t b : cols[p]) {
                            if (a == b) ++shared;
                        }
                    }
                    clash = shared >= shared_limit;
                }
                if (!clash) {
                    cols[c] = pick;
                    placed = true;
                }
            }
            bad = !placed;
        }
        if (bad) continue;

        // Systematic encoder: with H = [A | B] (B the last n-k columns),
        // parity = B^-1 * A * message.
        size_t bwords = (rows + 63) / 64;
        std::vector<std::vector<uint64_t>> bmat(rows, std::vector<uint64_t>(bwords, 0));
        for (uint32_t c = k; c < n; ++c) {
            for (uint32_t r : cols[c]) bmat[r][(c - k) / 64] |= 1ull << ((c - k) % 64);
        }
        auto binv = gf2_invert(std::move(bmat), rows);
        if (binv.empty()) continue;

        size_t kwords = (k + 63) / 64;
        std::vector<std::vector<uint64_t>> amat(rows, std::vector<uint64_t>(kwords, 0));
        for (uint32_t c = 0; c < k; ++c) {
            for (uint32_t r : cols[c]) amat[r][c / 64] |= 1ull << (c % 64);
        }
        LdpcCode code;
        code.n_ = n;
        code.k_ = k;
        code.requested_seed_ = seed;
        code.seed_used_ = attempt_seed;
        code.regenerations_ = static_cast<uint32_t>(attempt_seed - seed);
        code.col_rows_ = std::move(cols);
        code.row_cols_.assign(rows, {});
        for (uint32_t c = 0; c < n; ++c) {
            for (uint32_t r : code.col_rows_[c]) code.row_cols_[r].push_back(c);
        }
        // parity_gen_[r] = row r of B^-1 * A.
        code.parity_gen_.assign(rows, std::vector<uint64_t>(kwords, 0));
        for (uint32_t r = 0; r < rows; ++r) {
            for (uint32_t j = 0; j < rows; ++j) {
                if ((binv[r][j / 64] >> (j % 64)) & 1ull) {
                    for (size_t w = 0; w < kwords; ++w) code.parity_gen_[r][w] ^= amat[j][w];
                }
            }
        }
        return code;
    }
}

std::vector<uint8_t> LdpcCode::encode(const std::vector<uint8_t>& message) const {
    if (message.size() != k_) throw std::invalid_argument("ldpc: message length != k");
    std::vector<uint8_t> codeword(n_, 0);
    std::copy(message.begin(), message.end(), codeword.begin());
    size_t kwords = (k_ + 63) / 64;
    std::vector<uint64_t> packed(kwords, 0);
    for (uint32_t i = 0; i < k_; ++i) {
        if (message[i]) packed[i / 64] |= 1ull << (i % 64);
    }
    for (uint32_t r = 0; r < n_ - k_; ++r) {
        uint64_t acc = 0;
        for (size_t w = 0; w < kwords; ++w) acc ^= parity_gen_[r][w] & packed[w];
        codeword[k_ + r] = static_cast<uint8_t>(__builtin_popcountll(acc) & 1);
    }
    return codeword;
}

bool LdpcCode::parity_ok(const std::vector<uint8_t>& codeword) const {
    for (uint32_t r = 0; r < n_ - k_; ++r) {
        uint8_t s = 0;
        for (uint32_t c : row_cols_[r]) s ^= codeword[c];
        if (s) return false;
    }
    return true;
}

LdpcCode::DecodeResult LdpcCode::decode(const std::vector<uint8_t>& hard_bits) const {
    if (hard_bits.size() != n_) throw std::invalid_argument("ldpc: input length != n");
    constexpr uint32_t kMaxIterations = 50;
    std::vector<uint8_t> bits = hard_bits;
    std::vector<uint8_t> syndrome(n_ - k_);
    DecodeResult result;
    for (uint32_t iter = 0; iter <= kMaxIterations; ++iter) {
        bool clean = true;
        for (uint32_t r = 0; r < n_ - k_; ++r) {
            uint8_t s = 0;
            for (uint32_t c : row_cols_[r]) s ^= bits[c];
            syndrome[r] = s;
            clean = clean && !s;
        }
        result.iterations = iter;
        if (clean) {
            result.converged = true;
            break;
        }
        if (iter == kMaxIterations) break;
        // Flip every bit with the maximal number of unsatisfied checks.
        uint32_t best = 0;
        std::vector<uint8_t> unsat(n_, 0);
        for (uint32_t c = 0; c < n_; ++c) {
            uint8_t u = 0;
            for (uint32_t r : col_rows_[c]) u = static_cast<uint8_t>(u + syndrome[r]);
            unsat[c] = u;
            best = std::max<uint32_t>(best, u);
        }
        if (best == 0) break;
        for (uint32_t c = 0; c < n_; ++c) {
            if (unsat[c] == best) bits[c] ^= 1;
        }
    }
    result.codeword = std::move(bits);
    result.message.assign(result.codeword.begin(), result.codeword.begin() + k_);
    return result;
}

LdpcCode::DecodeResult LdpcCode::decode_soft(const std::vector<double>& correlations) const {
    std::vector<uint8_t> hard(correlations.size());
    for (size_t i = 0; i < correlations.size(); ++i) hard[i] = correlations[i] < 0.0 ? 1 : 0;
    DecodeResult parallel = decode(hard);
    if (parallel.converged) return parallel;

    // Weighted bit flipping fallback: one flip per iteration, choosing the
    // bit whose unsatisfied checks carry the least-reliable support. Each
    // check's weight is the smallest |correlation| among its bits.
    constexpr uint32_t kMaxFlips = 200;
    std::vector<double> check_weight(n_ - k_, 0.0);
    for (uint32_t r = 0; r < n_ - k_; ++r) {
        double w = std::numeric_limits<double>::infinity();
        for (uint32_t c : row_cols_[r]) w = std::min(w, std::abs(correlations[c]));
        check_weight[r] = w;
    }
    std::vector<uint8_t> bits = hard;
    std::vector<uint8_t> syndrome(n_ - k_);
    DecodeResult result;
    for (uint32_t iter = 0; iter <= kMaxFlips; ++iter) {
        bool clean = true;
        for (uint32_t r = 0; r < n_ - k_; ++r) {
            uint8_t s = 0;
            for (uint32_t c : row_cols_[r]) s ^= bits[c];
            syndrome[r] = s;
            clean = clean && !s;
        }
        result.iterations = iter;
        if (clean) {
            result.converged = true;
            break;
        }
        if (iter == kMaxFlips) break;
        uint32_t best_bit = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (uint32_t c = 0; c < n_; ++c) {
            double e = 0.0;
            for (uint32_t r : col_rows_[c]) {
                e += (syndrome[r] ? 1.0 : -1.0) * check_weight[r];
            }
            e -= std::abs(correlations[c]);
            if (e > best_score) {
                best_score = e;
                best_bit = c;
            }
        }
        bits[best_bit] ^= 1;
    }
    if (!result.converged) return parallel; // keep the parallel decoder's state
    result.codeword = std::move(bits);
    result.message.assign(result.codeword.begin(), result.codeword.begin() + k_);
    return result;
}

} // namespace stegoshield
