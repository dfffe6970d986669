#include "stegoshield/stego.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "stegoshield/rng.hpp"

namespace stegoshield {

namespace {

std::vector<uint8_t> to_bits(const std::vector<uint8_t>& bytes) {
    std::vector<uint8_t> bits(bytes.size() * 8);
    for (size_t i = 0; i < bytes.size(); ++i) {
        for (int b = 0; b < 8; ++b) bits[i * 8 + b] = (bytes[i] >> b) & 1; // LSB-first
    }
    return bits;
}

std::vector<uint8_t> to_bytes(const std::vector<uint8_t>& bits, size_t byte_count) {
    std::vector<uint8_t> bytes(byte_count, 0);
    for (size_t i = 0; i < byte_count * 8 && i < bits.size(); ++i) {
        if (bits[i]) bytes[i / 8] |= uint8_t(1u << (i % 8));
    }
    return bytes;
}

double layer_std(const Tensor& t) {
    double mean = 0.0;
    for (float v : t.data) mean += v;
    mean /= double(t.size());
    double var = 0.0;
    for (float v : t.data) var += (v - mean) * (v - mean);
    return std::sqrt(var / double(t.size()));
}

std::vector<uint64_t> max_bodies(const EmbedPlan& plan) {
    std::vector<uint64_t> out;
    for (const auto& l : plan.layers) out.push_back(l.usable ? l.max_body_bytes : 0);
    return out;
}

// Maps chunk order to plan-layer order, mirroring chunk_payload.
std::vector<size_t> chunk_layer_assignment(const EmbedPlan& plan, const std::vector<uint64_t>& bodies,
                                           uint64_t payload_len) {
    std::vector<size_t> layers;
    for (size_t i = 0; i < bodies.size(); ++i) {
        bool empty_slot = payload_len == 0 && layers.empty() && plan.layers[i].usable &&
                          plan.layers[i].max_body_bytes > 0;
        if (bodies[i] > 0 || empty_slot) layers.push_back(i);
        if (empty_slot) break;
    }
    return layers;
}

struct FoundChunk {
    ChunkStatus status;
    uint16_t declared_count = 0;
    std::vector<uint8_t> body;
};

ExtractionResult finish_extraction(std::vector<FoundChunk>& found) {
    ExtractionResult result;
    result.found_any = !found.empty();
    if (found.empty()) return result;
    for (auto& f : found) {
        if (f.status.crc_ok) result.recovered_bytes += f.body.size();
    }
    // Reassemble in chunk_index order. Recovery needs the set to be exactly
    // 0..count-1 with every header agreeing on the count and every CRC ok.
    uint16_t count = static_cast<uint16_t>(found.size());
    std::vector<const std::vector<uint8_t>*> ordered(count, nullptr);
    bool complete = true;
    for (auto& f : found) {
        result.chunks.push_back(f.status);
        if (f.declared_count != count || f.status.index >= count || ordered[f.status.index] != nullptr) {
            complete = false;
        } else {
            ordered[f.status.index] = &f.body;
        }
        complete = complete && f.status.crc_ok;
    }
    if (complete) {
        for (const auto* body : ordered) result.data.insert(result.data.end(), body->begin(), body->end());
        result.recovered = true;
    }
    return result;
}

} // namespace

int chip_sign(uint64_t seed, uint64_t layer_ordinal, uint64_t position) {
    uint64_t h = derive_stream(derive_stream(seed, 0xC41F0ull + layer_ordinal), position);
    return (h >> 63) ? -1 : 1;
}

uint64_t capacity(const StateDict& state, LsbScheme scheme) {
    if (state.empty()) throw std::invalid_argument("capacity: state is empty");
    FlatView view = flatten_view(state, weight_selector(state));
    return view.total_elements() * scheme.n_bits;
}

uint64_t capacity(const StateDict& state, const SpreadParams& params) {
    if (state.empty()) throw std::invalid_argument("capacity: state is empty");
    if (params.chips_per_bit < 1) throw std::invalid_argument("capacity: chips_per_bit must be >= 1");
    FlatView view = flatten_view(state, weight_selector(state));
    return view.total_elements() / params.chips_per_bit;
}

EmbedPlan build_lsb_plan(const StateDict& state, uint32_t n_bits) {
    if (n_bits < 1 || n_bits > 8) throw std::invalid_argument("lsb: n_bits must be in [1,8]");
    FlatView view = flatten_view(state, weight_selector(state));
    EmbedPlan plan;
    for (size_t i = 0; i < view.entry_count(); ++i) {
        LayerPlan l;
        l.entry = view.entry_index(i);
        l.elements = view.entry_size(i);
        l.capacity_bits = l.elements * n_bits;
        uint64_t cap_bytes = l.capacity_bits / 8;
        l.usable = cap_bytes >= ChunkHeader::kSize;
        l.max_body_bytes = l.usable ? std::min<uint64_t>(cap_bytes - ChunkHeader::kSize, 0xFFFF) : 0;
        plan.layers.push_back(l);
    }
    return plan;
}

EmbedPlan build_spread_plan(const StateDict& state, const LdpcCode& code, const SpreadParams& params) {
    if (!(params.gamma >= 0.0)) throw std::invalid_argument("spread: gamma must be positive");
    if (params.chips_per_bit < 1) throw std::invalid_argument("spread: chips_per_bit must be >= 1");
    FlatView view = flatten_view(state, weight_selector(state));
    EmbedPlan plan;
    for (size_t i = 0; i < view.entry_count(); ++i) {
        LayerPlan l;
        l.entry = view.entry_index(i);
        l.elements = view.entry_size(i);
        uint64_t codeword_bits = l.elements / params.chips_per_bit;
        uint64_t blocks = codeword_bits / code.n();
        l.capacity_bits = blocks * code.n();
        uint64_t msg_bytes = blocks * code.k() / 8;
        l.usable = msg_bytes >= ChunkHeader::kSize;
        l.max_body_bytes = l.usable ? std::min<uint64_t>(msg_bytes - ChunkHeader::kSize, 0xFFFF) : 0;
        plan.layers.push_back(l);
    }
    return plan;
}

StateDict embed_lsb(const StateDict& state, const Payload& payload, uint32_t n_bits) {
    EmbedPlan plan = build_lsb_plan(state, n_bits);
    auto bodies = apportion_bodies(payload.length(), max_bodies(plan));
    auto chunks = chunk_payload(payload, max_bodies(plan));
    auto layer_of = chunk_layer_assignment(plan, bodies, payload.length());

    StateDict out = state;
    for (size_t c = 0; c < chunks.size(); ++c) {
        const LayerPlan& l = plan.layers[layer_of[c]];
        Tensor& tensor = out.entry(l.entry).second;
        std::vector<uint8_t> bits = to_bits(chunks[c].serialize());
        for (size_t t = 0; t < bits.size(); ++t) {
            uint64_t elem = t / n_bits;
            uint32_t bit_pos = uint32_t(t % n_bits);
            uint32_t raw = std::bit_cast<uint32_t>(tensor.data[elem]);
            raw = (raw & ~(1u << bit_pos)) | (uint32_t(bits[t]) << bit_pos);
            tensor.data[elem] = std::bit_cast<float>(raw);
        }
    }
    return out;
}

ExtractionResult extract_lsb(const StateDict& state, uint32_t n_bits) {
    EmbedPlan plan = build_lsb_plan(state, n_bits);
    std::vector<FoundChunk> found;
    for (const LayerPlan& l : plan.layers) {
        if (!l.usable) continue;
        const Tensor& tensor = state.entry(l.entry).second;
        auto read_bits = [&](uint64_t bit_count) {
            std::vector<uint8_t> bits(bit_count);
            for (uint64_t t = 0; t < bit_count; ++t) {
                uint32_t raw = std::bit_cast<uint32_t>(tensor.data[t / n_bits]);
                bits[t] = (raw >> (t % n_bits)) & 1u;
            }
            return bits;
        };
        auto header_bytes = to_bytes(read_bits(ChunkHeader::kSize * 8), ChunkHeader::kSize);
        ChunkHeader header;
        if (!ChunkHeader::parse(header_bytes.data(), header) || !header.plausible()) continue;
        if (header.chunk_len > l.max_body_bytes) continue;
        uint64_t total_bits = (ChunkHeader::kSize + header.chunk_len) * 8;
        auto stream = to_bytes(read_bits(total_bits), ChunkHeader::kSize + header.chunk_len);
        std::vector<uint8_t> body(stream.begin() + ChunkHeader::kSize, stream.end());
        FoundChunk f;
        f.status.index = header.chunk_index;
        f.status.crc_ok = crc32(body) == header.chunk_crc;
        f.declared_count = header.chunk_count;
        f.body = std::move(body);
        found.push_back(std::move(f));
    }
    return finish_extraction(found);
}

namespace {

std::vector<uint8_t> chunk_codeword_bits(const Chunk& chunk, const LdpcCode& code) {
    std::vector<uint8_t> msg_bits = to_bits(chunk.serialize());
    size_t blocks = (msg_bits.size() + code.k() - 1) / code.k();
    msg_bits.resize(blocks * code.k(), 0);
    std::vector<uint8_t> out;
    for (size_t b = 0; b < blocks; ++b) {
        std::vector<uint8_t> m(msg_bits.begin() + b * code.k(), msg_bits.begin() + (b + 1) * code.k());
        auto cw = code.encode(m);
        out.insert(out.end(), cw.begin(), cw.end());
    }
    return out;
}

struct SpreadLayout {
    EmbedPlan plan;
    std::vector<std::vector<uint8_t>> layer_bits; // codeword bits per plan layer
};

SpreadLayout spread_layout(const StateDict& state, const Payload& payload, const LdpcCode& code,
                           const SpreadParams& params) {
    SpreadLayout layout;
    layout.plan = build_spread_plan(state, code, params);
    auto bodies = apportion_bodies(payload.length(), max_bodies(layout.plan));
    auto chunks = chunk_payload(payload, max_bodies(layout.plan));
    auto layer_of = chunk_layer_assignment(layout.plan, bodies, payload.length());
    layout.layer_bits.resize(layout.plan.layers.size());
    for (size_t c = 0; c < chunks.size(); ++c) {
        auto bits = chunk_codeword_bits(chunks[c], code);
        if (bits.size() > layout.plan.layers[layer_of[c]].capacity_bits) {
            throw CapacityError("spread: codeword exceeds layer capacity",
                                bits.size() - layout.plan.layers[layer_of[c]].capacity_bits);
        }
        layout.plan.layers[layer_of[c]].assigned_bits = bits.size();
        layout.layer_bits[layer_of[c]] = std::move(bits);
    }
    return layout;
}

} // namespace

StateDict embed_spread(const StateDict& state, const Payload& payload, const LdpcCode& code,
                       const SpreadParams& params) {
    SpreadLayout layout = spread_layout(state, payload, code, params);
    StateDict out = state;
    for (size_t li = 0; li < layout.plan.layers.size(); ++li) {
        const auto& bits = layout.layer_bits[li];
        if (bits.empty()) continue;
        Tensor& tensor = out.entry(layout.plan.layers[li].entry).second;
        double gain = params.gamma * layer_std(tensor);
        if (gain == 0.0) continue; // gamma -> 0 limit: leave bits untouched
        for (size_t t = 0; t < bits.size(); ++t) {
            double symbol = bits[t] ? -1.0 : 1.0;
            for (uint64_t j = 0; j < params.chips_per_bit; ++j) {
                uint64_t pos = uint64_t(t) * params.chips_per_bit + j;
                double chip = chip_sign(params.seed, li, pos);
                tensor.data[pos] = static_cast<float>(double(tensor.data[pos]) + gain * symbol * chip);
            }
        }
    }
    return out;
}

namespace {

std::vector<double> despread(const Tensor& tensor, const SpreadParams& params, size_t layer_ordinal,
                             uint64_t bit_count, uint64_t bit_offset = 0) {
    std::vector<double> corr(bit_count, 0.0);
    for (uint64_t t = 0; t < bit_count; ++t) {
        double acc = 0.0;
        for (uint64_t j = 0; j < params.chips_per_bit; ++j) {
            uint64_t pos = (bit_offset + t) * params.chips_per_bit + j;
            acc += double(tensor.data[pos]) * chip_sign(params.seed, layer_ordinal, pos);
        }
        corr[t] = acc;
    }
    return corr;
}

} // namespace

ExtractionResult extract_spread(const StateDict& state, const LdpcCode& code, const SpreadParams& params) {
    EmbedPlan plan = build_spread_plan(state, code, params);
    std::vector<FoundChunk> found;
    uint64_t ber_mismatch = 0, ber_total = 0;
    for (size_t li = 0; li < plan.layers.size(); ++li) {
        const LayerPlan& l = plan.layers[li];
        if (!l.usable) continue;
        const Tensor& tensor = state.entry(l.entry).second;
        const uint64_t layer_blocks = l.capacity_bits / code.n();
        bool all_converged = true;
        std::vector<uint8_t> message_bits;
        auto decode_block = [&](uint64_t blk) {
            auto corr = despread(tensor, params, li, code.n(), blk * code.n());
            auto res = code.decode_soft(corr);
            all_converged = all_converged && res.converged;
            message_bits.insert(message_bits.end(), res.message.begin(), res.message.end());
            for (uint32_t b = 0; b < code.n(); ++b) {
                ber_mismatch += (corr[b] < 0.0 ? 1 : 0) != res.codeword[b];
            }
            ber_total += code.n();
        };
        // The 12-byte header may span several codeword blocks; decode enough
        // of them before trusting any header field.
        uint64_t header_blocks = (ChunkHeader::kSize * 8 + code.k() - 1) / code.k();
        if (header_blocks > layer_blocks) continue;
        for (uint64_t blk = 0; blk < header_blocks; ++blk) decode_block(blk);
        auto header_bytes = to_bytes(message_bits, ChunkHeader::kSize);
        ChunkHeader header;
        if (!ChunkHeader::parse(header_bytes.data(), header) || !header.plausible()) continue;
        if (header.chunk_len > l.max_body_bytes) continue;
        uint64_t msg_bits = (ChunkHeader::kSize + header.chunk_len) * 8;
        uint64_t blocks = (msg_bits + code.k() - 1) / code.k();
        for (uint64_t blk = header_blocks; blk < blocks; ++blk) decode_block(blk);
        auto stream = to_bytes(message_bits, ChunkHeader::kSize + header.chunk_len);
        std::vector<uint8_t> body(stream.begin() + ChunkHeader::kSize, stream.end());
        FoundChunk f;
        f.status.index = header.chunk_index;
        f.status.crc_ok = crc32(body) == header.chunk_crc;
        f.status.ldpc_converged = all_converged;
        f.declared_count = header.chunk_count;
        f.body = std::move(body);
        found.push_back(std::move(f));
    }
    ExtractionResult result = finish_extraction(found);
    result.raw_ber = ber_total == 0 ? 0.0 : double(ber_mismatch) / double(ber_total);
    return result;
}

std::vector<std::vector<uint8_t>> planned_codeword_bits(const StateDict& reference, const Payload& payload,
                                                        const LdpcCode& code, const SpreadParams& params) {
    return spread_layout(reference, payload, code, params).layer_bits;
}

double spread_true_ber(const StateDict& suspect, const Payload& truth, const LdpcCode& code,
                       const SpreadParams& params) {
    SpreadLayout layout = spread_layout(suspect, truth, code, params);
    uint64_t mismatch = 0, total = 0;
    for (size_t li = 0; li < layout.plan.layers.size(); ++li) {
        const auto& bits = layout.layer_bits[li];
        if (bits.empty()) continue;
        const Tensor& tensor = suspect.entry(layout.plan.layers[li].entry).second;
        auto corr = despread(tensor, params, li, bits.size());
        for (size_t t = 0; t < bits.size(); ++t) {
            mismatch += (corr[t] < 0.0 ? 1 : 0) != bits[t];
        }
        total += bits.size();
    }
    return total == 0 ? 0.0 : double(mismatch) / double(total);
}

} // namespace stegoshield
