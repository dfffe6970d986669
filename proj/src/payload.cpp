#include "stegoshield/payload.hpp"

#include <algorithm>
#include <numeric>

namespace stegoshield {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

} // namespace

std::vector<uint8_t> ChunkHeader::serialize() const {
    std::vector<uint8_t> out;
    out.reserve(kSize);
    put_u16(out, kMagic);
    put_u16(out, chunk_index);
    put_u16(out, chunk_count);
    put_u16(out, chunk_len);
    put_u32(out, chunk_crc);
    return out;
}

bool ChunkHeader::parse(const uint8_t* bytes, ChunkHeader& out) {
    if (get_u16(bytes) != kMagic) return false;
    out.chunk_index = get_u16(bytes + 2);
    out.chunk_count = get_u16(bytes + 4);
    out.chunk_len = get_u16(bytes + 6);
    out.chunk_crc = get_u32(bytes + 8);
    return true;
}

std::vector<uint8_t> Chunk::serialize() const {
    std::vector<uint8_t> out = header.serialize();
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

std::vector<uint64_t> apportion_bodies(uint64_t payload_len, const std::vector<uint64_t>& max_body_bytes) {
    uint64_t total_cap = std::accumulate(max_body_bytes.begin(), max_body_bytes.end(), uint64_t{0});
    if (total_cap < payload_len) {
        throw CapacityError("payload exceeds embedding capacity", (payload_len - total_cap) * 8);
    }
    std::vector<uint64_t> body(max_body_bytes.size(), 0);
    if (max_body_bytes.empty()) throw CapacityError("no usable layers", payload_len * 8);

    // Largest-remainder apportionment over the layers with nonzero budget,
    // re-run whenever a layer hits its cap.
    std::vector<size_t> open;
    for (size_t i = 0; i < max_body_bytes.size(); ++i) {
        if (max_body_bytes[i] > 0) open.push_back(i);
    }
    uint64_t remaining = payload_len;
    while (remaining > 0) {
        uint64_t open_cap = 0;
        for (size_t i : open) open_cap += max_body_bytes[i] - body[i];
        std::vector<std::pair<double, size_t>> remainders;
        uint64_t assigned = 0;
        for (size_t i : open) {
            double ideal = double(remaining) * double(max_body_bytes[i] - body[i]) / double(open_cap);
            uint64_t take = std::min<uint64_t>(uint64_t(ideal), max_body_bytes[i] - body[i]);
            body[i] += take;
            assigned += take;
            remainders.emplace_back(-(ideal - double(take)), i);
        }
        remaining -= assigned;
        // Hand out the leftover units by largest fractional part.
        std::sort(remainders.begin(), remainders.end());
        for (const auto& [neg_frac, i] : remainders) {
            (void)neg_frac;
            if (remaining == 0) break;
            if (body[i] < max_body_bytes[i]) {
                ++body[i];
                --remaining;
            }
        }
        std::erase_if(open, [&](size_t i) { return body[i] == max_body_bytes[i]; });
        if (remaining > 0 && open.empty()) {
            throw CapacityError("payload exceeds embedding capacity", remaining * 8);
        }
    }
    // Zero-length payloads still emit a single header-only chunk.
    if (payload_len == 0) {
        // body stays all-zero; caller places one empty chunk in the first
        // usable layer.
    }
    return body;
}

std::vector<Chunk> chunk_payload(const Payload& payload, const std::vector<uint64_t>& max_body_bytes) {
    auto bodies = apportion_bodies(payload.length(), max_body_bytes);
    std::vector<Chunk> chunks;
    uint64_t offset = 0;
    for (size_t i = 0; i < bodies.size(); ++i) {
        bool empty_payload_slot = payload.length() == 0 && chunks.empty() && max_body_bytes[i] > 0;
        if (bodies[i] == 0 && !empty_payload_slot) continue;
        if (bodies[i] > 0xFFFF) throw CapacityError("chunk body exceeds 65535 bytes", 0);
        Chunk c;
        c.body.assign(payload.data.begin() + offset, payload.data.begin() + offset + bodies[i]);
        offset += bodies[i];
        c.header.chunk_index = static_cast<uint16_t>(chunks.size());
        c.header.chunk_len = static_cast<uint16_t>(c.body.size());
        c.header.chunk_crc = crc32(c.body);
        chunks.push_back(std::move(c));
        if (empty_payload_slot) break;
    }
    for (auto& c : chunks) c.header.chunk_count = static_cast<uint16_t>(chunks.size());
    return chunks;
}

} // namespace stegoshield
