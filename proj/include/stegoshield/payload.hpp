#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stegoshield/crc32.hpp"

namespace stegoshield {

struct Payload {
    std::vector<uint8_t> data;
    uint32_t checksum = 0; // CRC-32 over data

    static Payload from_bytes(std::vector<uint8_t> bytes) {
        Payload p;
        p.checksum = crc32(bytes);
        p.data = std::move(bytes);
        return p;
    }
    uint64_t length() const { return data.size(); }
};

// 12-byte fixed layout, little-endian:
//   magic u16 | chunk_index u16 | chunk_count u16 | chunk_len u16 | chunk_crc u32
struct ChunkHeader {
    static constexpr uint16_t kMagic = 0x4353; // "SC"
    static constexpr size_t kSize = 12;

    uint16_t chunk_index = 0;
    uint16_t chunk_count = 0;
    uint16_t chunk_len = 0;
    uint32_t chunk_crc = 0;

    std::vector<uint8_t> serialize() const;
    // Parses 12 bytes; returns false if the magic does not match.
    static bool parse(const uint8_t* bytes, ChunkHeader& out);
    bool plausible() const { return chunk_count > 0 && chunk_index < chunk_count; }
};

struct Chunk {
    ChunkHeader header;
    std::vector<uint8_t> body;

    std::vector<uint8_t> serialize() const; // header followed by body
};

struct CapacityError : std::runtime_error {
    uint64_t deficit_bits;
    CapacityError(const std::string& msg, uint64_t deficit)
        : std::runtime_error(msg + " (deficit: " + std::to_string(deficit) + " bits)"), deficit_bits(deficit) {}
};

// Splits payload bytes across layers proportionally to each layer's maximum
// body size (largest-remainder apportionment, ties to the earlier layer).
// Slot i of the result is the body size for layer i; zero means the layer
// carries no chunk. Throws CapacityError when the payload does not fit.
std::vector<uint64_t> apportion_bodies(uint64_t payload_len, const std::vector<uint64_t>& max_body_bytes);

// Chunks in layer order; bodies concatenated in chunk_index order reproduce
// payload.data. max_body_bytes[i] is layer i's body budget (0 = unusable).
std::vector<Chunk> chunk_payload(const Payload& payload, const std::vector<uint64_t>& max_body_bytes);

} // namespace stegoshield
