#pragma once
#include <cstddef>
#include <cstdint>

namespace stegoshield {

// CRC-32/ISO-HDLC (Ethernet/PKZIP): reflected poly 0xEDB88320,
// init 0xFFFFFFFF, xorout 0xFFFFFFFF.
inline uint32_t crc32(const uint8_t* data, size_t length) {
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < length; ++i) {
        crc ^= static_cast<uint32_t>(data[i]);
        for (int bit = 0; bit < 8; ++bit) {
            crc = (crc & 1u) ? (crc >> 1) ^ 0xEDB88320u : crc >> 1;
        }
    }
    return crc ^ 0xFFFFFFFFu;
}

template <class Container>
uint32_t crc32(const Container& c) {
    return crc32(c.empty() ? nullptr : reinterpret_cast<const uint8_t*>(c.data()), c.size());
}

} // namespace stegoshield
