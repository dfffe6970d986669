#pragma once
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stegoshield/tensor.hpp"

namespace stegoshield {

// Checkpoint wire format (all integers little-endian):
//   magic "NNC1" (4 bytes) | version u32 = 1 | entry_count u32
//   per entry: name_len u16 | name bytes | dtype u8 | ndim u8 |
//              ndim x u32 extents | raw element bytes (LE float bits)
inline constexpr char kCheckpointMagic[4] = {'N', 'N', 'C', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<uint8_t> write_checkpoint(const StateDict& state);
StateDict read_checkpoint(std::span<const uint8_t> bytes);

void save_checkpoint_file(const StateDict& state, const std::string& path);
StateDict load_checkpoint_file(const std::string& path);

// Stable enumeration of element positions over the entries matched by the
// selector, in state-dict order. Both embedding and extraction walk this.
struct FlatPosition {
    uint32_t entry;
    uint64_t offset;
};

class FlatView {
public:
    FlatView(const StateDict& state, const std::function<bool(const std::string&)>& selector);

    uint64_t total_elements() const { return total_; }
    size_t entry_count() const { return entries_.size(); }
    uint32_t entry_index(size_t i) const { return entries_[i]; }
    uint64_t entry_size(size_t i) const { return sizes_[i]; }
    uint64_t entry_start(size_t i) const { return starts_[i]; }

    FlatPosition position(uint64_t flat) const;

    float get(const StateDict& state, FlatPosition p) const {
        return state.entry(p.entry).second.data[p.offset];
    }
    void set(StateDict& state, FlatPosition p, float v) const {
        state.entry(p.entry).second.data[p.offset] = v;
    }

private:
    std::vector<uint32_t> entries_;
    std::vector<uint64_t> sizes_;
    std::vector<uint64_t> starts_;
    uint64_t total_ = 0;
};

FlatView flatten_view(const StateDict& state, const std::function<bool(const std::string&)>& selector);

// Default embedding/pruning target: entries named "*.weight" when any
// exist, otherwise every entry (generic states without the naming scheme).
std::function<bool(const std::string&)> weight_selector(const StateDict& state);

} // namespace stegoshield
