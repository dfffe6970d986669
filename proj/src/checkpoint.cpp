#include "stegoshield/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace stegoshield {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

struct Reader {
    std::span<const uint8_t> bytes;
    size_t pos = 0;
    std::string context;

    void need(size_t n) const {
        if (pos + n > bytes.size()) {
            throw CheckpointError("checkpoint: truncated file" +
                                  (context.empty() ? std::string() : " in entry '" + context + "'"));
        }
    }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

} // namespace

std::vector<uint8_t> write_checkpoint(const StateDict& state) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(state.size()));
    for (const auto& [name, tensor] : state) {
        if (name.size() > 0xFFFF) throw CheckpointError("checkpoint: name longer than 65535 bytes: '" + name + "'");
        tensor.validate();
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<uint8_t>(DType::f32));
        if (tensor.shape.size() > 0xFF) throw CheckpointError("checkpoint: too many dimensions in '" + name + "'");
        out.push_back(static_cast<uint8_t>(tensor.shape.size()));
        for (uint32_t e : tensor.shape) put_u32(out, e);
        for (float f : tensor.data) put_u32(out, std::bit_cast<uint32_t>(f));
    }
    return out;
}

StateDict read_checkpoint(std::span<const uint8_t> bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic");
    r.pos = 4;
    uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }
    uint32_t count = r.u32();
    StateDict state;
    for (uint32_t i = 0; i < count; ++i) {
        r.context.clear();
        uint16_t name_len = r.u16();
        r.need(name_len);
        std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
        r.pos += name_len;
        r.context = name;
        uint8_t dtype = r.u8();
        if (dtype != static_cast<uint8_t>(DType::f32)) {
            throw CheckpointError("checkpoint: unknown dtype code " + std::to_string(dtype) + " in entry '" + name + "'");
        }
        uint8_t ndim = r.u8();
        if (ndim == 0) throw CheckpointError("checkpoint: zero-dimensional tensor in entry '" + name + "'");
        std::vector<uint32_t> shape(ndim);
        uint64_t n = 1;
        for (uint8_t d = 0; d < ndim; ++d) {
            shape[d] = r.u32();
            if (shape[d] == 0) throw CheckpointError("checkpoint: zero extent in entry '" + name + "'");
            n *= shape[d];
        }
        std::vector<float> data(n);
        for (uint64_t j = 0; j < n; ++j) data[j] = std::bit_cast<float>(r.u32());
        if (state.contains(name)) throw CheckpointError("checkpoint: duplicate name '" + name + "'");
        state.insert(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (r.pos != bytes.size()) throw CheckpointError("checkpoint: trailing bytes after last entry");
    return state;
}

void save_checkpoint_file(const StateDict& state, const std::string& path) {
    auto bytes = write_checkpoint(state);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

StateDict load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return read_checkpoint(bytes);
}

FlatView::FlatView(const StateDict& state, const std::function<bool(const std::string&)>& selector) {
    for (size_t i = 0; i < state.size(); ++i) {
        if (!selector(state.entry(i).first)) continue;
        entries_.push_back(static_cast<uint32_t>(i));
        starts_.push_back(total_);
        sizes_.push_back(state.entry(i).second.size());
        total_ += sizes_.back();
    }
    if (entries_.empty()) throw std::invalid_argument("flatten_view: selector matches no entries");
}

FlatPosition FlatView::position(uint64_t flat) const {
    if (flat >= total_) throw std::out_of_range("flatten_view: position out of range");
    // Entries are few; linear scan is fine and keeps the mapping obvious.
    size_t i = 0;
    while (flat >= starts_[i] + sizes_[i]) ++i;
    return FlatPosition{entries_[i], flat - starts_[i]};
}

FlatView flatten_view(const StateDict& state, const std::function<bool(const std::string&)>& selector) {
    return FlatView(state, selector);
}

std::function<bool(const std::string&)> weight_selector(const StateDict& state) {
    bool any_weight = false;
    for (const auto& [name, t] : state) {
        (void)t;
        if (name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0) {
            any_weight = true;
            break;
        }
    }
    if (!any_weight) {
        return [](const std::string&) { return true; };
    }
    return [](const std::string& name) {
        return name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    };
}

} // namespace stegoshield
