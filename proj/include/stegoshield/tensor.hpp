#pragma once
#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace stegoshield {

// Only dtype in v1. Kept as a tag so the file format stays extensible.
enum class DType : uint8_t { f32 = 0 };

// Dense row-major float tensor. Element data is bit-exact: comparisons and
// serialization go through the raw bit pattern, never through float ==.
struct Tensor {
    std::vector<uint32_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<uint32_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        validate();
    }

    static Tensor zeros(std::vector<uint32_t> s) {
        uint64_t n = 1;
        for (uint32_t e : s) n *= e;
        return Tensor(std::move(s), std::vector<float>(n, 0.0f));
    }

    uint64_t size() const { return data.size(); }

    void validate() const {
        if (shape.empty()) throw std::invalid_argument("tensor: shape must have at least one dimension");
        uint64_t n = 1;
        for (uint32_t e : shape) {
            if (e == 0) throw std::invalid_argument("tensor: every extent must be >= 1");
            n *= e;
        }
        if (n != data.size()) throw std::invalid_argument("tensor: product(shape) != data length");
    }
};

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (size_t i = 0; i < a.data.size(); ++i) {
        if (std::bit_cast<uint32_t>(a.data[i]) != std::bit_cast<uint32_t>(b.data[i])) return false;
    }
    return true;
}

inline bool operator==(const Tensor& a, const Tensor& b) { return bit_equal(a, b); }

// Ordered named tensors. Iteration order == insertion order; names unique.
class StateDict {
public:
    using Entry = std::pair<std::string, Tensor>;

    void insert(std::string name, Tensor t) {
        if (index_.count(name)) throw std::invalid_argument("state dict: duplicate name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(t));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("state dict: missing entry '" + name + "'");
        return entries_[it->second].second;
    }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("state dict: missing entry '" + name + "'");
        return entries_[it->second].second;
    }

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const Entry& entry(size_t i) const { return entries_[i]; }
    Entry& entry(size_t i) { return entries_[i]; }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

inline bool bit_equal(const StateDict& a, const StateDict& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a.entry(i).first != b.entry(i).first) return false;
        if (!bit_equal(a.entry(i).second, b.entry(i).second)) return false;
    }
    return true;
}

} // namespace stegoshield
