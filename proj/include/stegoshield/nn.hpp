#pragma once
#include <cstdint>
#include <vector>

#include "stegoshield/model.hpp"
#include "stegoshield/tensor.hpp"

namespace stegoshield {

struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<uint32_t> labels;
    uint32_t class_count = 0;
};

// Procedurally generated Gaussian-blob images, 1x8x8, 8 classes.
Dataset make_blob_dataset(size_t count, uint64_t seed, uint32_t class_count = 8);

// Deterministic forward pass. Dot products and convolution sums accumulate
// in double precision in a fixed left-to-right order (input features /
// kernel window row-major, channels outermost), so results are
// bit-reproducible. Hooks are applied to the named layers' outputs right
// after the bias add.
Tensor forward(const ModelSpec& spec, const StateDict& state, const HookSet& hooks, const Tensor& input);

// Plain SGD (no momentum), cross-entropy on softmax of the logits.
// Deterministic given the seed: fixed shuffle order, fixed accumulation
// order, fixed batch size of 32.
StateDict train_sgd(const ModelSpec& spec, const StateDict& state, const Dataset& dataset, uint32_t epochs,
                    double lr, uint64_t seed);

// Fraction of argmax-correct predictions; ties broken by lowest class index.
double evaluate_accuracy(const ModelSpec& spec, const StateDict& state, const HookSet& hooks,
                         const Dataset& dataset);

} // namespace stegoshield
