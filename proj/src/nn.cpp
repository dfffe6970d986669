#include "stegoshield/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stegoshield/rng.hpp"

namespace stegoshield {

namespace {

constexpr size_t kBatchSize = 32;

void apply_inverse_permutation(Tensor& t, const std::vector<uint32_t>& inv) {
    // Gather along axis 0: out[c] <- in[inv[c]] (per-channel blocks for 3-D).
    uint64_t block = t.size() / t.shape[0];
    std::vector<float> out(t.data.size());
    for (uint32_t c = 0; c < t.shape[0]; ++c) {
        std::memcpy(out.data() + uint64_t(c) * block, t.data.data() + uint64_t(inv[c]) * block,
                    block * sizeof(float));
    }
    t.data = std::move(out);
}

Tensor linear_forward(const Tensor& w, const Tensor& b, const Tensor& x) {
    uint32_t out_f = w.shape[0], in_f = w.shape[1];
    Tensor y({out_f}, std::vector<float>(out_f));
    for (uint32_t o = 0; o < out_f; ++o) {
        double acc = b.data[o];
        const float* row = w.data.data() + uint64_t(o) * in_f;
        for (uint32_t i = 0; i < in_f; ++i) acc += double(row[i]) * double(x.data[i]);
        y.data[o] = static_cast<float>(acc);
    }
    return y;
}

Tensor conv2d_forward(const Tensor& w, const Tensor& b, const Tensor& x, uint32_t stride, uint32_t pad) {
    uint32_t cout = w.shape[0], cin = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    uint32_t h = x.shape[1], wd = x.shape[2];
    uint32_t oh = (h + 2 * pad - kh) / stride + 1;
    uint32_t ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor y({cout, oh, ow}, std::vector<float>(uint64_t(cout) * oh * ow));
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < int64_t(cout); ++c) {
        const float* wc = w.data.data() + uint64_t(c) * cin * kh * kw;
        float* yc = y.data.data() + uint64_t(c) * oh * ow;
        for (uint32_t oy = 0; oy < oh; ++oy) {
            for (uint32_t ox = 0; ox < ow; ++ox) {
                // Fixed-order accumulation tree: per-channel partials run in
                // four independent chains and fold deterministically at the
                // end, which keeps results bit-reproducible while letting the
                // chains overlap on a single core.
                double acc[4] = {0.0, 0.0, 0.0, 0.0};
                for (uint32_t d = 0; d < cin; ++d) {
                    const float* xd = x.data.data() + uint64_t(d) * h * wd;
                    const float* wk = wc + uint64_t(d) * kh * kw;
                    double row[3] = {0.0, 0.0, 0.0};
                    for (uint32_t u = 0; u < kh; ++u) {
                        int64_t iy = int64_t(oy) * stride + u - pad;
                        if (iy < 0 || iy >= int64_t(h)) continue;
                        double s = 0.0;
                        for (uint32_t v = 0; v < kw; ++v) {
                            int64_t ix = int64_t(ox) * stride + v - pad;
                            if (ix < 0 || ix >= int64_t(wd)) continue;
                            s += double(wk[u * kw + v]) * double(xd[iy * wd + ix]);
                        }
                        row[u % 3] += s;
                    }
                    acc[d % 4] += (row[0] + row[1]) + row[2];
                }
                yc[uint64_t(oy) * ow + ox] =
                    static_cast<float>(b.data[c] + ((acc[0] + acc[1]) + (acc[2] + acc[3])));
            }
        }
    }
    return y;
}

// Runs the layer stack, optionally caching every layer output (for
// backprop). cache[i] is the (post-hook) output of layer i.
Tensor run_forward(const ModelSpec& spec, const StateDict& state, const HookSet& hooks, const Tensor& input,
                   std::vector<Tensor>* cache) {
    Tensor cur = input;
    std::vector<std::pair<size_t, Tensor>> residual_stack;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::linear:
                cur = linear_forward(state.at(l.weight_name), state.at(l.bias_name), cur);
                break;
            case LayerKind::conv2d:
                cur = conv2d_forward(state.at(l.weight_name), state.at(l.bias_name), cur, l.stride, l.padding);
                break;
            case LayerKind::relu:
                for (float& v : cur.data) v = v > 0.0f ? v : 0.0f;
                break;
            case LayerKind::global_avg_pool: {
                uint32_t c = cur.shape[0];
                uint64_t hw = uint64_t(cur.shape[1]) * cur.shape[2];
                Tensor pooled({c}, std::vector<float>(c));
                for (uint32_t d = 0; d < c; ++d) {
                    double acc = 0.0;
                    const float* xd = cur.data.data() + uint64_t(d) * hw;
                    for (uint64_t j = 0; j < hw; ++j) acc += xd[j];
                    pooled.data[d] = static_cast<float>(acc / double(hw));
                }
                cur = std::move(pooled);
                break;
            }
            case LayerKind::flatten: {
                uint32_t n = static_cast<uint32_t>(cur.size());
                cur = Tensor({n}, std::move(cur.data));
                break;
            }
            case LayerKind::residual_begin:
                residual_stack.emplace_back(i, cur);
                break;
            case LayerKind::residual_add: {
                const Tensor& saved = residual_stack.back().second;
                for (size_t j = 0; j < cur.data.size(); ++j) cur.data[j] += saved.data[j];
                residual_stack.pop_back();
                break;
            }
        }
        auto hook = hooks.inverse.find(i);
        if (hook != hooks.inverse.end()) apply_inverse_permutation(cur, hook->second);
        if (cache) cache->push_back(cur);
    }
    return cur;
}

} // namespace

Tensor forward(const ModelSpec& spec, const StateDict& state, const HookSet& hooks, const Tensor& input) {
    if (input.shape != spec.input_shape) throw ModelError("forward: input shape mismatch");
    propagate_shapes(spec, state);
    return run_forward(spec, state, hooks, input, nullptr);
}

Dataset make_blob_dataset(size_t count, uint64_t seed, uint32_t class_count) {
    if (class_count != 8) throw std::invalid_argument("blob dataset: v1 generates exactly 8 classes");
    Dataset ds;
    ds.class_count = class_count;
    SplitMix64 rng(derive_stream(seed, 0xB10Bu));
    auto uniform = [&]() { return static_cast<double>(rng.next() >> 11) * 0x1.0p-53; };
    // Shape-classification task: each class is a blob silhouette rendered at a
    // random position with its total energy normalised, so class identity lives
    // in spatial structure rather than in location or raw intensity.
    for (size_t i = 0; i < count; ++i) {
        uint32_t label = static_cast<uint32_t>(rng.next_below(class_count));
        double cy = 2.5 + 3.0 * uniform();
        double cx = 2.5 + 3.0 * uniform();
        std::vector<float> img(64);
        double energy = 0.0;
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                double dy = y - cy, dx = x - cx;
                double v = 0.0;
                switch (label) {
                    case 0: v = std::exp(-(dy * dy + dx * dx) / (2.0 * 0.7 * 0.7)); break;
                    case 1: v = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)); break;
                    case 2: {
                        double r = std::sqrt(dy * dy + dx * dx) - 2.0;
                        v = std::exp(-r * r / (2.0 * 0.5 * 0.5));
                        break;
                    }
                    case 3:
                        v = std::exp(-(dx * dx / (2.0 * 0.5 * 0.5) + dy * dy / (2.0 * 1.8 * 1.8)));
                        break;
                    case 4:
                        v = std::exp(-(dy * dy / (2.0 * 0.5 * 0.5) + dx * dx / (2.0 * 1.8 * 1.8)));
                        break;
                    case 5:
                    case 6: {
                        double u = (dx + dy) * 0.70710678118654752;
                        double w = (dx - dy) * 0.70710678118654752;
                        if (label == 6) std::swap(u, w);
                        v = std::exp(-(w * w / (2.0 * 0.5 * 0.5) + u * u / (2.0 * 1.8 * 1.8)));
                        break;
                    }
                    default: {
                        double a = (dx - 1.5) * (dx - 1.5) + dy * dy;
                        double b = (dx + 1.5) * (dx + 1.5) + dy * dy;
                        v = std::exp(-a / (2.0 * 0.55 * 0.55)) + std::exp(-b / (2.0 * 0.55 * 0.55));
                        break;
                    }
                }
                img[y * 8 + x] = static_cast<float>(v);
                energy += v * v;
            }
        }
        double scale = (2.5 / std::sqrt(energy)) * (1.0 + 0.1 * rng.next_gaussian());
        for (float& p : img) {
            p = static_cast<float>(double(p) * scale + 0.15 * rng.next_gaussian());
        }
        ds.inputs.push_back(Tensor({1, 8, 8}, std::move(img)));
        ds.labels.push_back(label);
    }
    return ds;
}

double evaluate_accuracy(const ModelSpec& spec, const StateDict& state, const HookSet& hooks,
                         const Dataset& dataset) {
    if (dataset.inputs.empty()) throw std::invalid_argument("evaluate: dataset is empty");
    propagate_shapes(spec, state);
    size_t correct = 0;
    for (size_t i = 0; i < dataset.inputs.size(); ++i) {
        Tensor logits = run_forward(spec, state, hooks, dataset.inputs[i], nullptr);
        uint32_t best = 0;
        for (uint32_t c = 1; c < logits.shape[0]; ++c) {
            if (logits.data[c] > logits.data[best]) best = c; // ties keep lowest index
        }
        if (best == dataset.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.inputs.size());
}

namespace {

struct Gradients {
    // Keyed by entry index in the StateDict; double accumulators keep the
    // reduction order irrelevant to rounding at fp32 update time.
    std::vector<std::vector<double>> by_entry;

    explicit Gradients(const StateDict& state) {
        by_entry.resize(state.size());
        for (size_t i = 0; i < state.size(); ++i) by_entry[i].assign(state.entry(i).second.size(), 0.0);
    }
    void clear() {
        for (auto& g : by_entry) std::fill(g.begin(), g.end(), 0.0);
    }
};

size_t entry_index(const StateDict& state, const std::string& name) {
    for (size_t i = 0; i < state.size(); ++i) {
        if (state.entry(i).first == name) return i;
    }
    throw ModelError("missing parameter entry '" + name + "'");
}

void linear_backward(const Tensor& w, const Tensor& x, const std::vector<double>& gy,
                     std::vector<double>& gw, std::vector<double>& gb, std::vector<double>& gx) {
    uint32_t out_f = w.shape[0], in_f = w.shape[1];
    gx.assign(in_f, 0.0);
    for (uint32_t o = 0; o < out_f; ++o) {
        double g = gy[o];
        gb[o] += g;
        const float* row = w.data.data() + uint64_t(o) * in_f;
        double* gw_row = gw.data() + uint64_t(o) * in_f;
        for (uint32_t i = 0; i < in_f; ++i) {
            gw_row[i] += g * double(x.data[i]);
            gx[i] += g * double(row[i]);
        }
    }
}

void conv2d_backward(const Tensor& w, const Tensor& x, const std::vector<double>& gy, uint32_t stride,
                     uint32_t pad, uint32_t oh, uint32_t ow, std::vector<double>& gw, std::vector<double>& gb,
                     std::vector<double>& gx) {
    uint32_t cout = w.shape[0], cin = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    uint32_t h = x.shape[1], wd = x.shape[2];
    gx.assign(x.data.size(), 0.0);
    // Weight/bias gradients: each output channel owns its slice, so the
    // channel loop can run in parallel without changing any result.
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < int64_t(cout); ++c) {
        const double* gyc = gy.data() + uint64_t(c) * oh * ow;
        double* gwc = gw.data() + uint64_t(c) * cin * kh * kw;
        double gb_acc = 0.0;
        for (uint32_t oy = 0; oy < oh; ++oy) {
            for (uint32_t ox = 0; ox < ow; ++ox) {
                double g = gyc[uint64_t(oy) * ow + ox];
                gb_acc += g;
                for (uint32_t d = 0; d < cin; ++d) {
                    const float* xd = x.data.data() + uint64_t(d) * h * wd;
                    double* gwk = gwc + uint64_t(d) * kh * kw;
                    for (uint32_t u = 0; u < kh; ++u) {
                        int64_t iy = int64_t(oy) * stride + u - pad;
                        if (iy < 0 || iy >= int64_t(h)) continue;
                        for (uint32_t v = 0; v < kw; ++v) {
                            int64_t ix = int64_t(ox) * stride + v - pad;
                            if (ix < 0 || ix >= int64_t(wd)) continue;
                            gwk[u * kw + v] += g * double(xd[iy * wd + ix]);
                        }
                    }
                }
            }
        }
        gb[c] += gb_acc;
    }
    // Input gradient: parallel over input channels (disjoint writes).
#pragma omp parallel for schedule(static)
    for (int64_t d = 0; d < int64_t(cin); ++d) {
        double* gxd = gx.data() + uint64_t(d) * h * wd;
        for (uint32_t c = 0; c < cout; ++c) {
            const double* gyc = gy.data() + uint64_t(c) * oh * ow;
            const float* wk = w.data.data() + (uint64_t(c) * cin + d) * kh * kw;
            for (uint32_t oy = 0; oy < oh; ++oy) {
                for (uint32_t ox = 0; ox < ow; ++ox) {
                    double g = gyc[uint64_t(oy) * ow + ox];
                    for (uint32_t u = 0; u < kh; ++u) {
                        int64_t iy = int64_t(oy) * stride + u - pad;
                        if (iy < 0 || iy >= int64_t(h)) continue;
                        for (uint32_t v = 0; v < kw; ++v) {
                            int64_t ix = int64_t(ox) * stride + v - pad;
                            if (ix < 0 || ix >= int64_t(wd)) continue;
                            gxd[iy * wd + ix] += g * double(wk[u * kw + v]);
                        }
                    }
                }
            }
        }
    }
}

// Backward through the whole stack for one sample. cache holds per-layer
// outputs from run_forward; g enters as dLoss/dlogits.
void run_backward(const ModelSpec& spec, const StateDict& state, const Tensor& input,
                  const std::vector<Tensor>& cache, std::vector<double> g, Gradients& grads) {
    // Pending skip gradients for residual-begin layers, keyed by layer index.
    std::map<size_t, std::vector<double>> pending_skip;
    // Map residual-add index -> matching begin index.
    std::vector<size_t> begin_stack;
    std::map<size_t, size_t> add_to_begin;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind == LayerKind::residual_begin) begin_stack.push_back(i);
        if (spec.layers[i].kind == LayerKind::residual_add) {
            add_to_begin[i] = begin_stack.back();
            begin_stack.pop_back();
        }
    }

    for (size_t ii = spec.layers.size(); ii-- > 0;) {
        const LayerSpec& l = spec.layers[ii];
        const Tensor& in = ii == 0 ? input : cache[ii - 1];
        auto skip = pending_skip.find(ii);
        if (skip != pending_skip.end()) {
            for (size_t j = 0; j < g.size(); ++j) g[j] += skip->second[j];
            pending_skip.erase(skip);
        }
        switch (l.kind) {
            case LayerKind::linear: {
                const Tensor& w = state.at(l.weight_name);
                std::vector<double> gx;
                linear_backward(w, in, g, grads.by_entry[entry_index(state, l.weight_name)],
                                grads.by_entry[entry_index(state, l.bias_name)], gx);
                g = std::move(gx);
                break;
            }
            case LayerKind::conv2d: {
                const Tensor& w = state.at(l.weight_name);
                const Tensor& out = cache[ii];
                std::vector<double> gx;
                conv2d_backward(w, in, g, l.stride, l.padding, out.shape[1], out.shape[2],
                                grads.by_entry[entry_index(state, l.weight_name)],
                                grads.by_entry[entry_index(state, l.bias_name)], gx);
                g = std::move(gx);
                break;
            }
            case LayerKind::relu:
                for (size_t j = 0; j < g.size(); ++j) {
                    if (in.data[j] <= 0.0f) g[j] = 0.0;
                }
                break;
            case LayerKind::global_avg_pool: {
                uint32_t c = in.shape[0];
                uint64_t hw = uint64_t(in.shape[1]) * in.shape[2];
                std::vector<double> gx(in.data.size());
                for (uint32_t d = 0; d < c; ++d) {
                    double gd = g[d] / double(hw);
                    for (uint64_t j = 0; j < hw; ++j) gx[uint64_t(d) * hw + j] = gd;
                }
                g = std::move(gx);
                break;
            }
            case LayerKind::flatten:
                break; // same elements, same order
            case LayerKind::residual_begin:
                break; // identity; pending skip grad already merged above
            case LayerKind::residual_add: {
                // Gradient flows unchanged to the branch and is queued for
                // the matching begin layer's output.
                pending_skip[add_to_begin[ii]] = g;
                break;
            }
        }
    }
}

} // namespace

StateDict train_sgd(const ModelSpec& spec, const StateDict& state, const Dataset& dataset, uint32_t epochs,
                    double lr, uint64_t seed) {
    if (epochs < 1) throw std::invalid_argument("train_sgd: epochs must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train_sgd: learning rate must be > 0");
    if (dataset.inputs.empty()) throw std::invalid_argument("train_sgd: dataset is empty");
    propagate_shapes(spec, state);

    StateDict cur = state;
    Gradients grads(cur);
    std::vector<size_t> order(dataset.inputs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (uint32_t epoch = 0; epoch < epochs; ++epoch) {
        SplitMix64 shuffle_rng(derive_stream(seed, 0x5D00 + epoch));
        fisher_yates(order, shuffle_rng);
        for (size_t batch_start = 0; batch_start < order.size(); batch_start += kBatchSize) {
            size_t batch_n = std::min(kBatchSize, order.size() - batch_start);
            grads.clear();
            double batch_loss = 0.0;
            for (size_t bi = 0; bi < batch_n; ++bi) {
                size_t idx = order[batch_start + bi];
                std::vector<Tensor> cache;
                Tensor logits = run_forward(spec, cur, HookSet{}, dataset.inputs[idx], &cache);
                // Softmax cross-entropy, numerically stabilized.
                uint32_t classes = logits.shape[0];
                double max_logit = logits.data[0];
                for (uint32_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, double(logits.data[c]));
                double denom = 0.0;
                for (uint32_t c = 0; c < classes; ++c) denom += std::exp(double(logits.data[c]) - max_logit);
                uint32_t label = dataset.labels[idx];
                batch_loss += -(double(logits.data[label]) - max_logit - std::log(denom));
                std::vector<double> g(classes);
                for (uint32_t c = 0; c < classes; ++c) {
                    double p = std::exp(double(logits.data[c]) - max_logit) / denom;
                    g[c] = (p - (c == label ? 1.0 : 0.0)) / double(batch_n);
                }
                run_backward(spec, cur, dataset.inputs[idx], cache, std::move(g), grads);
            }
            if (!std::isfinite(batch_loss)) {
                throw ModelError("train_sgd: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_start / kBatchSize));
            }
            for (size_t e = 0; e < cur.size(); ++e) {
                auto& tensor = cur.entry(e).second;
                const auto& g = grads.by_entry[e];
                for (size_t j = 0; j < tensor.data.size(); ++j) {
                    tensor.data[j] = static_cast<float>(double(tensor.data[j]) - lr * g[j]);
                }
            }
        }
    }
    return cur;
}

} // namespace stegoshield
