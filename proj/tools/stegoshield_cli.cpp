// Command-line front end for the stegoshield library.
//
// Exit codes: 0 success, 1 usage/config error, 2 integrity-failure verdict
// (extraction or equivalence check failed), 3 internal error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stegoshield/checkpoint.hpp"
#include "stegoshield/defense.hpp"
#include "stegoshield/metrics.hpp"
#include "stegoshield/nn.hpp"
#include "stegoshield/rng.hpp"
#include "stegoshield/stego.hpp"

namespace ss = stegoshield;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIntegrity = 2;
constexpr int kExitInternal = 3;

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

ss::ModelSpec spec_by_name(const std::string& name) {
    if (name == "mlp") return ss::make_mlp_spec();
    if (name == "micro-resnet") return ss::make_micro_resnet_spec();
    throw CLI::ValidationError("--model", "unknown model '" + name + "' (expected mlp | micro-resnet)");
}

void print_report(const ss::ExtractionResult& ex) {
    std::cout << "found_any: " << (ex.found_any ? "yes" : "no") << "\n";
    std::cout << "recovered: " << (ex.recovered ? "yes \xE2\x9C\x97 (payload intact)" : "no \xE2\x9C\x93 (corrupted)")
              << "\n";
    std::cout << "recovered_bytes: " << ex.recovered_bytes << "\n";
    std::cout << "raw_ber: " << ex.raw_ber << "\n";
    for (const auto& c : ex.chunks) {
        std::cout << "chunk " << c.index << ": crc_ok=" << (c.crc_ok ? 1 : 0)
                  << " ldpc_converged=" << (c.ldpc_converged ? 1 : 0) << "\n";
    }
}

struct SchemeOpts {
    std::string scheme = "spread";
    uint32_t n_bits = 1;
    double gamma = 0.35;
    uint32_t chips = 64;
    uint32_t ldpc_n = 256;
    uint32_t ldpc_k = 128;
    uint64_t ldpc_seed = 9;
    uint64_t seed = 1;
};

void add_scheme_opts(CLI::App* cmd, SchemeOpts& o) {
    cmd->add_option("--scheme", o.scheme, "Embedding scheme: lsb | spread")
        ->check(CLI::IsMember({"lsb", "spread"}));
    cmd->add_option("--n-bits", o.n_bits, "LSB: mantissa bits per weight (1..8)")->check(CLI::Range(1, 8));
    cmd->add_option("--gamma", o.gamma, "Spread: gain as fraction of layer std");
    cmd->add_option("--chips-per-bit,-L", o.chips, "Spread: chips per codeword bit")->check(CLI::PositiveNumber);
    cmd->add_option("--ldpc-n", o.ldpc_n, "LDPC codeword length");
    cmd->add_option("--ldpc-k", o.ldpc_k, "LDPC message length");
    cmd->add_option("--ldpc-seed", o.ldpc_seed, "LDPC construction seed");
    cmd->add_option("--seed", o.seed, "Chip-sequence seed");
}

ss::SpreadParams spread_of(const SchemeOpts& o) {
    ss::SpreadParams p;
    p.seed = o.seed;
    p.gamma = o.gamma;
    p.chips_per_bit = o.chips;
    return p;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural-network weight steganography and permutation-defense toolkit"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train a desk-scale model on the synthetic dataset");
    std::string train_model = "micro-resnet", train_out = "model";
    uint64_t train_seed = 7;
    uint32_t train_epochs = 8;
    double train_lr = 0.05;
    train->add_option("--model", train_model, "mlp | micro-resnet");
    train->add_option("--out", train_out, "Output prefix (<out>.ckpt, <out>.spec.json)");
    train->add_option("--seed", train_seed, "Training seed");
    train->add_option("--epochs", train_epochs, "Training epochs");
    train->add_option("--lr", train_lr, "Learning rate");

    // embed
    auto* embed = app.add_subcommand("embed", "Embed a payload file into a checkpoint");
    std::string em_ckpt, em_payload, em_out;
    SchemeOpts em_opts;
    embed->add_option("--checkpoint", em_ckpt, "Input checkpoint")->required();
    embed->add_option("--payload", em_payload, "Payload file")->required();
    embed->add_option("--out", em_out, "Output checkpoint")->required();
    add_scheme_opts(embed, em_opts);

    // extract
    auto* extract = app.add_subcommand("extract", "Extract a payload from a checkpoint");
    std::string ex_ckpt, ex_out;
    SchemeOpts ex_opts;
    extract->add_option("--checkpoint", ex_ckpt, "Suspect checkpoint")->required();
    extract->add_option("--out", ex_out, "Where to write recovered bytes");
    add_scheme_opts(extract, ex_opts);

    // permute
    auto* permute = app.add_subcommand("permute", "Apply the weight-permutation defense");
    std::string pm_ckpt, pm_spec, pm_out, pm_manifest;
    std::string pm_mode = "hooked";
    double pm_fraction = 1.0;
    uint64_t pm_seed = 1;
    permute->add_option("--checkpoint", pm_ckpt)->required();
    permute->add_option("--spec", pm_spec, "Model spec JSON")->required();
    permute->add_option("--out", pm_out)->required();
    permute->add_option("--manifest", pm_manifest, "Permutation manifest output path");
    permute->add_option("--fraction", pm_fraction, "Fraction of eligible layers")->check(CLI::Range(0.0, 1.0));
    permute->add_option("--mode", pm_mode, "hooked | cascaded")->check(CLI::IsMember({"hooked", "cascaded"}));
    permute->add_option("--seed", pm_seed);

    // prune
    auto* prune = app.add_subcommand("prune", "Global unstructured magnitude pruning");
    std::string pr_ckpt, pr_out;
    double pr_rate = 0.25;
    prune->add_option("--checkpoint", pr_ckpt)->required();
    prune->add_option("--out", pr_out)->required();
    prune->add_option("--rate", pr_rate, "Prune rate in [0,1)")->check(CLI::Range(0.0, 1.0).description("[0 - 1)"));

    // retrain
    auto* retrain = app.add_subcommand("retrain", "Retrain a checkpoint on the synthetic dataset");
    std::string rt_ckpt, rt_spec, rt_out;
    uint32_t rt_epochs = 1;
    double rt_lr = 0.05;
    uint64_t rt_seed = 7;
    retrain->add_option("--checkpoint", rt_ckpt)->required();
    retrain->add_option("--spec", rt_spec)->required();
    retrain->add_option("--out", rt_out)->required();
    retrain->add_option("--epochs", rt_epochs);
    retrain->add_option("--lr", rt_lr);
    retrain->add_option("--seed", rt_seed);

    // verify-equivalence
    auto* verify = app.add_subcommand("verify-equivalence",
                                      "Check a defended checkpoint + manifest against the original");
    std::string vq_orig, vq_def, vq_spec, vq_manifest;
    uint32_t vq_trials = 100;
    uint64_t vq_seed = 3;
    verify->add_option("--original", vq_orig)->required();
    verify->add_option("--defended", vq_def)->required();
    verify->add_option("--spec", vq_spec)->required();
    verify->add_option("--manifest", vq_manifest)->required();
    verify->add_option("--trials", vq_trials, "Random inputs to compare");
    verify->add_option("--seed", vq_seed);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Run the experiment matrix from a config file");
    std::string sw_config;
    sweep->add_option("--config", sw_config, "Experiment config JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) {
            ss::ModelSpec spec = spec_by_name(train_model);
            ss::Dataset tr = ss::make_blob_dataset(600, ss::derive_stream(train_seed, 0xDA7Au));
            ss::Dataset te = ss::make_blob_dataset(300, ss::derive_stream(train_seed, 0xDA7Bu));
            ss::StateDict state =
                ss::train_sgd(spec, ss::init_state(spec, train_seed), tr, train_epochs, train_lr, train_seed);
            ss::save_checkpoint_file(state, train_out + ".ckpt");
            ss::save_model_spec(spec, train_out + ".spec.json");
            std::cout << "test_accuracy: " << ss::evaluate_accuracy(spec, state, ss::HookSet{}, te) << "\n";
            std::cout << "checkpoint: " << train_out << ".ckpt\nspec: " << train_out << ".spec.json\n";
            return kExitOk;
        }
        if (*embed) {
            ss::StateDict state = ss::load_checkpoint_file(em_ckpt);
            ss::Payload payload = ss::Payload::from_bytes(read_file(em_payload));
            ss::StateDict infected;
            if (em_opts.scheme == "lsb") {
                infected = ss::embed_lsb(state, payload, em_opts.n_bits);
            } else {
                ss::LdpcCode code = ss::LdpcCode::make(em_opts.ldpc_n, em_opts.ldpc_k, em_opts.ldpc_seed);
                infected = ss::embed_spread(state, payload, code, spread_of(em_opts));
            }
            ss::save_checkpoint_file(infected, em_out);
            std::cout << "embedded " << payload.length() << " bytes (" << em_opts.scheme << ") -> " << em_out
                      << "\n";
            return kExitOk;
        }
        if (*extract) {
            ss::StateDict state = ss::load_checkpoint_file(ex_ckpt);
            ss::ExtractionResult ex;
            if (ex_opts.scheme == "lsb") {
                ex = ss::extract_lsb(state, ex_opts.n_bits);
            } else {
                ss::LdpcCode code = ss::LdpcCode::make(ex_opts.ldpc_n, ex_opts.ldpc_k, ex_opts.ldpc_seed);
                ex = ss::extract_spread(state, code, spread_of(ex_opts));
            }
            if (!ex.found_any) {
                std::cout << "no payload detected\n";
                return kExitIntegrity;
            }
            print_report(ex);
            if (ex.recovered && !ex_out.empty()) write_file(ex_out, ex.data);
            return ex.recovered ? kExitOk : kExitIntegrity;
        }
        if (*permute) {
            ss::ModelSpec spec = ss::load_model_spec(pm_spec);
            ss::StateDict state = ss::load_checkpoint_file(pm_ckpt);
            ss::PermutationResult pr = pm_mode == "cascaded" ? ss::cascade_permute(spec, state, pm_seed)
                                                             : ss::permute_model(spec, state, pm_fraction, pm_seed);
            ss::save_checkpoint_file(pr.state, pm_out);
            if (!pm_manifest.empty()) pr.manifest.save(pm_manifest);
            std::cout << "permuted " << pr.manifest.layers.size() << " eligible layers (mode " << pm_mode
                      << ", layer fraction " << pr.manifest.fraction << ", element fraction "
                      << pr.manifest.element_fraction << ")\n";
            return kExitOk;
        }
        if (*prune) {
            if (pr_rate >= 1.0) {
                std::cerr << "prune: --rate must be < 1.0\n";
                return kExitUsage;
            }
            ss::StateDict state = ss::load_checkpoint_file(pr_ckpt);
            ss::save_checkpoint_file(ss::prune_global(state, pr_rate), pr_out);
            std::cout << "pruned at rate " << pr_rate << " -> " << pr_out << "\n";
            return kExitOk;
        }
        if (*retrain) {
            ss::ModelSpec spec = ss::load_model_spec(rt_spec);
            ss::StateDict state = ss::load_checkpoint_file(rt_ckpt);
            ss::Dataset tr = ss::make_blob_dataset(600, ss::derive_stream(rt_seed, 0xDA7Au));
            ss::save_checkpoint_file(ss::retrain_defense(spec, state, tr, rt_epochs, rt_lr, rt_seed), rt_out);
            std::cout << "retrained " << rt_epochs << " epoch(s) -> " << rt_out << "\n";
            return kExitOk;
        }
        if (*verify) {
            ss::ModelSpec spec = ss::load_model_spec(vq_spec);
            ss::StateDict original = ss::load_checkpoint_file(vq_orig);
            ss::StateDict defended = ss::load_checkpoint_file(vq_def);
            ss::PermutationManifest manifest = ss::PermutationManifest::load(vq_manifest);
            ss::HookSet hooks;
            if (manifest.mode == ss::PermutationMode::hooked) {
                for (const auto& l : manifest.layers) {
                    if (l.permuted) hooks.inverse[l.layer_index] = ss::invert_permutation(l.permutation);
                }
            } else if (!manifest.layers.empty()) {
                const auto& last = manifest.layers.back();
                hooks.inverse[last.layer_index] = ss::invert_permutation(last.permutation);
            }
            ss::SplitMix64 rng(ss::derive_stream(vq_seed, 0x1F0u));
            double max_diff = 0.0;
            bool bitwise = true;
            for (uint32_t t = 0; t < vq_trials; ++t) {
                ss::Tensor input;
                input.shape = spec.input_shape;
                uint64_t in_elems = 1;
                for (uint32_t e : input.shape) in_elems *= e;
                input.data.resize(in_elems);
                for (float& v : input.data) v = static_cast<float>(rng.next_gaussian());
                ss::Tensor a = ss::forward(spec, original, ss::HookSet{}, input);
                ss::Tensor b = ss::forward(spec, defended, hooks, input);
                if (!ss::bit_equal(a, b)) bitwise = false;
                for (size_t i = 0; i < a.data.size(); ++i) {
                    max_diff = std::max(max_diff, double(std::fabs(a.data[i] - b.data[i])));
                }
            }
            std::cout << "trials: " << vq_trials << "\nmax_abs_diff: " << max_diff
                      << "\nbitwise_equal: " << (bitwise ? "yes" : "no") << "\n"
                      << (bitwise ? "PASS" : "FAIL") << "\n";
            return bitwise ? kExitOk : kExitIntegrity;
        }
        if (*sweep) {
            ss::ExperimentConfig config = ss::ExperimentConfig::load(sw_config);
            ss::ExperimentOutput out = ss::run_experiment_matrix(config);
            std::cout << "records: " << out.records.size() << "\nresults: " << out.results_csv_path
                      << "\ntable: " << out.table1_md_path << "\n";
            if (!out.fig3_csv_path.empty()) std::cout << "fig3: " << out.fig3_csv_path << "\n";
            return kExitOk;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ss::CapacityError& e) {
        std::cerr << "capacity error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ss::CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitUsage;
}
