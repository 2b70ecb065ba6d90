// vchgcl command-line driver.
//
// Exit codes: 0 success, 2 contract / shape / configuration errors,
// 3 numeric failures (non-finite loss, failed gradient check).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vchgcl/gradsuite.hpp"
#include "vchgcl/io.hpp"

namespace fs = std::filesystem;
using namespace vchgcl;

namespace {

constexpr int kExitContract = 2;
constexpr int kExitNumeric = 3;

std::optional<std::uint64_t> seed_override() {
    const char* env = std::getenv("VCHGCL_SEED");
    if (!env || !*env) return std::nullopt;
    try {
        std::size_t used = 0;
        auto value = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
        return value;
    } catch (const std::exception&) {
        throw ContractError(std::string("VCHGCL_SEED must be a non-negative integer, got '") + env + "'");
    }
}

SynthSpec load_spec(const std::string& path) {
    auto spec = path.empty() ? SynthSpec{} : synth_spec_from_json(read_json_file(path));
    if (auto s = seed_override()) spec.seed = *s;
    return spec;
}

// Data widths and mode come from the dataset; a config that names a different
// value is rejected rather than silently overridden.
ModelConfig load_config(const std::string& path, const SynthSpec& spec) {
    Json j = path.empty() ? Json::object() : read_json_file(path);
    auto config = model_config_from_json(j);
    const ModelConfig fitted = spec.fit(config);
    auto check = [&](const char* key, std::size_t want) {
        if (j.contains(key) && j.at(key).get<std::size_t>() != want) {
            throw ContractError(std::string("config ") + key + " = " + std::to_string(j.at(key).get<std::size_t>()) +
                                " does not match the data (" + std::to_string(want) + ")");
        }
    };
    check("d_o", spec.d_o);
    check("d_vc", spec.d_vc);
    check("d_ap", spec.d_ap);
    check("d_t", spec.d_t);
    if (j.contains("mode") && fitted.mode != config.mode) throw ContractError("config mode does not match the data");
    config = fitted;
    if (auto s = seed_override()) config.seed = *s;
    config.validate();
    return config;
}

void print_report_tail(const RunReport& report) {
    const auto& last = report.final();
    std::printf("epoch %zu  loss %.4f  accuracy %.4f  cos(a,p) %.4f  cos(a,n) %.4f  signal attention %.4f\n",
                last.epoch, last.train_loss, last.eval.accuracy, last.eval.cos_anchor_positive,
                last.eval.cos_anchor_negative, last.eval.signal_attention);
}

int cmd_gen_data(const std::string& spec_path, const std::string& out) {
    auto spec = load_spec(spec_path);
    auto data = generate_dataset(spec);
    save_dataset(out, spec, data);
    std::printf("wrote %zu train / %zu eval instances to %s\n", data.train.size(), data.eval.size(), out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const RunOptions& options,
              const std::string& out) {
    auto loaded = load_dataset(data_dir);
    auto config = load_config(config_path, loaded.spec);
    Model model(config);
    auto report = train_model(model, loaded.data, options);
    fs::create_directories(out);
    write_text_file(fs::path(out) / "metrics.csv", report_csv(report));
    save_checkpoint(fs::path(out) / "checkpoint.vchg", model, loaded.spec);
    print_report_tail(report);
    return 0;
}

int cmd_ablate(const std::string& spec_path, const std::string& config_path, const RunOptions& options,
               const std::string& out) {
    auto spec = load_spec(spec_path);
    auto base = load_config(config_path, spec);
    if (config_path.empty() && !seed_override()) base.seed = spec.seed;
    auto table = run_ablation(spec, base, options);
    fs::create_directories(out);
    write_text_file(fs::path(out) / "ablation.csv", ablation_csv(table));
    for (const auto& row : table.rows) {
        write_text_file(fs::path(out) / ("metrics_" + ablation_name(row.ablation) + ".csv"), report_csv(row.report));
    }
    std::cout << ablation_csv(table);
    return 0;
}

int cmd_inspect(const std::string& checkpoint, std::size_t index, const std::string& split, const std::string& out) {
    auto loaded = load_checkpoint(checkpoint);
    auto data = generate_dataset(loaded.spec);
    const auto& pool = split == "train" ? data.train : data.eval;
    if (index >= pool.size()) {
        throw ContractError("instance " + std::to_string(index) + " out of range for the " + split + " split (" +
                            std::to_string(pool.size()) + " instances)");
    }
    dump_attention(loaded.model, pool[index], out);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_gradcheck(bool full) {
    constexpr double kTolerance = 1e-4;
    const auto start = std::chrono::steady_clock::now();
    auto entries = run_operation_gradchecks();
    if (full) {
        auto model = run_model_gradchecks();
        entries.insert(entries.end(), model.begin(), model.end());
    }
    bool ok = true;
    double worst = 0.0;
    for (const auto& e : entries) {
        const bool pass = e.result.max_relative_error < kTolerance;
        ok = ok && pass;
        worst = std::max(worst, e.result.max_relative_error);
        std::printf("%-4s %-24s coords %5zu  max rel err %.3e", pass ? "ok" : "FAIL", e.name.c_str(), e.coordinates,
                    e.result.max_relative_error);
        if (!pass) {
            std::printf("  (index %zu: analytic %.6e numeric %.6e)", e.result.worst_index, e.result.analytic,
                        e.result.numeric);
        }
        std::printf("\n");
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%zu checks, worst %.3e, tolerance %.0e, %.2f s\n", entries.size(), worst, kTolerance, seconds);
    return ok ? 0 : kExitNumeric;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Commonsense-fused heterogeneous graph contrastive QA on synthetic data"};
    app.require_subcommand(1);

    std::string spec_path, config_path, data_dir, out, checkpoint, split = "eval";
    std::size_t instance = 0;
    bool full = false;
    RunOptions options;

    auto add_training_flags = [&](CLI::App* cmd) {
        cmd->add_option("--epochs", options.epochs, "training epochs")->required();
        cmd->add_option("--lr", options.lr, "initial learning rate")->capture_default_str();
        cmd->add_option("--batch", options.batch_size, "instances per update")->capture_default_str();
        cmd->add_option("--momentum", options.momentum, "SGD momentum")->capture_default_str();
        cmd->add_option("--final-lr-fraction", options.final_lr_fraction,
                        "learning rate at the last epoch, as a fraction of --lr")
            ->capture_default_str();
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    gen->add_option("--spec", spec_path, "SynthSpec JSON (defaults when omitted)");
    gen->add_option("--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train one configuration on a dataset directory");
    train->add_option("--config", config_path, "ModelConfig JSON (defaults when omitted)");
    train->add_option("--data", data_dir, "dataset directory from gen-data")->required();
    train->add_option("--out", out, "output directory")->required();
    add_training_flags(train);

    auto* ablate = app.add_subcommand("ablate", "train all four ablation configurations");
    ablate->add_option("--spec", spec_path, "SynthSpec JSON (defaults when omitted)");
    ablate->add_option("--config", config_path, "base ModelConfig JSON; ablation field is ignored");
    ablate->add_option("--out", out, "output directory")->required();
    add_training_flags(ablate);

    auto* inspect = app.add_subcommand("inspect", "dump attention weights and gated edges for one instance");
    inspect->add_option("--checkpoint", checkpoint, "checkpoint file written by train")->required();
    inspect->add_option("--instance", instance, "instance index")->required();
    inspect->add_option("--split", split, "eval or train")->check(CLI::IsMember({"eval", "train"}))->capture_default_str();
    inspect->add_option("--out", out, "output JSON file")->required();

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    grad->add_flag("--full", full, "also check the full model loss on a minimal instance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitContract;
    }

    try {
        if (*gen) return cmd_gen_data(spec_path, out);
        if (*train) return cmd_train(config_path, data_dir, options, out);
        if (*ablate) return cmd_ablate(spec_path, config_path, options, out);
        if (*inspect) return cmd_inspect(checkpoint, instance, split, out);
        if (*grad) return cmd_gradcheck(full);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitContract;
    } catch (const Json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitContract;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
