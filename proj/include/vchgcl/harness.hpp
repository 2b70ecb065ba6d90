#pragma once

// Training, evaluation and the ablation runner over synthetic data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vchgcl/pipeline.hpp"
#include "vchgcl/synth.hpp"

namespace vchgcl {

struct RunOptions {
    std::size_t epochs = 20;
    double lr = 0.003;
    double momentum = 0.9;
    std::size_t batch_size = 8;
    double final_lr_fraction = 1.0; // linear decay from lr to lr * fraction over the epochs
    bool evaluate_every_epoch = true; // otherwise only epoch 0 and the last epoch

    /// Learning rate used during 1-based `epoch`.
    double learning_rate(std::size_t epoch) const {
        if (epochs <= 1) return lr;
        const double progress = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
        return lr * (1.0 - progress * (1.0 - final_lr_fraction));
    }

    void validate() const {
        if (batch_size == 0) throw ContractError("batch size must be positive");
        if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
            throw ContractError("final learning-rate fraction must lie in [0, 1]");
        }
        if (!(lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
            throw ContractError("learning rate must be >= 0 and momentum in [0, 1)");
        }
    }
};

struct EvalMetrics {
    double accuracy = 0.0;
    double cos_anchor_positive = 0.0; // 0 when the model has no contrastive branches
    double cos_anchor_negative = 0.0;
    double signal_attention = 0.0;    // mean attention weight on the signal-bearing object
    std::size_t instances = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0; // mean total loss over the epoch; 0 for the untrained row
    EvalMetrics eval;
    bool evaluated = true;
};

struct RunReport {
    ModelConfig config;
    std::vector<EpochRecord> epochs; // epochs[0] is the untrained model

    const EpochRecord& final() const {
        for (auto it = epochs.rbegin(); it != epochs.rend(); ++it) {
            if (it->evaluated) return *it;
        }
        throw ContractError("report has no evaluated epoch");
    }
};

inline std::string format_real(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

/// Columns: epoch,train_loss,eval_accuracy,cos_anchor_positive,cos_anchor_negative,signal_attention.
/// Epochs that were not evaluated are omitted.
inline std::string report_csv(const RunReport& report) {
    std::string csv = "epoch,train_loss,eval_accuracy,cos_anchor_positive,cos_anchor_negative,signal_attention\n";
    for (const auto& r : report.epochs) {
        if (!r.evaluated) continue;
        csv += std::to_string(r.epoch) + "," + format_real(r.train_loss) + "," + format_real(r.eval.accuracy) + "," +
               format_real(r.eval.cos_anchor_positive) + "," + format_real(r.eval.cos_anchor_negative) + "," +
               format_real(r.eval.signal_attention) + "\n";
    }
    return csv;
}

/// Attention weight that lands on the signal object. Video mode reads the
/// object attention of every frame; image mode reads the node attention over
/// the fused objects (visual nodes come first), averaged over candidates.
inline double signal_attention_mass(const QAInstance& q, const Diagnostics& diag, Mode mode) {
    if (q.signal_objects.empty()) return 0.0;
    double total = 0.0;
    std::size_t count = 0;
    if (mode == Mode::VideoQA) {
        const std::size_t frames = std::min(q.signal_objects.size(), diag.object_attention.size());
        for (std::size_t t = 0; t < frames; ++t) {
            total += diag.object_attention[t][q.signal_objects[t]];
            ++count;
        }
    } else {
        for (const auto& weights : diag.node_attention) {
            total += weights[q.signal_objects.front()];
            ++count;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

inline constexpr std::uint64_t kEvalNoiseSalt = 0x6576616cull;

inline EvalMetrics evaluate(const Model& model, std::span<const QAInstance> data) {
    NoGradGuard no_grad;
    EvalMetrics m;
    m.instances = data.size();
    if (data.empty()) return m;
    std::size_t correct = 0;
    for (const auto& q : data) {
        auto fwd = model.forward(q, mix_seed(model.config().seed, kEvalNoiseSalt, q.id));
        correct += argmax_lowest(fwd.scores.data()) == q.correct_index;
        m.cos_anchor_positive += fwd.diagnostics.cos_anchor_positive;
        m.cos_anchor_negative += fwd.diagnostics.cos_anchor_negative;
        m.signal_attention += signal_attention_mass(q, fwd.diagnostics, model.config().mode);
    }
    const double n = static_cast<double>(data.size());
    m.accuracy = static_cast<double>(correct) / n;
    m.cos_anchor_positive /= n;
    m.cos_anchor_negative /= n;
    m.signal_attention /= n;
    return m;
}

/// Trains `model` in place and returns the per-epoch report. Batches follow a
/// per-epoch shuffle seeded from the model seed.
inline RunReport train_model(Model& model, const Dataset& data, const RunOptions& options) {
    options.validate();
    if (data.train.empty() && options.epochs > 0) throw ContractError("training needs a non-empty train split");
    RunReport report;
    report.config = model.config();
    report.epochs.push_back({0, 0.0, evaluate(model, data.eval), true});

    SgdMomentum optimizer(options.lr, options.momentum);
    std::vector<std::size_t> order(data.train.size());
    std::vector<QAInstance> batch;
    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        optimizer.set_learning_rate(options.learning_rate(epoch));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(model.config().seed, 0x73687566ull, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(order.size(), start + options.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(data.train[order[i]]);
            StepStats stats;
            try {
                stats = train_step(model, batch, optimizer, epoch);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " [seed " + std::to_string(model.config().seed) +
                                   ", epoch " + std::to_string(epoch) + "]");
            }
            loss_sum += stats.loss * static_cast<double>(end - start);
        }
        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(order.size());
        record.evaluated = options.evaluate_every_epoch || epoch == options.epochs;
        if (record.evaluated) record.eval = evaluate(model, data.eval);
        report.epochs.push_back(record);
    }
    return report;
}

inline RunReport run_training(const ModelConfig& config, const Dataset& data, const RunOptions& options) {
    Model model(config);
    return train_model(model, data, options);
}

inline RunReport run_training(const ModelConfig& config, const SynthSpec& spec, const RunOptions& options) {
    return run_training(spec.fit(config), generate_dataset(spec), options);
}

inline constexpr std::array<Ablation, 4> kAblations = {Ablation::Baseline, Ablation::VCOOnly,
                                                       Ablation::MLPContrastive, Ablation::GRNContrastive};

inline std::string ablation_name(Ablation a) {
    switch (a) {
    case Ablation::Baseline: return "Baseline";
    case Ablation::VCOOnly: return "VCOOnly";
    case Ablation::MLPContrastive: return "MLPContrastive";
    case Ablation::GRNContrastive: return "GRNContrastive";
    }
    throw ContractError("unknown ablation");
}

inline Ablation parse_ablation(const std::string& name) {
    for (auto a : kAblations) {
        if (ablation_name(a) == name) return a;
    }
    throw ContractError("unknown ablation '" + name + "'");
}

struct AblationRow {
    Ablation ablation;
    RunReport report;
};

struct AblationTable {
    std::vector<AblationRow> rows; // always four, in kAblations order

    double accuracy(Ablation a) const {
        for (const auto& r : rows) {
            if (r.ablation == a) return r.report.final().eval.accuracy;
        }
        throw ContractError("ablation missing from table");
    }
};

/// Every configuration shares the data, the model seed (hence the
/// initialisation of shared parameters) and the batch order.
inline AblationTable run_ablation(const SynthSpec& spec, const ModelConfig& base, const RunOptions& options) {
    const auto data = generate_dataset(spec);
    AblationTable table;
    for (auto a : kAblations) {
        ModelConfig config = spec.fit(base);
        config.ablation = a;
        table.rows.push_back({a, run_training(config, data, options)});
    }
    return table;
}

/// Columns: ablation,epochs,accuracy,cos_anchor_positive,cos_anchor_negative,signal_attention,final_train_loss.
inline std::string ablation_csv(const AblationTable& table) {
    std::string csv =
        "ablation,epochs,accuracy,cos_anchor_positive,cos_anchor_negative,signal_attention,final_train_loss\n";
    for (const auto& row : table.rows) {
        const auto& last = row.report.final();
        csv += ablation_name(row.ablation) + "," + std::to_string(last.epoch) + "," + format_real(last.eval.accuracy) +
               "," + format_real(last.eval.cos_anchor_positive) + "," + format_real(last.eval.cos_anchor_negative) +
               "," + format_real(last.eval.signal_attention) + "," + format_real(last.train_loss) + "\n";
    }
    return csv;
}

} // namespace vchgcl
