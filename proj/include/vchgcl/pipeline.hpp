#pragma once

// Three-branch model: anchor / positive / negative visual features run through
// the shared encoder, cross-modal and relation stack; the anchor branch scores
// every candidate answer and the projected branch outputs feed the
// contrastive term.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vchgcl/crossmodal.hpp"
#include "vchgcl/encoders.hpp"
#include "vchgcl/fusion.hpp"
#include "vchgcl/grn.hpp"
#include "vchgcl/losses.hpp"

namespace vchgcl {

enum class Mode { VideoQA, ImageQA };

/// Model variants compared in the ablation table.
enum class Ablation {
    Baseline,       // commonsense features zeroed, no contrastive term
    VCOOnly,        // commonsense concatenated, no contrastive term
    MLPContrastive, // contrastive term, per-node MLP instead of the relation graph
    GRNContrastive, // full model
};

struct ModelConfig {
    std::size_t d_o = 32;   // object feature width
    std::size_t d_vc = 8;   // commonsense feature width
    std::size_t d = 16;     // fused object width
    std::size_t d_ap = 8;   // appearance input width (video)
    std::size_t d_ev = 16;  // enhanced visual width
    std::size_t d_t = 8;    // token embedding width
    std::size_t d_h = 16;   // recurrent / cross-modal width
    std::size_t d_out = 32; // head output width
    std::size_t p = 16;     // projector output width
    double tau = 0.5;
    double lambda = 1.7;
    Mode mode = Mode::VideoQA;
    std::optional<double> fixed_sigma; // positive noise scale; anchor std when empty
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::GRNContrastive;
    bool share_branch_weights = false;
    Activation attention_activation = Activation::Tanh;
    double ln_eps = 1e-5;

    bool uses_commonsense() const { return ablation != Ablation::Baseline; }
    bool uses_contrastive() const {
        return ablation == Ablation::MLPContrastive || ablation == Ablation::GRNContrastive;
    }
    bool uses_graph() const { return ablation == Ablation::GRNContrastive; }
    double effective_lambda() const { return uses_contrastive() ? lambda : 0.0; }

    void validate() const {
        for (auto w : {d_o, d_vc, d, d_ap, d_ev, d_t, d_h, d_out, p}) {
            if (w == 0) throw ContractError("model dimensions must be positive");
        }
        if (!(tau > 0.0)) throw ContractError("tau must be positive");
        if (!(lambda >= 0.0)) throw ContractError("lambda must be non-negative");
        if (fixed_sigma && !(*fixed_sigma >= 0.0)) throw ContractError("fixed sigma must be non-negative");
        if (mode == Mode::ImageQA && d != d_h) {
            throw ContractError("image mode feeds fused objects straight into the graph, so d must equal d_h");
        }
    }
};

/// One multiple-choice question.
struct QAInstance {
    std::uint64_t id = 0;
    std::vector<ObjectFrame> frames; // T frames (video) or one image
    Tensor appearance;               // [T x d_ap]; unused in image mode
    Tensor question;                 // [M_q x d_t]
    std::vector<Tensor> candidates;  // C sequences of [L_c x d_t]
    std::size_t correct_index = 0;
    std::vector<std::size_t> signal_objects; // optional, one per frame (synthetic data only)

    std::size_t num_candidates() const { return candidates.size(); }
};

struct Diagnostics {
    std::size_t branches = 1; // 3 when positive and negative were built
    std::vector<std::vector<double>> object_attention; // per frame, anchor branch
    std::vector<NodeKind> node_kinds;
    std::vector<std::vector<double>> node_attention; // per candidate
    std::vector<std::vector<double>> gated_edges;    // per candidate, row-major; empty without the graph
    std::vector<std::vector<double>> gate_mask;      // per candidate
    double cos_anchor_positive = 0.0;
    double cos_anchor_negative = 0.0;
};

struct ForwardResult {
    Tensor scores;      // [C]
    Tensor contrastive; // scalar; exactly 0 without the contrastive term
    Diagnostics diagnostics;
};

class Model {
public:
    explicit Model(ModelConfig config) : config_(std::move(config)), store_(config_.seed) {
        config_.validate();
        const auto& c = config_;
        const std::size_t raw = c.d_vc + c.d_o;
        anchor_proj_ = Linear::create(store_, "fusion.anchor", raw, c.d);
        if (c.uses_contrastive()) {
            if (c.share_branch_weights) {
                positive_proj_ = anchor_proj_;
                negative_proj_ = anchor_proj_;
            } else {
                positive_proj_ = Linear::create(store_, "fusion.positive", raw, c.d);
                negative_proj_ = Linear::create(store_, "fusion.negative", raw, c.d);
            }
        }
        if (c.mode == Mode::VideoQA) {
            object_attention_ = SoftAttention::create(store_, "encoder.object_attention", c.d, c.attention_activation);
            appearance_gru_ = GruParams::create(store_, "encoder.appearance_gru", c.d_ap, c.d_ev);
            enhance_ = Mlp::create(store_, "encoder.enhance", {c.d + c.d_ev, c.d_h, c.d_h});
            visual_gru_ = GruParams::create(store_, "encoder.visual_gru", c.d_h, c.d_h);
        }
        text_gru_ = GruParams::create(store_, "encoder.text_gru", c.d_t, c.d_h);
        cross_text_ = CrossAttentionParams::create(store_, "crossmodal.text", c.d_h, c.ln_eps);
        cross_visual_ = CrossAttentionParams::create(store_, "crossmodal.visual", c.d_h, c.ln_eps);
        if (c.uses_graph()) {
            edge_mlp_ = Mlp::create(store_, "grn.edge", {2 * c.d_h, 2 * c.d_h, 1});
            node_mlp_ = Mlp::create(store_, "grn.node", {2 + c.d_h, 2 * c.d_h, c.d_h});
        } else {
            node_mlp_ = Mlp::create(store_, "relation.node", {c.d_h, 2 * c.d_h, c.d_h});
        }
        node_attention_ = SoftAttention::create(store_, "head.node_attention", c.d_h, c.attention_activation);
        head_out_ = Linear::create(store_, "head.output", 2 * c.d_h, c.d_out);
        classifier_ = Linear::create(store_, "classifier", c.d_out, 1);
        if (c.uses_contrastive()) projector_ = Mlp::create(store_, "projector", {c.d_out, c.d_out, c.p});
    }

    const ModelConfig& config() const { return config_; }
    const ParameterStore& parameters() const { return store_; }
    ParameterStore& parameters() { return store_; }

    /// Parameters used only to build or compare the positive and negative branches.
    std::vector<std::string> contrastive_parameter_names() const {
        std::vector<std::string> names;
        for (const auto& p : store_.all()) {
            if (p.name.starts_with("fusion.positive") || p.name.starts_with("fusion.negative") ||
                p.name.starts_with("projector")) {
                names.push_back(p.name);
            }
        }
        return names;
    }

    std::size_t contrastive_parameter_count() const {
        std::size_t n = 0;
        for (const auto& name : contrastive_parameter_names()) n += store_.get(name).size();
        return n;
    }

    void check_instance(const QAInstance& q) const {
        const auto& c = config_;
        if (q.candidates.size() < 2) throw ContractError("an instance needs at least two candidates");
        if (q.correct_index >= q.candidates.size()) throw ContractError("correct index out of range");
        if (q.frames.empty()) throw ContractError("an instance needs at least one frame");
        if (c.mode == Mode::ImageQA && q.frames.size() != 1) throw ContractError("image mode takes exactly one frame");
        for (const auto& f : q.frames) {
            f.validate();
            if (f.f_o.dim(1) != c.d_o || f.f_vc.dim(1) != c.d_vc) {
                throw ShapeError("frame features " + shape_str(f.f_vc.shape()) + " / " + shape_str(f.f_o.shape()) +
                                 " do not match d_vc=" + std::to_string(c.d_vc) + ", d_o=" + std::to_string(c.d_o));
            }
        }
        if (c.mode == Mode::VideoQA &&
            (q.appearance.rank() != 2 || q.appearance.dim(0) != q.frames.size() || q.appearance.dim(1) != c.d_ap)) {
            throw ShapeError("appearance features must be [T x d_ap]");
        }
        auto tokens_ok = [&](const Tensor& t) { return t.defined() && t.rank() == 2 && t.dim(1) == c.d_t; };
        if (!tokens_ok(q.question)) throw ShapeError("question tokens must be [M_q x d_t]");
        for (const auto& cand : q.candidates) {
            if (!tokens_ok(cand)) throw ShapeError("candidate tokens must be [L x d_t] with L >= 1");
        }
    }

    /// Full forward pass. `noise_seed` drives the positive-branch noise.
    ForwardResult forward(const QAInstance& q, std::uint64_t noise_seed) const {
        check_instance(q);
        const auto& c = config_;
        ForwardResult result;
        Diagnostics& diag = result.diagnostics;

        // Visual branches are candidate independent.
        std::vector<Tensor> anchor_raw;
        for (const auto& f : q.frames) anchor_raw.push_back(commonsense_concat(f, !c.uses_commonsense()));
        Tensor f_ev;
        if (c.mode == Mode::VideoQA) f_ev = gru_encode(q.appearance, appearance_gru_, Tensor::zeros({c.d_ev}));

        auto anchor_visual = encode_visual(anchor_raw, anchor_proj_, f_ev, &diag.object_attention);
        const auto boxes = c.mode == Mode::ImageQA ? q.frames.front().boxes : std::vector<Box>{};

        // Question prefix is shared by every candidate continuation.
        auto question_states = gru_encode(q.question, text_gru_, Tensor::zeros({c.d_h}));
        auto last_question_state = row(question_states, question_states.dim(0) - 1);
        auto text_for = [&](std::size_t k) {
            return concat({question_states, gru_encode(q.candidates[k], text_gru_, last_question_state)}, 0);
        };

        std::vector<Tensor> score_rows;
        Tensor anchor_out_correct;
        for (std::size_t k = 0; k < q.candidates.size(); ++k) {
            auto stack = run_stack(anchor_visual, text_for(k), boxes);
            if (k == q.correct_index) anchor_out_correct = stack.output;
            diag.node_attention.push_back(stack.node_weights.to_vector());
            if (stack.gated.defined()) {
                diag.gated_edges.push_back(stack.gated.to_vector());
                diag.gate_mask.push_back(stack.gate_mask.to_vector());
            }
            diag.node_kinds = stack.kinds;
            score_rows.push_back(classifier_(reshape(stack.output, {1, c.d_out})));
        }
        result.scores = reshape(concat(score_rows, 0), {q.candidates.size()});

        if (!c.uses_contrastive()) {
            result.contrastive = Tensor::scalar(0.0);
            return result;
        }

        diag.branches = 3;
        std::vector<Tensor> positive_raw, negative_raw;
        for (std::size_t t = 0; t < q.frames.size(); ++t) {
            positive_raw.push_back(perturb_anchor(anchor_raw[t], mix_seed(noise_seed, t), c.fixed_sigma));
            negative_raw.push_back(commonsense_concat(q.frames[t], true));
        }
        auto positive_visual = encode_visual(positive_raw, positive_proj_, f_ev, nullptr);
        auto negative_visual = encode_visual(negative_raw, negative_proj_, f_ev, nullptr);
        auto text = text_for(q.correct_index);
        ProjectedTriplet triplet{
            project(anchor_out_correct),
            project(run_stack(positive_visual, text, boxes).output),
            project(run_stack(negative_visual, text, boxes).output),
        };
        {
            NoGradGuard no_grad;
            diag.cos_anchor_positive = cosine_similarity(triplet.anchor, triplet.positive).item();
            diag.cos_anchor_negative = cosine_similarity(triplet.anchor, triplet.negative).item();
        }
        result.contrastive = contrastive_loss(triplet, c.tau);
        return result;
    }

private:
    struct StackOutput {
        Tensor output;
        Tensor node_weights;
        Tensor gated;
        Tensor gate_mask;
        std::vector<NodeKind> kinds;
    };

    Tensor project(const Tensor& f_out) const { return projector_(reshape(f_out, {1, f_out.size()})); }

    /// Fused objects -> visual graph nodes: [T x d_h] in video mode (object
    /// attention, enhancement, GRU), [N x d] fused objects in image mode.
    Tensor encode_visual(const std::vector<Tensor>& raw_frames, const Linear& proj, const Tensor& f_ev,
                         std::vector<std::vector<double>>* attention_out) const {
        auto fused = proj(raw_frames.size() == 1 ? raw_frames.front() : concat(raw_frames, 0));
        if (config_.mode == Mode::ImageQA) return fused;
        std::vector<Tensor> pooled;
        std::size_t offset = 0;
        for (const auto& raw : raw_frames) {
            const std::size_t n = raw.dim(0);
            auto attn = soft_attention(slice(fused, 0, offset, offset + n), object_attention_);
            if (attention_out) attention_out->push_back(attn.weights.to_vector());
            pooled.push_back(reshape(attn.pooled, {1, config_.d}));
            offset += n;
        }
        auto enhanced = enhance_visual(pooled.size() == 1 ? pooled.front() : concat(pooled, 0), f_ev, enhance_);
        return gru_encode(enhanced, visual_gru_, Tensor::zeros({config_.d_h}));
    }

    StackOutput run_stack(const Tensor& visual, const Tensor& text, const std::vector<Box>& boxes) const {
        auto cm = cross_modal(text, visual, cross_text_, cross_visual_);
        auto f_m = mean(cm.text, 0);
        StackOutput out;
        Tensor updated;
        if (config_.uses_graph()) {
            auto graph = gate_edges(build_graph(cm.visual, cm.text, boxes, edge_mlp_));
            updated = aggregate_and_update(graph, node_mlp_);
            out.gated = graph.gated;
            out.gate_mask = graph.gate_mask;
            out.kinds = graph.kinds;
        } else {
            updated = mlp_update(concat({cm.visual, cm.text}, 0), node_mlp_);
            out.kinds.assign(cm.visual.dim(0), NodeKind::Visual);
            out.kinds.insert(out.kinds.end(), cm.text.dim(0), NodeKind::Text);
        }
        auto head = graph_head(updated, node_attention_, f_m, head_out_);
        out.output = head.output;
        out.node_weights = head.attention.weights;
        return out;
    }

    ModelConfig config_;
    ParameterStore store_;
    Linear anchor_proj_, positive_proj_, negative_proj_;
    SoftAttention object_attention_;
    GruParams appearance_gru_, visual_gru_, text_gru_;
    Mlp enhance_;
    CrossAttentionParams cross_text_, cross_visual_;
    Mlp edge_mlp_, node_mlp_;
    SoftAttention node_attention_;
    Linear head_out_;
    Linear classifier_;
    Mlp projector_;
};

/// Argmax over candidate scores; ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

inline std::size_t predict(const Model& model, const QAInstance& q) {
    NoGradGuard no_grad;
    return argmax_lowest(model.forward(q, 0).scores.data());
}

/// Hinge answer loss plus lambda times the contrastive term.
inline Tensor instance_loss(const Model& model, const ForwardResult& fwd, const QAInstance& q) {
    return total_loss(hinge_loss(fwd.scores, q.correct_index), fwd.contrastive, model.config().effective_lambda());
}

/// SGD with classical momentum: v = mu v + g; p -= lr v.
class SgdMomentum {
public:
    SgdMomentum(double learning_rate = 1e-3, double momentum = 0.9) : lr_(learning_rate), momentum_(momentum) {
        if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
            throw ContractError("learning rate must be >= 0 and momentum in [0, 1)");
        }
    }

    void step(ParameterStore& store) {
        auto params = store.all();
        if (velocity_.empty()) {
            for (const auto& p : params) velocity_.emplace_back(p.tensor.size(), 0.0);
        }
        if (velocity_.size() != params.size()) throw ContractError("optimizer state does not match the model");
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor t = params[k].tensor;
            auto values = t.mutable_data();
            auto grad = t.grad();
            auto& v = velocity_[k];
            for (std::size_t i = 0; i < values.size(); ++i) {
                v[i] = momentum_ * v[i] + grad[i];
                values[i] -= lr_ * v[i];
            }
        }
    }

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) {
        if (!(lr >= 0.0)) throw ContractError("learning rate must be >= 0");
        lr_ = lr;
    }

private:
    double lr_;
    double momentum_;
    std::vector<std::vector<double>> velocity_;
};

struct StepStats {
    double loss = 0.0;        // mean total loss before the update
    double answer_loss = 0.0; // mean hinge part
    double contrastive = 0.0; // mean contrastive part (unweighted)
};

/// One optimizer update on the batch mean of the total loss. Each instance's
/// graph is released after its backward sweep; gradients accumulate.
inline StepStats train_step(Model& model, std::span<const QAInstance> batch, SgdMomentum& optimizer,
                            std::uint64_t noise_salt = 0) {
    if (batch.empty()) throw ContractError("train_step needs a non-empty batch");
    auto& store = model.parameters();
    store.zero_grad();
    StepStats stats;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto& q = batch[k];
        auto fwd = model.forward(q, mix_seed(model.config().seed, noise_salt, q.id));
        auto answer = hinge_loss(fwd.scores, q.correct_index);
        auto total = total_loss(answer, fwd.contrastive, model.config().effective_lambda());
        if (!std::isfinite(total.item())) {
            throw NumericError("non-finite loss at batch instance " + std::to_string(k) + " (id " +
                               std::to_string(q.id) + "): answer=" + std::to_string(answer.item()) +
                               " contrastive=" + std::to_string(fwd.contrastive.item()));
        }
        stats.loss += total.item() * inv;
        stats.answer_loss += answer.item() * inv;
        stats.contrastive += fwd.contrastive.item() * inv;
        backward(scale(total, inv));
    }
    optimizer.step(store);
    return stats;
}

} // namespace vchgcl
