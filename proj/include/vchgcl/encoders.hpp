#pragma once

#include <string>

#include "vchgcl/layers.hpp"

namespace vchgcl {

struct AttentionResult {
    Tensor pooled;  // [d]
    Tensor weights; // [N], alpha
};

/// Scalar score per row: act(row . w + b).
struct SoftAttention {
    Linear score; // [d x 1]
    Activation act = Activation::Tanh;

    static SoftAttention create(ParameterStore& store, const std::string& name, std::size_t d,
                                Activation act = Activation::Tanh) {
        return {Linear::create(store, name, d, 1), act};
    }
};

/// alpha = softmax(act(features . w + b)); pooled = sum_i alpha_i features_i.
inline AttentionResult soft_attention(const Tensor& features, const SoftAttention& attn) {
    if (features.rank() != 2) throw ShapeError("soft_attention expects [N x d], got " + shape_str(features.shape()));
    const std::size_t n = features.dim(0), d = features.dim(1);
    auto logits = reshape(activate(attn.score(features), attn.act), {n});
    auto weights = softmax(logits, 0);
    auto pooled = reshape(matmul(reshape(weights, {1, n}), features), {d});
    return {pooled, weights};
}

/// MLP over [pooled : f_ev]. Row-wise, so [T x d] with [T x d_ev] works per frame.
inline Tensor enhance_visual(const Tensor& pooled, const Tensor& f_ev, const Mlp& mlp) {
    auto as_rows = [](const Tensor& t) { return t.rank() == 1 ? reshape(t, {1, t.size()}) : t; };
    auto p = as_rows(pooled);
    auto e = as_rows(f_ev);
    if (p.dim(0) != e.dim(0)) {
        throw ShapeError("enhance_visual: " + shape_str(pooled.shape()) + " vs " + shape_str(f_ev.shape()));
    }
    if (p.dim(1) + e.dim(1) != mlp.in_features()) {
        throw ShapeError("enhance_visual: mlp expects " + std::to_string(mlp.in_features()) + " inputs, got " +
                         std::to_string(p.dim(1) + e.dim(1)));
    }
    auto out = mlp(concat({p, e}, 1));
    return pooled.rank() == 1 ? reshape(out, {out.size()}) : out;
}

/// Single-layer GRU, gate layout [update z | reset r | candidate]:
///   z = sigmoid(x Wz + h Uz + bz)
///   r = sigmoid(x Wr + h Ur + br)
///   c = tanh(x Wc + (r * h) Uc + bc)
///   h' = (1 - z) * h + z * c
struct GruParams {
    Tensor input_weight;  // [d_in x 3h]
    Tensor hidden_gates;  // [h x 2h]  (Uz | Ur)
    Tensor hidden_cand;   // [h x h]   Uc
    Tensor bias;          // [3h]

    static GruParams create(ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t hidden) {
        return {store.create(name + ".input_weight", {d_in, 3 * hidden}, d_in),
                store.create(name + ".hidden_gates", {hidden, 2 * hidden}, hidden),
                store.create(name + ".hidden_cand", {hidden, hidden}, hidden),
                store.create(name + ".bias", {3 * hidden}, hidden)};
    }

    std::size_t input_size() const { return input_weight.dim(0); }
    std::size_t hidden_size() const { return hidden_cand.dim(0); }
};

/// Runs the recurrence left to right and returns every hidden state, [T x h].
inline Tensor gru_encode(const Tensor& seq, const GruParams& gru, const Tensor& h0) {
    const std::size_t hs = gru.hidden_size();
    if (seq.rank() != 2 || seq.dim(1) != gru.input_size()) {
        throw ShapeError("gru_encode: sequence " + shape_str(seq.shape()) + " does not fit input size " +
                         std::to_string(gru.input_size()));
    }
    if (h0.size() != hs) {
        throw ShapeError("gru_encode: h0 " + shape_str(h0.shape()) + " does not match hidden size " +
                         std::to_string(hs));
    }
    const auto projected = add_bias(matmul(seq, gru.input_weight), gru.bias); // [T x 3h]
    Tensor h = reshape(h0, {1, hs});
    std::vector<Tensor> states;
    states.reserve(seq.dim(0));
    for (std::size_t t = 0; t < seq.dim(0); ++t) {
        auto x = row(projected, t);
        auto gates = sigmoid(add(slice(x, 1, 0, 2 * hs), matmul(h, gru.hidden_gates)));
        auto z = slice(gates, 1, 0, hs);
        auto r = slice(gates, 1, hs, 2 * hs);
        auto cand = tanh(add(slice(x, 1, 2 * hs, 3 * hs), matmul(mul(r, h), gru.hidden_cand)));
        h = add(h, mul(z, sub(cand, h)));
        states.push_back(h);
    }
    return states.size() == 1 ? states.front() : concat(states, 0);
}

} // namespace vchgcl
