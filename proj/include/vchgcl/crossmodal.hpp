#pragma once

// Bidirectional single-head attention between the text and visual streams,
// each followed by a post-norm residual:
//   beta = row_softmax((Q Wq)(K Wk)^T)
//   out  = LayerNorm(Q + FFN(beta (K Wv)))
// Scores are plain dot products with no 1/sqrt(d) scaling.

#include <string>

#include "vchgcl/layers.hpp"

namespace vchgcl {

struct CrossAttentionParams {
    Tensor query; // [d x d]
    Tensor key;   // [d x d]
    Tensor value; // [d x d]
    Mlp ffn;      // d -> 2d -> d
    Tensor ln_gain;
    Tensor ln_shift;
    double ln_eps = 1e-5;

    static CrossAttentionParams create(ParameterStore& store, const std::string& name, std::size_t d,
                                       double ln_eps = 1e-5) {
        CrossAttentionParams p;
        p.query = store.create(name + ".query", {d, d}, d);
        p.key = store.create(name + ".key", {d, d}, d);
        p.value = store.create(name + ".value", {d, d}, d);
        p.ffn = Mlp::create(store, name + ".ffn", {d, 2 * d, d});
        p.ln_gain = store.create_filled(name + ".ln_gain", {d}, 1.0);
        p.ln_shift = store.create_filled(name + ".ln_shift", {d}, 0.0);
        p.ln_eps = ln_eps;
        return p;
    }

    std::size_t width() const { return query.dim(0); }
};

struct CrossAttentionResult {
    Tensor output;    // same shape as queries
    Tensor attention; // [queries x keys], rows sum to 1
};

inline CrossAttentionResult cross_attend(const Tensor& queries, const Tensor& keys, const CrossAttentionParams& p) {
    const std::size_t d = p.width();
    if (queries.rank() != 2 || keys.rank() != 2 || queries.dim(1) != d || keys.dim(1) != d) {
        throw ShapeError("cross attention of width " + std::to_string(d) + " cannot take queries " +
                         shape_str(queries.shape()) + " and keys " + shape_str(keys.shape()));
    }
    auto scores = matmul(matmul(queries, p.query), transpose(matmul(keys, p.key)));
    auto beta = softmax(scores, 1);
    auto context = matmul(beta, matmul(keys, p.value));
    auto out = layer_norm(add(queries, p.ffn(context)), p.ln_gain, p.ln_shift, p.ln_eps);
    return {out, beta};
}

/// Text tokens query the visual nodes.
inline CrossAttentionResult attend_text_over_visual(const Tensor& text, const Tensor& visual,
                                                    const CrossAttentionParams& p) {
    return cross_attend(text, visual, p);
}

/// Visual nodes query the text tokens.
inline CrossAttentionResult attend_visual_over_text(const Tensor& visual, const Tensor& text,
                                                    const CrossAttentionParams& p) {
    return cross_attend(visual, text, p);
}

struct CrossModalState {
    Tensor text;   // [M x d]
    Tensor visual; // [K x d]
    Tensor beta_v; // [M x K] text -> visual
    Tensor beta_t; // [K x M] visual -> text
};

/// Both directions read the original (pre-attention) streams.
inline CrossModalState cross_modal(const Tensor& text, const Tensor& visual, const CrossAttentionParams& text_side,
                                   const CrossAttentionParams& visual_side) {
    auto t = attend_text_over_visual(text, visual, text_side);
    auto v = attend_visual_over_text(visual, text, visual_side);
    return {t.output, v.output, t.attention, v.attention};
}

} // namespace vchgcl
