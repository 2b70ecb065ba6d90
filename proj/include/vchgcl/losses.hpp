#pragma once

#include <cstddef>
#include <vector>

#include "vchgcl/ops.hpp"

namespace vchgcl {

/// Projected anchor / positive / negative embeddings.
struct ProjectedTriplet {
    Tensor anchor;
    Tensor positive;
    Tensor negative;
};

/// Two-term InfoNCE over cosine similarities:
///   -log( exp(d(a,p)/tau) / (exp(d(a,p)/tau) + exp(d(a,n)/tau)) )
inline Tensor contrastive_loss(const ProjectedTriplet& t, double tau) {
    if (!(tau > 0.0)) throw ContractError("contrastive temperature must be positive");
    auto logits = scale(concat({cosine_similarity(t.anchor, t.positive), cosine_similarity(t.anchor, t.negative)}, 0),
                        1.0 / tau);
    return scale(log(slice(softmax(logits, 0), 0, 0, 1)), -1.0);
}

/// sum over incorrect candidates i of max(0, 1 + s_i - s_correct).
inline Tensor hinge_loss(const Tensor& scores, std::size_t correct_index) {
    const std::size_t c = scores.size();
    if (c < 2) throw ContractError("hinge loss needs at least two candidates");
    if (correct_index >= c) throw ContractError("correct index out of range");
    auto flat = reshape(scores, {c});
    auto correct = slice(flat, 0, correct_index, correct_index + 1);
    std::vector<Tensor> wrong;
    for (std::size_t i = 0; i < c; ++i) {
        if (i != correct_index) wrong.push_back(slice(flat, 0, i, i + 1));
    }
    // (s_i - s_c) + 1 rather than (s_i + 1) - s_c: a shift common to all
    // scores then cancels before the margin constant is added.
    auto gaps = sub(concat(wrong, 0), reshape(matmul(Tensor::ones({c - 1, 1}), reshape(correct, {1, 1})), {c - 1}));
    return sum(relu(add_bias(gaps, Tensor::ones({c - 1}))));
}

inline Tensor total_loss(const Tensor& answer_loss, const Tensor& contrastive, double lambda) {
    if (!(lambda >= 0.0)) throw ContractError("lambda must be non-negative");
    return add(answer_loss, scale(contrastive, lambda));
}

} // namespace vchgcl
