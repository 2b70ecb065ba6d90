#pragma once

// Graph Relation Network over a fully connected graph of visual and text
// nodes.
//
//   e(i,j)  = MLP_R([n_i : n_j])
//   g(i,j)  = e(i,j), except 0 for visual pairs whose boxes do not intersect
//   a_i     = sum_{j != i} g(i,j) / (K + M - 1)
//   n_i'    = n_i + MLP_N([a_i : mean_k a_k : n_i])
//
// Gated edges stay in the denominator of a_i: gating contributes zeros, it
// does not shrink the neighbourhood.

#include <string>
#include <vector>

#include "vchgcl/box.hpp"
#include "vchgcl/encoders.hpp"
#include "vchgcl/layers.hpp"

namespace vchgcl {

enum class NodeKind { Visual, Text };

struct HeteroGraph {
    Tensor nodes;                // [(K+M) x d], visual rows first
    std::vector<NodeKind> kinds; // K+M entries
    std::vector<Box> boxes;      // one per visual node; empty when boxes are not used
    Tensor edges;                // [(K+M) x (K+M)] raw scores e(i,j)
    Tensor gate_mask;            // 0/1, same shape
    Tensor gated;                // edges * gate_mask

    std::size_t size() const { return kinds.size(); }
};

/// MLP_R on every ordered pair. The first layer is split into the halves that
/// see n_i and n_j, so the pair pre-activations are row sums rather than
/// (K+M)^2 concatenations; the result is the same function.
inline Tensor edge_scores(const Tensor& nodes, const Mlp& mlp_r) {
    if (nodes.rank() != 2) throw ShapeError("edge_scores expects [n x d], got " + shape_str(nodes.shape()));
    const std::size_t n = nodes.dim(0), d = nodes.dim(1);
    if (n < 2) throw ContractError("edge_scores needs at least two nodes");
    if (mlp_r.in_features() != 2 * d || mlp_r.out_features() != 1) {
        throw ShapeError("edge mlp must map " + std::to_string(2 * d) + " -> 1");
    }
    const Linear& first = mlp_r.layers.front();
    auto from_i = matmul(nodes, slice(first.weight, 0, 0, d));
    auto from_j = add_bias(matmul(nodes, slice(first.weight, 0, d, 2 * d)), first.bias);
    std::vector<Tensor> blocks;
    blocks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) blocks.push_back(add_bias(from_j, row(from_i, i)));
    Tensor h = concat(blocks, 0); // row i*n + j holds pair (i, j)
    for (std::size_t l = 1; l < mlp_r.layers.size(); ++l) h = mlp_r.layers[l](activate(h, mlp_r.act));
    return reshape(h, {n, n});
}

/// 1 everywhere except visual-visual pairs with zero box overlap.
inline Tensor iou_gate_mask(const std::vector<NodeKind>& kinds, const std::vector<Box>& boxes) {
    const std::size_t n = kinds.size();
    std::vector<double> mask(n * n, 1.0);
    if (boxes.empty()) return Tensor({n, n}, std::move(mask));
    std::vector<std::size_t> box_of(n, 0);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (kinds[i] == NodeKind::Visual) box_of[i] = next++;
    }
    if (next != boxes.size()) {
        throw ContractError("graph has " + std::to_string(next) + " visual nodes but " + std::to_string(boxes.size()) +
                            " boxes");
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (kinds[i] == NodeKind::Visual && kinds[j] == NodeKind::Visual &&
                iou(boxes[box_of[i]], boxes[box_of[j]]) == 0.0) {
                mask[i * n + j] = 0.0;
            }
        }
    }
    return Tensor({n, n}, std::move(mask));
}

/// Stacks the nodes and scores every pair. Gating is not applied yet.
inline HeteroGraph build_graph(const Tensor& visual, const Tensor& text, std::vector<Box> boxes, const Mlp& mlp_r) {
    HeteroGraph g;
    g.nodes = concat({visual, text}, 0);
    g.kinds.assign(visual.dim(0), NodeKind::Visual);
    g.kinds.insert(g.kinds.end(), text.dim(0), NodeKind::Text);
    g.boxes = std::move(boxes);
    g.edges = edge_scores(g.nodes, mlp_r);
    g.gate_mask = Tensor::ones({g.size(), g.size()});
    g.gated = g.edges;
    return g;
}

/// Zeroes visual-visual edges whose boxes do not intersect. Identity when the
/// graph carries no boxes (video mode).
inline HeteroGraph gate_edges(HeteroGraph g) {
    if (g.boxes.empty()) {
        g.gate_mask = Tensor::ones({g.size(), g.size()});
        g.gated = g.edges;
        return g;
    }
    g.gate_mask = iou_gate_mask(g.kinds, g.boxes);
    g.gated = mul(g.edges, g.gate_mask);
    return g;
}

/// Per-node mean of gated incident scores over j != i, the global mean of those
/// aggregates, and a residual MLP_N update.
inline Tensor aggregate_and_update(const HeteroGraph& g, const Mlp& mlp_n) {
    const std::size_t n = g.size();
    if (n < 2) throw ContractError("aggregation needs at least two nodes");
    std::vector<double> off_diag(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) off_diag[i * n + i] = 0.0;
    auto neighbours = mul(g.gated, Tensor({n, n}, std::move(off_diag)));
    auto per_node = scale(matmul(neighbours, Tensor::ones({n, 1})), 1.0 / static_cast<double>(n - 1));
    auto global = matmul(Tensor::ones({n, 1}), reshape(mean(per_node), {1, 1}));
    return add(g.nodes, mlp_n(concat({per_node, global, g.nodes}, 1)));
}

/// Edge-free variant: every node is updated from itself only.
inline Tensor mlp_update(const Tensor& nodes, const Mlp& mlp) { return add(nodes, mlp(nodes)); }

struct GraphHeadResult {
    Tensor output;             // [d_out]
    AttentionResult attention; // over graph nodes
};

/// Soft-attention pooling of the updated nodes, joined with the host feature
/// f_m and projected.
inline GraphHeadResult graph_head(const Tensor& updated, const SoftAttention& attn, const Tensor& f_m,
                                  const Linear& out) {
    auto pooled = soft_attention(updated, attn);
    auto joined = concat({pooled.pooled, reshape(f_m, {f_m.size()})}, 0);
    if (joined.size() != out.in_features()) {
        throw ShapeError("graph head expects " + std::to_string(out.in_features()) + " features, got " +
                         std::to_string(joined.size()));
    }
    auto result = out(reshape(joined, {1, joined.size()}));
    return {reshape(result, {result.size()}), pooled};
}

} // namespace vchgcl
