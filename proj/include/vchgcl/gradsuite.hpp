#pragma once

// Finite-difference sweep over every differentiable operation, the composite
// layers, and the full model loss on a minimal instance.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vchgcl/gradcheck.hpp"
#include "vchgcl/harness.hpp"

namespace vchgcl {

struct GradSuiteEntry {
    std::string name;
    GradCheckResult result;
    std::size_t coordinates = 0;
};

namespace detail {

class GradSuiteBuilder {
public:
    explicit GradSuiteBuilder(std::uint64_t seed) : rng_(seed) {}

    Tensor random(Shape shape, double lo = -1.0, double hi = 1.0) {
        std::uniform_real_distribution<double> u(lo, hi);
        std::vector<double> v(shape_size(shape));
        for (double& x : v) x = u(rng_);
        return Tensor(std::move(shape), std::move(v), true);
    }

    // Entries bounded away from zero, for ops with a kink there.
    Tensor away_from_zero(Shape shape) {
        auto t = random(std::move(shape));
        for (double& x : t.mutable_data()) x = x >= 0.0 ? 0.2 + x : -0.2 + x;
        return t;
    }

    /// Scalar readout sum(y * w) with a fixed random w, so that outputs whose
    /// plain sum is constant (softmax, layer_norm) still get a nontrivial check.
    Tensor readout(const Tensor& y) {
        auto key = y.shape();
        auto it = std::find_if(weights_.begin(), weights_.end(), [&](const auto& e) { return e.first == key; });
        if (it == weights_.end()) {
            weights_.emplace_back(key, random(key).detach());
            it = std::prev(weights_.end());
        }
        return sum(mul(y, it->second));
    }

    void check(std::vector<GradSuiteEntry>& out, std::string name, std::function<Tensor()> f,
               std::vector<Tensor> inputs) {
        std::size_t n = 0;
        for (const auto& x : inputs) n += x.size();
        out.push_back({std::move(name), gradient_check_all(f, std::move(inputs), 1e-5), n});
    }

private:
    std::mt19937_64 rng_;
    std::vector<std::pair<Shape, Tensor>> weights_;
};

} // namespace detail

/// Minimal synthetic setting for the full-model check: T=2, N=2, M_q=3, C=2
/// and every width at most 8.
inline SynthSpec minimal_spec(Mode mode = Mode::VideoQA) {
    SynthSpec s;
    s.n_train = 1;
    s.n_eval = 0;
    s.T = mode == Mode::VideoQA ? 2 : 1;
    s.N = 2;
    s.M_q = 3;
    s.C = 2;
    s.answer_len = 1;
    s.vocab = 3;
    s.signal_begin = 0;
    s.signal_end = 3;
    s.d_o = 4;
    s.d_vc = 4;
    s.d_ap = 4;
    s.d_t = 4;
    s.mode = mode;
    return s;
}

inline ModelConfig minimal_config(const SynthSpec& spec) {
    ModelConfig c;
    c.d = 8;
    c.d_ev = 8;
    c.d_h = 8;
    c.d_out = 8;
    c.p = 8;
    return spec.fit(c);
}

/// Gradient of the total loss with respect to every model parameter.
inline GradCheckResult full_model_gradient_check(const Model& model, const QAInstance& q, std::uint64_t noise_seed,
                                                 double h = 1e-5) {
    std::vector<Tensor> params;
    for (const auto& p : model.parameters().all()) params.push_back(p.tensor);
    auto f = [&] {
        auto fwd = model.forward(q, noise_seed);
        return instance_loss(model, fwd, q);
    };
    return gradient_check_all(f, params, h);
}

inline std::vector<GradSuiteEntry> run_operation_gradchecks(std::uint64_t seed = 7) {
    detail::GradSuiteBuilder b(seed);
    std::vector<GradSuiteEntry> out;

    auto a = b.random({3, 4}), m = b.random({4, 2});
    b.check(out, "matmul", [&] { return b.readout(matmul(a, m)); }, {a, m});
    auto x = b.random({3, 4}), y = b.random({3, 4});
    b.check(out, "add", [&] { return b.readout(add(x, y)); }, {x, y});
    b.check(out, "sub", [&] { return b.readout(sub(x, y)); }, {x, y});
    b.check(out, "mul", [&] { return b.readout(mul(x, y)); }, {x, y});
    b.check(out, "scale", [&] { return b.readout(scale(x, -1.7)); }, {x});
    auto bias = b.random({4});
    b.check(out, "add_bias", [&] { return b.readout(add_bias(x, bias)); }, {x, bias});
    b.check(out, "tanh", [&] { return b.readout(tanh(x)); }, {x});
    b.check(out, "sigmoid", [&] { return b.readout(sigmoid(x)); }, {x});
    auto kinked = b.away_from_zero({3, 4});
    b.check(out, "relu", [&] { return b.readout(relu(kinked)); }, {kinked});
    b.check(out, "exp", [&] { return b.readout(exp(x)); }, {x});
    auto positive = b.random({3, 4}, 0.5, 2.0);
    b.check(out, "log", [&] { return b.readout(log(positive)); }, {positive});
    b.check(out, "transpose", [&] { return b.readout(transpose(x)); }, {x});
    b.check(out, "reshape", [&] { return b.readout(reshape(x, {2, 6})); }, {x});
    auto z = b.random({2, 4});
    b.check(out, "concat axis 0", [&] { return b.readout(concat({x, z}, 0)); }, {x, z});
    auto w = b.random({3, 2});
    b.check(out, "concat axis 1", [&] { return b.readout(concat({x, w}, 1)); }, {x, w});
    b.check(out, "slice", [&] { return b.readout(slice(x, 1, 1, 3)); }, {x});
    b.check(out, "row", [&] { return b.readout(row(x, 2)); }, {x});
    b.check(out, "sum", [&] { return scale(sum(x), 0.3); }, {x});
    b.check(out, "mean", [&] { return mul(mean(x), mean(x)); }, {x});
    b.check(out, "sum axis 0", [&] { return b.readout(sum(x, 0)); }, {x});
    b.check(out, "mean axis 1", [&] { return b.readout(mean(x, 1)); }, {x});
    b.check(out, "softmax axis 0", [&] { return b.readout(softmax(x, 0)); }, {x});
    b.check(out, "softmax axis 1", [&] { return b.readout(softmax(x, 1)); }, {x});
    auto gain = b.random({4}), shift = b.random({4});
    b.check(out, "layer_norm", [&] { return b.readout(layer_norm(x, gain, shift, 1e-5)); }, {x, gain, shift});
    auto u = b.random({5}), v = b.random({5});
    b.check(out, "cosine_similarity", [&] { return cosine_similarity(u, v); }, {u, v});

    // Composite layers, checked against their own parameters.
    ParameterStore store(seed);
    auto gru = GruParams::create(store, "gru", 3, 4);
    auto seq = b.random({4, 3});
    b.check(out, "gru_encode", [&] { return b.readout(gru_encode(seq, gru, Tensor::zeros({4}))); },
            {seq, gru.input_weight, gru.hidden_gates, gru.hidden_cand, gru.bias});
    auto attn = SoftAttention::create(store, "attn", 4);
    auto feats = b.random({3, 4});
    b.check(out, "soft_attention", [&] { return b.readout(soft_attention(feats, attn).pooled); },
            {feats, attn.score.weight, attn.score.bias});
    auto cross = CrossAttentionParams::create(store, "cross", 4, 1e-5);
    auto queries = b.random({3, 4}), keys = b.random({2, 4});
    b.check(out, "cross_attend", [&] { return b.readout(cross_attend(queries, keys, cross).output); },
            {queries, keys, cross.query, cross.key, cross.value, cross.ln_gain, cross.ln_shift});
    auto edge = Mlp::create(store, "edge", {8, 8, 1});
    auto node = Mlp::create(store, "node", {6, 8, 4});
    auto vis = b.random({3, 4}), txt = b.random({2, 4});
    const std::vector<Box> boxes = {{0, 0, 2, 2}, {1, 1, 3, 3}, {5, 5, 6, 6}};
    b.check(out, "relation graph",
            [&] { return b.readout(aggregate_and_update(gate_edges(build_graph(vis, txt, boxes, edge)), node)); },
            {vis, txt, edge.layers[0].weight, edge.layers[1].weight, node.layers[0].weight});
    auto pa = b.random({4}), pp = b.random({4}), pn = b.random({4});
    b.check(out, "contrastive_loss", [&] { return contrastive_loss({pa, pp, pn}, 0.5); }, {pa, pp, pn});
    auto scores = Tensor::vector({0.3, 0.1, 0.9, -0.4}, true);
    b.check(out, "hinge_loss", [&] { return hinge_loss(scores, 1); }, {scores});
    return out;
}

/// Full three-branch loss on the minimal instance, video and image mode.
inline std::vector<GradSuiteEntry> run_model_gradchecks(std::uint64_t seed = 7) {
    std::vector<GradSuiteEntry> out;
    for (auto mode : {Mode::VideoQA, Mode::ImageQA}) {
        auto spec = minimal_spec(mode);
        spec.seed = seed;
        auto data = generate_dataset(spec);
        auto config = minimal_config(spec);
        config.seed = seed;
        Model model(config);
        std::size_t n = model.parameters().scalar_count();
        out.push_back({std::string("full model (") + (mode == Mode::VideoQA ? "video" : "image") + ")",
                       full_model_gradient_check(model, data.train.front(), mix_seed(seed, 1)), n});
    }
    return out;
}

} // namespace vchgcl
