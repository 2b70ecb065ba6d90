#pragma once

#include <string>
#include <vector>

#include "vchgcl/ops.hpp"
#include "vchgcl/parameters.hpp"

namespace vchgcl {

enum class Activation { Tanh, Sigmoid, Identity };

inline Tensor activate(const Tensor& x, Activation act) {
    switch (act) {
    case Activation::Tanh: return tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Identity: return x;
    }
    return x;
}

/// x . weight + bias, applied to every row of x.
struct Linear {
    Tensor weight; // [in x out]
    Tensor bias;   // [out]

    static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out) {
        return {store.create(name + ".weight", {in, out}, in), store.create(name + ".bias", {out}, in)};
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor operator()(const Tensor& x) const {
        if (x.rank() != 2 || x.dim(1) != in_features()) {
            throw ShapeError("linear layer expects [* x " + std::to_string(in_features()) + "], got " +
                             shape_str(x.shape()));
        }
        return add_bias(matmul(x, weight), bias);
    }
};

/// Affine layers with `act` between consecutive layers (never after the last).
struct Mlp {
    std::vector<Linear> layers;
    Activation act = Activation::Tanh;

    /// widths = {in, hidden..., out}
    static Mlp create(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths,
                      Activation act = Activation::Tanh) {
        if (widths.size() < 2) throw ContractError("mlp '" + name + "' needs at least input and output widths");
        Mlp mlp;
        mlp.act = act;
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            mlp.layers.push_back(Linear::create(store, name + "." + std::to_string(i), widths[i], widths[i + 1]));
        }
        return mlp;
    }

    std::size_t in_features() const { return layers.front().in_features(); }
    std::size_t out_features() const { return layers.back().out_features(); }

    Tensor operator()(const Tensor& x) const {
        Tensor h = layers.front()(x);
        for (std::size_t i = 1; i < layers.size(); ++i) h = layers[i](activate(h, act));
        return h;
    }
};

} // namespace vchgcl
