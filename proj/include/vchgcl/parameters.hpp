#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vchgcl/tensor.hpp"

namespace vchgcl {

inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Mixes any number of integers into one stream seed.
template <class... Ints>
std::uint64_t mix_seed(std::uint64_t first, Ints... rest) {
    std::uint64_t h = splitmix64(first);
    ((h = splitmix64(h ^ static_cast<std::uint64_t>(rest))), ...);
    return h;
}

struct Parameter {
    std::string name;
    Tensor tensor;
};

/// Named trainable tensors of one model. Each parameter draws its initial
/// values from a stream keyed by (seed, name), so two models built with the
/// same seed agree on every parameter they have in common.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    Tensor create(const std::string& name, Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::mt19937_64 rng(mix_seed(seed_, fnv1a(name)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> values(shape_size(shape));
        for (double& v : values) v = dist(rng);
        return insert(name, Tensor(std::move(shape), std::move(values), true));
    }

    Tensor create_filled(const std::string& name, Shape shape, double value) {
        return insert(name, Tensor::full(std::move(shape), value, true));
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return params_[it->second].tensor;
    }

    std::span<const Parameter> all() const { return params_; }
    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

private:
    Tensor insert(const std::string& name, Tensor t) {
        if (!index_.emplace(name, params_.size()).second) {
            throw ContractError("duplicate parameter name '" + name + "'");
        }
        params_.push_back({name, t});
        return t;
    }

    std::uint64_t seed_;
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace vchgcl
