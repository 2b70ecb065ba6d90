#pragma once

// Anchor / positive / negative commonsense-fused object representations.
//
//   anchor    W  [f_vc : f_o] + b
//   positive  W+ ([f_vc : f_o] + noise) + b+,  noise ~ N(0, sigma^2)
//   negative  W- [0 : f_o] + b-

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "vchgcl/box.hpp"
#include "vchgcl/layers.hpp"

namespace vchgcl {

/// Objects detected in one frame (or one image).
struct ObjectFrame {
    Tensor f_o;  // [N x d_o] object appearance features
    Tensor f_vc; // [N x d_vc] visual-commonsense features
    std::vector<Box> boxes;

    std::size_t objects() const { return f_o.dim(0); }

    void validate() const {
        if (f_o.rank() != 2 || f_vc.rank() != 2 || f_o.dim(0) != f_vc.dim(0)) {
            throw ShapeError("object frame: f_o " + shape_str(f_o.shape()) + " and f_vc " + shape_str(f_vc.shape()) +
                             " must be matrices with one row per object");
        }
        if (boxes.size() != f_o.dim(0)) {
            throw ShapeError("object frame: " + std::to_string(boxes.size()) + " boxes for " +
                             std::to_string(f_o.dim(0)) + " objects");
        }
        for (const auto& b : boxes) require_well_formed(b);
    }
};

struct FusedFeatures {
    Tensor raw;   // [N x (d_vc + d_o)] before projection
    Tensor fused; // [N x d]
};

struct ContrastiveTriplet {
    Tensor anchor;
    Tensor positive;
    Tensor negative;
};

/// [f_vc : f_o] row by row. With `drop_commonsense` the f_vc slots are exact zeros.
inline Tensor commonsense_concat(const ObjectFrame& frame, bool drop_commonsense = false) {
    frame.validate();
    const std::size_t n = frame.objects(), d_vc = frame.f_vc.dim(1), d_o = frame.f_o.dim(1);
    std::vector<double> out(n * (d_vc + d_o), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* dst = out.data() + i * (d_vc + d_o);
        if (!drop_commonsense) std::copy_n(frame.f_vc.data().data() + i * d_vc, d_vc, dst);
        std::copy_n(frame.f_o.data().data() + i * d_o, d_o, dst + d_vc);
    }
    return Tensor({n, d_vc + d_o}, std::move(out));
}

inline void require_projection_fits(const Tensor& raw, const Linear& proj) {
    if (raw.dim(1) != proj.in_features()) {
        throw ShapeError("fusion projection expects " + std::to_string(proj.in_features()) +
                         " input features, frame provides " + std::to_string(raw.dim(1)));
    }
}

inline FusedFeatures fuse_anchor(const ObjectFrame& frame, const Linear& proj) {
    auto raw = commonsense_concat(frame);
    require_projection_fits(raw, proj);
    return {raw, proj(raw)};
}

/// Population standard deviation over every entry.
inline double population_std(std::span<const double> values) {
    double mu = 0.0;
    for (double v : values) mu += v;
    mu /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mu) * (v - mu);
    return std::sqrt(var / static_cast<double>(values.size()));
}

/// raw + N(0, sigma^2) noise. sigma is the anchor's own spread unless fixed.
inline Tensor perturb_anchor(const Tensor& raw, std::uint64_t seed, std::optional<double> fixed_sigma = std::nullopt) {
    const double sigma = fixed_sigma.value_or(population_std(raw.data()));
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw NumericError("positive noise scale must be finite and >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> out = raw.to_vector();
    for (double& v : out) v += sigma * gauss(rng);
    return Tensor(raw.shape(), std::move(out));
}

inline FusedFeatures make_positive(const Tensor& anchor_raw, const Linear& proj_plus, std::uint64_t seed,
                                   std::optional<double> fixed_sigma = std::nullopt) {
    require_projection_fits(anchor_raw, proj_plus);
    auto raw = perturb_anchor(anchor_raw, seed, fixed_sigma);
    return {raw, proj_plus(raw)};
}

/// Commonsense slots zero-padded so all three projections share one input width.
inline FusedFeatures make_negative(const ObjectFrame& frame, const Linear& proj_minus) {
    auto raw = commonsense_concat(frame, true);
    require_projection_fits(raw, proj_minus);
    return {raw, proj_minus(raw)};
}

} // namespace vchgcl
