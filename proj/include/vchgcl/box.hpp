#pragma once

#include <algorithm>
#include <string>

#include "vchgcl/errors.hpp"

namespace vchgcl {

/// Axis-aligned box in pixel coordinates.
struct Box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    bool well_formed() const { return x_min < x_max && y_min < y_max; }
    double area() const { return (x_max - x_min) * (y_max - y_min); }

    friend bool operator==(const Box&, const Box&) = default;
};

inline void require_well_formed(const Box& b) {
    if (!b.well_formed()) {
        throw ContractError("malformed box (" + std::to_string(b.x_min) + ", " + std::to_string(b.y_min) + ", " +
                            std::to_string(b.x_max) + ", " + std::to_string(b.y_max) + ")");
    }
}

/// Intersection over union. Boxes that only share an edge or a corner have
/// zero intersection and therefore IoU 0.
inline double iou(const Box& a, const Box& b) {
    require_well_formed(a);
    require_well_formed(b);
    const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    const double inter = w * h;
    return inter / (a.area() + b.area() - inter);
}

} // namespace vchgcl
