#pragma once

// Differentiable operations. The set is deliberately small; everything the
// model needs (cosine similarity, GRU cells, pairwise edge scoring) is built
// from these in the layers above.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vchgcl/tensor.hpp"

namespace vchgcl {

namespace detail {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;

inline Node* grad_target(Node& self, std::size_t k) {
    Node* p = self.parents[k].get();
    return p->requires_grad ? p : nullptr;
}

// Views a tensor as [outer, extent, inner] around `axis`.
struct AxisView {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

template <class Fn, class Deriv>
Tensor unary(const Tensor& x, Fn fn, Deriv deriv) {
    std::vector<double> out(x.size());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
    // deriv(input, output) -> d output / d input
    return Tensor::make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
        Node* p = grad_target(self, 0);
        if (!p) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            p->grad[i] += self.grad[i] * deriv(p->data[i], self.data[i]);
        }
    });
}

} // namespace detail

/// [m x k] . [k x n] -> [m x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    using detail::ConstMatrixMap;
    using detail::MatrixMap;
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    std::vector<double> out(static_cast<std::size_t>(m * n));
    MatrixMap(out.data(), m, n).noalias() = ConstMatrixMap(a.data().data(), m, k) * ConstMatrixMap(b.data().data(), k, n);
    return Tensor::make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        ConstMatrixMap G(self.grad.data(), m, n);
        if (auto* pa = detail::grad_target(self, 0)) {
            MatrixMap(pa->grad.data(), m, k).noalias() +=
                G * ConstMatrixMap(self.parents[1]->data.data(), k, n).transpose();
        }
        if (auto* pb = detail::grad_target(self, 1)) {
            MatrixMap(pb->grad.data(), k, n).noalias() +=
                ConstMatrixMap(self.parents[0]->data.data(), m, k).transpose() * G;
        }
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (auto* p = detail::grad_target(self, k)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
        if (auto* p = detail::grad_target(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i];
        }
    });
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const auto& ad = self.parents[0]->data;
        const auto& bd = self.parents[1]->data;
        if (auto* p = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * bd[i];
        }
        if (auto* p = detail::grad_target(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * ad[i];
        }
    });
}

/// Multiplies every entry by a constant.
inline Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * factor;
        }
    });
}

/// Adds `bias` (extent equal to x's last axis) to every trailing row of x.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const std::size_t n = x.shape().back();
    if (bias.size() != n) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(x.shape()));
    }
    std::vector<double> out(x.size());
    auto xd = x.data();
    auto bd = bias.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + bd[i % n];
    return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [n](detail::Node& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
        if (auto* p = detail::grad_target(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i % n] += self.grad[i];
        }
    });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return v < 0.0 ? 0.0 : v; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }); // NaN passes through
}

inline Tensor exp(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
    }
    return detail::unary(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

/// Matrix transpose.
inline Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose needs a matrix, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.data()[i * n + j];
    return Tensor::make_result({n, m}, std::move(out), {x}, [m, n](detail::Node& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) p->grad[i * n + j] += self.grad[j * m + i];
        }
    });
}

/// Same values, new extents.
inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return Tensor::make_result(std::move(shape), x.to_vector(), {x}, [](detail::Node& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& first = parts.front().shape();
    Shape out_shape = first;
    out_shape.at(axis) = 0;
    std::vector<std::size_t> extents;
    for (const auto& t : parts) {
        if (t.rank() != first.size()) throw ShapeError("concat: rank mismatch " + shape_str(t.shape()));
        for (std::size_t d = 0; d < first.size(); ++d) {
            if (d != axis && t.dim(d) != first[d]) {
                throw ShapeError("concat: " + shape_str(t.shape()) + " incompatible with " + shape_str(first) +
                                 " along axis " + std::to_string(axis));
            }
        }
        extents.push_back(t.dim(axis));
        out_shape[axis] += t.dim(axis);
    }
    const auto view = detail::axis_view(out_shape, axis);
    std::vector<double> out(shape_size(out_shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].data();
        const std::size_t chunk = extents[k] * view.inner;
        for (std::size_t o = 0; o < view.outer; ++o) {
            std::copy_n(src.data() + o * chunk, chunk, out.data() + (o * view.extent + offset) * view.inner);
        }
        offset += extents[k];
    }
    return Tensor::make_result(out_shape, std::move(out), parts, [view, extents](detail::Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            const std::size_t chunk = extents[k] * view.inner;
            if (auto* p = detail::grad_target(self, k)) {
                for (std::size_t o = 0; o < view.outer; ++o) {
                    const double* g = self.grad.data() + (o * view.extent + off) * view.inner;
                    double* dst = p->grad.data() + o * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
                }
            }
            off += extents[k];
        }
    });
}

/// Entries [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto view = detail::axis_view(x.shape(), axis);
    if (begin >= end || end > view.extent) {
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_str(x.shape()) + " on axis " + std::to_string(axis));
    }
    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    const std::size_t chunk = (end - begin) * view.inner;
    std::vector<double> out(shape_size(out_shape));
    auto src = x.data();
    for (std::size_t o = 0; o < view.outer; ++o) {
        std::copy_n(src.data() + (o * view.extent + begin) * view.inner, chunk, out.data() + o * chunk);
    }
    return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [view, begin, chunk](detail::Node& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            for (std::size_t o = 0; o < view.outer; ++o) {
                double* dst = p->grad.data() + (o * view.extent + begin) * view.inner;
                const double* g = self.grad.data() + o * chunk;
                for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
            }
        }
    });
}

/// Row `index` of a matrix as a [1 x n] tensor.
inline Tensor row(const Tensor& x, std::size_t index) { return slice(x, 0, index, index + 1); }

/// Sum of all entries, as a one-element tensor.
inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return Tensor::make_result({1}, {acc}, {x}, [](detail::Node& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            for (double& g : p->grad) g += self.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Sum along `axis`; the axis is removed (a rank-1 input yields shape [1]).
inline Tensor sum(const Tensor& x, std::size_t axis) {
    const auto view = detail::axis_view(x.shape(), axis);
    Shape out_shape;
    for (std::size_t d = 0; d < x.rank(); ++d)
        if (d != axis) out_shape.push_back(x.dim(d));
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(view.outer * view.inner, 0.0);
    auto src = x.data();
    for (std::size_t o = 0; o < view.outer; ++o)
        for (std::size_t e = 0; e < view.extent; ++e)
            for (std::size_t i = 0; i < view.inner; ++i)
                out[o * view.inner + i] += src[(o * view.extent + e) * view.inner + i];
    return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [view](detail::Node& self) {
        if (auto* p = detail::grad_target(self, 0)) {
            for (std::size_t o = 0; o < view.outer; ++o)
                for (std::size_t e = 0; e < view.extent; ++e)
                    for (std::size_t i = 0; i < view.inner; ++i)
                        p->grad[(o * view.extent + e) * view.inner + i] += self.grad[o * view.inner + i];
        }
    });
}

inline Tensor mean(const Tensor& x, std::size_t axis) {
    const double n = static_cast<double>(x.dim(axis));
    return scale(sum(x, axis), 1.0 / n);
}

/// Normalized exponentials along `axis`, computed with max subtraction.
inline Tensor softmax(const Tensor& x, std::size_t axis = 0) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    }
    const auto view = detail::axis_view(x.shape(), axis);
    std::vector<double> out(x.size());
    auto src = x.data();
    for (std::size_t o = 0; o < view.outer; ++o) {
        for (std::size_t i = 0; i < view.inner; ++i) {
            auto at = [&](std::size_t e) { return (o * view.extent + e) * view.inner + i; };
            double hi = src[at(0)];
            for (std::size_t e = 1; e < view.extent; ++e) hi = std::max(hi, src[at(e)]);
            double total = 0.0;
            for (std::size_t e = 0; e < view.extent; ++e) {
                out[at(e)] = std::exp(src[at(e)] - hi);
                total += out[at(e)];
            }
            for (std::size_t e = 0; e < view.extent; ++e) out[at(e)] /= total;
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [view](detail::Node& self) {
        auto* p = detail::grad_target(self, 0);
        if (!p) return;
        for (std::size_t o = 0; o < view.outer; ++o) {
            for (std::size_t i = 0; i < view.inner; ++i) {
                auto at = [&](std::size_t e) { return (o * view.extent + e) * view.inner + i; };
                double dot = 0.0;
                for (std::size_t e = 0; e < view.extent; ++e) dot += self.grad[at(e)] * self.data[at(e)];
                for (std::size_t e = 0; e < view.extent; ++e)
                    p->grad[at(e)] += self.data[at(e)] * (self.grad[at(e)] - dot);
            }
        }
    });
}

/// gain * (x - mean) / sqrt(var + eps) + shift over the last axis, with the
/// population variance. A row whose denominator is exactly zero normalizes to 0.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    const std::size_t n = x.shape().back();
    if (gain.size() != n || shift.size() != n) {
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / shift " + shape_str(shift.shape()) +
                         " do not fit " + shape_str(x.shape()));
    }
    if (eps < 0.0) throw ContractError("layer_norm: eps must be non-negative");
    const std::size_t rows = x.size() / n;
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    std::vector<double> out(x.size());
    auto xd = x.data();
    auto gd = gain.data();
    auto sd = shift.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += xr[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(n);
        const double denom = std::sqrt(var + eps);
        inv_std[r] = denom > 0.0 ? 1.0 / denom : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            xhat[r * n + i] = (xr[i] - mu) * inv_std[r];
            out[r * n + i] = gd[i] * xhat[r * n + i] + sd[i];
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gain, shift},
        [n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
            const auto& g = self.grad;
            const auto& gain_d = self.parents[1]->data;
            if (auto* px = detail::grad_target(self, 0)) {
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double d = g[r * n + i] * gain_d[i];
                        mean_d += d;
                        mean_dx += d * xhat[r * n + i];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double d = g[r * n + i] * gain_d[i];
                        px->grad[r * n + i] += inv_std[r] * (d - mean_d - xhat[r * n + i] * mean_dx);
                    }
                }
            }
            if (auto* pg = detail::grad_target(self, 1)) {
                for (std::size_t k = 0; k < g.size(); ++k) pg->grad[k % n] += g[k] * xhat[k];
            }
            if (auto* ps = detail::grad_target(self, 2)) {
                for (std::size_t k = 0; k < g.size(); ++k) ps->grad[k % n] += g[k];
            }
        });
}

/// x.y / (|x| |y|) for two tensors of equal size, as a one-element tensor.
/// Built from sum / mul / log / exp so its gradient needs no special case.
inline Tensor cosine_similarity(const Tensor& x, const Tensor& y) {
    if (x.size() != y.size()) {
        throw ShapeError("cosine_similarity: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    auto xf = reshape(x, {x.size()});
    auto yf = reshape(y, {y.size()});
    auto xx = sum(mul(xf, xf));
    auto yy = sum(mul(yf, yf));
    if (!(xx.item() > 0.0) || !(yy.item() > 0.0)) {
        throw DegenerateInputError("cosine_similarity: zero-norm operand");
    }
    auto inv_norms = exp(scale(add(log(xx), log(yy)), -0.5));
    return mul(sum(mul(xf, yf)), inv_norms);
}

} // namespace vchgcl
