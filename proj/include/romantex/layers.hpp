#pragma once

// Token-wise building blocks with explicit backward passes. Activations are
// [tokens × channels] grids; weights multiply from the right (y = x·W + b).

#include "romantex/numerics.hpp"

#include <cmath>
#include <vector>

namespace romantex {

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormTape {
    BasicGrid<T> normalized;
    std::vector<T> rstd;
};

/// Per-token normalization to zero mean / unit variance (no affine terms).
template <typename T>
BasicGrid<T> layer_norm(const BasicGrid<T>& x, LayerNormTape<T>* tape = nullptr) {
    const std::size_t n = x.rows(), c = x.cols();
    BasicGrid<T> y({n, c});
    std::vector<T> rstd(n);
    for (std::size_t t = 0; t < n; ++t) {
        const T* xr = x.row(t);
        T mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(c);
        const T r = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        rstd[t] = r;
        T* yr = y.row(t);
        for (std::size_t j = 0; j < c; ++j) yr[j] = (xr[j] - mu) * r;
    }
    if (tape) {
        tape->normalized = y;
        tape->rstd = std::move(rstd);
    }
    return y;
}

template <typename T>
BasicGrid<T> layer_norm_backward(const LayerNormTape<T>& tape, const BasicGrid<T>& dy) {
    const std::size_t n = dy.rows(), c = dy.cols();
    BasicGrid<T> dx({n, c});
    for (std::size_t t = 0; t < n; ++t) {
        const T* g = dy.row(t);
        const T* xh = tape.normalized.row(t);
        T mg = 0, mgx = 0;
        for (std::size_t j = 0; j < c; ++j) {
            mg += g[j];
            mgx += g[j] * xh[j];
        }
        mg /= static_cast<T>(c);
        mgx /= static_cast<T>(c);
        T* d = dx.row(t);
        for (std::size_t j = 0; j < c; ++j) d[j] = tape.rstd[t] * (g[j] - mg - xh[j] * mgx);
    }
    return dx;
}

template <typename T>
struct Linear {
    BasicGrid<T> weight; // in × out
    BasicGrid<T> bias;   // 1 × out (may be empty)

    BasicGrid<T> forward(const BasicGrid<T>& x) const {
        BasicGrid<T> y({x.rows(), weight.cols()});
        kernels::gemm(x.data(), weight.data(), y.data(), x.rows(), x.cols(), weight.cols(), false);
        if (!bias.empty()) {
            for (std::size_t t = 0; t < y.rows(); ++t) {
                T* yr = y.row(t);
                for (std::size_t j = 0; j < y.cols(); ++j) yr[j] += bias[j];
            }
        }
        return y;
    }

    /// Accumulates weight/bias gradients; returns dx unless `need_dx` is false.
    BasicGrid<T> backward(const BasicGrid<T>& x, const BasicGrid<T>& dy, Linear& grad, bool need_dx = true) const {
        kernels::gemm_tn(x.data(), dy.data(), grad.weight.data(), x.rows(), x.cols(), dy.cols(), true);
        if (!bias.empty()) {
            for (std::size_t t = 0; t < dy.rows(); ++t) {
                const T* g = dy.row(t);
                for (std::size_t j = 0; j < dy.cols(); ++j) grad.bias[j] += g[j];
            }
        }
        if (!need_dx) return {};
        BasicGrid<T> dx({x.rows(), x.cols()});
        kernels::gemm_nt(dy.data(), weight.data(), dx.data(), dy.rows(), dy.cols(), weight.rows(), false);
        return dx;
    }

    static Linear zeros_like(const Linear& l) {
        return Linear{BasicGrid<T>(l.weight.shape()), l.bias.empty() ? BasicGrid<T>() : BasicGrid<T>(l.bias.shape())};
    }
};

template <typename T>
T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

template <typename T>
BasicGrid<T> apply_silu(const BasicGrid<T>& x) {
    BasicGrid<T> y = x;
    for (auto& v : y.values()) v = silu(v);
    return y;
}

template <typename T>
BasicGrid<T> silu_backward(const BasicGrid<T>& x, const BasicGrid<T>& dy) {
    BasicGrid<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= silu_grad(x[i]);
    return dx;
}

/// [H·W × C] → [(H/f)·(W/f) × f·f·C]; sub-pixel (di, dj) lands in channel block di·f + dj.
template <typename T>
BasicGrid<T> space_to_depth(const BasicGrid<T>& x, std::size_t h, std::size_t w, std::size_t f) {
    const std::size_t c = x.cols(), oh = h / f, ow = w / f;
    BasicGrid<T> y({oh * ow, f * f * c});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const std::size_t o = (i / f) * ow + j / f, blk = (i % f) * f + j % f;
            std::copy_n(x.row(i * w + j), c, y.row(o) + blk * c);
        }
    return y;
}

/// Inverse of space_to_depth: [(H/f)·(W/f) × f·f·C] → [H·W × C].
template <typename T>
BasicGrid<T> depth_to_space(const BasicGrid<T>& y, std::size_t h, std::size_t w, std::size_t f) {
    const std::size_t c = y.cols() / (f * f), ow = w / f;
    BasicGrid<T> x({h * w, c});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const std::size_t o = (i / f) * ow + j / f, blk = (i % f) * f + j % f;
            std::copy_n(y.row(o) + blk * c, c, x.row(i * w + j));
        }
    return x;
}

/// Stacks token grids vertically.
template <typename T>
BasicGrid<T> concat_rows(const std::vector<const BasicGrid<T>*>& parts) {
    std::size_t rows = 0;
    const std::size_t c = parts.at(0)->cols();
    for (const auto* p : parts) {
        if (p->cols() != c) throw ShapeError("concat_rows: channel mismatch");
        rows += p->rows();
    }
    BasicGrid<T> out({rows, c});
    std::size_t off = 0;
    for (const auto* p : parts) {
        std::copy(p->values().begin(), p->values().end(), out.data() + off * c);
        off += p->rows();
    }
    return out;
}

/// Copies rows [begin, begin + count) into a new grid.
template <typename T>
BasicGrid<T> slice_rows(const BasicGrid<T>& g, std::size_t begin, std::size_t count) {
    BasicGrid<T> out({count, g.cols()});
    std::copy_n(g.row(begin), count * g.cols(), out.data());
    return out;
}

} // namespace romantex
