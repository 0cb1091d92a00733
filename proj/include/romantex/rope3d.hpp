#pragma once

// 3D-aware rotary positional embedding.
//
// A head of `dim` channels is split into three equal axis blocks (x, y, z),
// each dim/3 channels = dim/6 rotation pairs. Pair i of the block for axis a
// is rotated by angle phase[a]·θ_i with θ_i = base^(−2i/(dim/3)):
//
//   (c0, c1) → (c0·cos − c1·sin, c0·sin + c1·cos)
//
// The dot product of two rotated vectors therefore depends only on the
// per-axis phase difference.

#include "romantex/voxelmap.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace romantex {

struct RopeConfig {
    std::size_t dim = 48;
    double base = 10000.0;

    std::size_t axis_channels() const { return dim / 3; }
    std::size_t pairs_per_axis() const { return dim / 6; }

    void validate() const {
        if (dim == 0 || dim % 6 != 0) {
            throw std::invalid_argument("RopeConfig: dim must be a positive multiple of 6, got " + std::to_string(dim));
        }
        if (!(base > 0)) throw std::invalid_argument("RopeConfig: base must be positive");
    }

    double theta(std::size_t i) const {
        return std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(axis_channels()));
    }
};

/// Cos/sin tables for one phase, laid out per (axis, pair).
template <typename T>
struct RopeAngles {
    std::vector<T> cos, sin;

    RopeAngles(const RopeConfig& cfg, const Phase& phase) {
        const std::size_t pairs = cfg.pairs_per_axis();
        cos.resize(3 * pairs);
        sin.resize(3 * pairs);
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t i = 0; i < pairs; ++i) {
                const double angle = phase[a] * cfg.theta(i);
                cos[a * pairs + i] = static_cast<T>(std::cos(angle));
                sin[a * pairs + i] = static_cast<T>(std::sin(angle));
            }
        }
    }
};

/// In-place rotation of one head vector. `inverse` applies the transpose rotation.
template <typename T>
void rotate_inplace(std::span<T> vec, const RopeAngles<T>& angles, bool inverse = false) {
    const std::size_t pairs3 = angles.cos.size();
    for (std::size_t p = 0; p < pairs3; ++p) {
        const T c = angles.cos[p];
        const T s = inverse ? -angles.sin[p] : angles.sin[p];
        T& a = vec[2 * p];
        T& b = vec[2 * p + 1];
        const T na = a * c - b * s;
        const T nb = a * s + b * c;
        a = na;
        b = nb;
    }
}

template <typename T>
std::vector<T> rotate(std::span<const T> vec, const Phase& phase, const RopeConfig& cfg) {
    cfg.validate();
    if (vec.size() != cfg.dim) {
        throw ShapeError("rope rotate: vector length " + std::to_string(vec.size()) + " != dim " +
                         std::to_string(cfg.dim));
    }
    std::vector<T> out(vec.begin(), vec.end());
    if (phase == Phase{0, 0, 0}) return out;
    rotate_inplace<T>(out, RopeAngles<T>(cfg, phase));
    return out;
}

/// Rotates every token of a [tokens × channels] grid, head by head. Tokens whose
/// phase is invalid pass through untouched. `inverse` undoes a forward rotation
/// (used to back-propagate through the embedding).
template <typename T>
void rotate_tokens_inplace(BasicGrid<T>& tokens, std::span<const Phase> phases, std::span<const std::uint8_t> valid,
                           std::size_t heads, const RopeConfig& cfg, bool inverse = false) {
    cfg.validate();
    if (tokens.rank() != 2 || tokens.rows() != phases.size() || valid.size() != phases.size()) {
        throw ShapeError("rotate_tokens: token/phase count mismatch");
    }
    if (tokens.cols() != heads * cfg.dim) {
        throw ShapeError("rotate_tokens: channels " + std::to_string(tokens.cols()) + " != heads·dim");
    }
    for (std::size_t t = 0; t < tokens.rows(); ++t) {
        if (!valid[t] || phases[t] == Phase{0, 0, 0}) continue;
        const RopeAngles<T> angles(cfg, phases[t]);
        for (std::size_t h = 0; h < heads; ++h) {
            rotate_inplace<T>(std::span<T>(tokens.row(t) + h * cfg.dim, cfg.dim), angles, inverse);
        }
    }
}

/// Latent view as a [H·W × C] token grid.
template <typename T>
struct BasicLatentGrid {
    std::size_t view_id = 0;
    std::size_t height = 0, width = 0, channels = 0;
    BasicGrid<T> data; // (H·W) × C

    BasicLatentGrid() = default;
    BasicLatentGrid(std::size_t view, std::size_t h, std::size_t w, std::size_t c, T fill = T(0))
        : view_id(view), height(h), width(w), channels(c), data({h * w, c}, fill) {}
    BasicLatentGrid(std::size_t view, std::size_t h, std::size_t w, BasicGrid<T> tokens)
        : view_id(view), height(h), width(w), channels(tokens.cols()), data(std::move(tokens)) {
        if (data.rows() != h * w) throw ShapeError("LatentGrid: token count does not match H·W");
    }

    std::size_t tokens() const { return height * width; }
    bool same_shape(const BasicLatentGrid& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    friend bool operator==(const BasicLatentGrid&, const BasicLatentGrid&) = default;
};

using LatentGrid = BasicLatentGrid<float>;

/// Per-pixel rotation of a latent grid; channels split into heads of cfg.dim.
template <typename T>
BasicLatentGrid<T> rotate_grid(const BasicLatentGrid<T>& latents, const PhaseGrid& phases, const RopeConfig& cfg) {
    if (latents.height != phases.height || latents.width != phases.width) {
        throw ShapeError("rotate_grid: latent and phase grids differ in spatial shape");
    }
    if (latents.channels % cfg.dim != 0) throw ShapeError("rotate_grid: channels not a multiple of rope dim");
    BasicLatentGrid<T> out = latents;
    rotate_tokens_inplace<T>(out.data, phases.phases, phases.valid, latents.channels / cfg.dim, cfg);
    return out;
}

} // namespace romantex
