#pragma once

// Multi-resolution voxel pyramid and the pixel → voxel index mapping that turns
// canonical-coordinate pixels into integer rotary phases.

#include "romantex/geometry.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace romantex {

struct VoxelPyramid {
    std::vector<int> resolutions; // voxels per axis, level 0 finest

    std::size_t levels() const { return resolutions.size(); }
    int resolution(std::size_t level) const { return resolutions.at(level); }
};

/// One voxel level per feature-map side length; R^l equals that side length.
inline VoxelPyramid build_pyramid(const std::vector<int>& feature_resolutions) {
    if (feature_resolutions.empty()) throw std::invalid_argument("build_pyramid: no levels");
    for (std::size_t l = 0; l < feature_resolutions.size(); ++l) {
        if (feature_resolutions[l] < 1) throw std::invalid_argument("build_pyramid: resolution must be >= 1");
        if (l > 0 && feature_resolutions[l] >= feature_resolutions[l - 1]) {
            throw std::invalid_argument("build_pyramid: resolutions must be strictly decreasing");
        }
    }
    return VoxelPyramid{feature_resolutions};
}

using Phase = std::array<std::int32_t, 3>;

struct PhaseGrid {
    std::size_t level = 0;
    int voxel_resolution = 0;
    std::size_t height = 0, width = 0;
    std::vector<Phase> phases;       // row-major, H×W
    std::vector<std::uint8_t> valid; // H×W

    std::size_t size() const { return phases.size(); }
    const Phase& at(std::size_t i, std::size_t j) const { return phases[i * width + j]; }
    bool is_valid(std::size_t i, std::size_t j) const { return valid[i * width + j] != 0; }

    /// Same shape, every pixel invalid with phase (0,0,0): rotary embedding becomes the identity.
    static PhaseGrid identity(std::size_t h, std::size_t w, std::size_t level = 0, int voxel_resolution = 1) {
        PhaseGrid g;
        g.level = level;
        g.voxel_resolution = voxel_resolution;
        g.height = h;
        g.width = w;
        g.phases.assign(h * w, Phase{0, 0, 0});
        g.valid.assign(h * w, 0);
        return g;
    }

    friend bool operator==(const PhaseGrid&, const PhaseGrid&) = default;
};

/// round(pos · R), half away from zero, clamped to [0, R].
inline std::int32_t quantize_coordinate(float pos, int voxel_resolution) {
    const double scaled = std::round(static_cast<double>(pos) * voxel_resolution);
    return static_cast<std::int32_t>(std::clamp(scaled, 0.0, static_cast<double>(voxel_resolution)));
}

inline Phase quantize_position(const Vec3& pos, int voxel_resolution) {
    return {quantize_coordinate(pos[0], voxel_resolution), quantize_coordinate(pos[1], voxel_resolution),
            quantize_coordinate(pos[2], voxel_resolution)};
}

/// Voxel indices for every covered pixel of a level-l canonical coordinate map.
inline PhaseGrid pixel_to_voxel(const ConditionMaps& ccm, const VoxelPyramid& pyramid, std::size_t level) {
    if (level >= pyramid.levels()) throw std::invalid_argument("pixel_to_voxel: level out of range");
    const int r = pyramid.resolution(level);
    if (ccm.resolution != r) {
        throw std::invalid_argument("pixel_to_voxel: map resolution " + std::to_string(ccm.resolution) +
                                    " does not match level resolution " + std::to_string(r));
    }
    const auto n = static_cast<std::size_t>(r);
    PhaseGrid g = PhaseGrid::identity(n, n, level, r);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (!ccm.covered(i, j)) continue;
            const Vec3 pos{ccm.ccm(i, j, 0), ccm.ccm(i, j, 1), ccm.ccm(i, j, 2)};
            g.phases[i * n + j] = quantize_position(pos, r);
            g.valid[i * n + j] = 1;
        }
    }
    return g;
}

/// Phase grids for every pyramid level from one full-resolution map.
inline std::vector<PhaseGrid> phase_pyramid(const ConditionMaps& maps, const VoxelPyramid& pyramid) {
    std::vector<PhaseGrid> out;
    for (std::size_t l = 0; l < pyramid.levels(); ++l) {
        out.push_back(pixel_to_voxel(downsample_conditions(maps, pyramid.resolution(l)), pyramid, l));
    }
    return out;
}

} // namespace romantex
