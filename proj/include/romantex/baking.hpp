#pragma once

// Multi-view → UV texture baking and the local alignment distance (LAD).
//
// Texel (ty, tx) covers uv ∈ [tx/R, (tx+1)/R) × [ty/R, (ty+1)/R); rows follow v.

#include "romantex/geometry.hpp"

#include <limits>
#include <vector>

namespace romantex {

/// Partial texture obtained by unprojecting one view.
struct PartialTexture {
    int resolution = 0;
    Grid texture; // R×R×3
    Grid mask;    // R×R, 1 where written
    Grid cosine;  // R×R, max(0, n·view) at the source pixel

    static PartialTexture empty(int r) {
        const auto n = static_cast<std::size_t>(r);
        return {r, Grid({n, n, 3}), Grid({n, n}), Grid({n, n})};
    }

    std::size_t written() const {
        std::size_t k = 0;
        for (float m : mask.values()) k += m > 0.5f;
        return k;
    }
};

struct UVTexture {
    int resolution = 0;
    Grid texels;   // R×R×3
    Grid coverage; // R×R, total blend weight
    std::vector<PartialTexture> partials;
};

inline constexpr float kSameSurfaceDepth = 0.05f;

/// Forward splat: every covered pixel writes its color to the texel under its
/// uv. When several pixels reach one texel the nearest depth wins; samples on
/// the same surface layer (depths within kSameSurfaceDepth) are ranked by
/// distance to the texel center instead.
inline PartialTexture unproject_view(const Grid& image, const ConditionMaps& maps, int texture_resolution) {
    const auto res = static_cast<std::size_t>(maps.resolution);
    if (image.rank() != 3 || image.extent(0) != res || image.extent(1) != res || image.extent(2) < 3) {
        throw ShapeError("unproject_view: image resolution does not match the condition maps");
    }
    if (texture_resolution <= 0) throw std::invalid_argument("unproject_view: texture resolution must be positive");
    const auto r = static_cast<std::size_t>(texture_resolution);
    PartialTexture out = PartialTexture::empty(texture_resolution);
    std::vector<float> best_depth(r * r, std::numeric_limits<float>::infinity());
    std::vector<float> best_center(r * r, std::numeric_limits<float>::infinity());
    for (std::size_t i = 0; i < res; ++i) {
        for (std::size_t j = 0; j < res; ++j) {
            if (!maps.covered(i, j)) continue;
            const double su = maps.uv(i, j, 0) * texture_resolution, sv = maps.uv(i, j, 1) * texture_resolution;
            const auto tx = static_cast<std::size_t>(std::clamp(std::floor(su), 0.0, double(r - 1)));
            const auto ty = static_cast<std::size_t>(std::clamp(std::floor(sv), 0.0, double(r - 1)));
            const std::size_t t = ty * r + tx;
            const float depth = maps.depth(i, j);
            const float center = static_cast<float>((su - tx - 0.5) * (su - tx - 0.5) + (sv - ty - 0.5) * (sv - ty - 0.5));
            const bool nearer = depth < best_depth[t] - kSameSurfaceDepth;
            const bool same_layer = std::abs(depth - best_depth[t]) <= kSameSurfaceDepth;
            if (!(nearer || (same_layer && center < best_center[t]))) continue;
            best_depth[t] = std::min(depth, best_depth[t]);
            best_center[t] = center;
            for (std::size_t k = 0; k < 3; ++k) out.texture(ty, tx, k) = image(i, j, k);
            out.mask(ty, tx) = 1.0f;
            const Vec3 n{maps.normal(i, j, 0), maps.normal(i, j, 1), maps.normal(i, j, 2)};
            out.cosine(ty, tx) = std::max(0.0f, dot3(n, maps.view_dir));
        }
    }
    return out;
}

inline double blend_weight(double cosine, double exponent) { return std::pow(std::max(0.0, cosine), exponent); }

/// Cosine-weighted average of partials: w_v = max(0, cos θ_v)^k.
inline UVTexture blend(const std::vector<PartialTexture>& partials, double exponent = 4.0) {
    if (partials.empty()) throw std::invalid_argument("blend: no partial textures");
    const int res = partials[0].resolution;
    for (const auto& p : partials)
        if (p.resolution != res) throw ShapeError("blend: partial resolutions differ");
    const auto r = static_cast<std::size_t>(res);
    UVTexture out{res, Grid({r, r, 3}), Grid({r, r}), partials};
    for (std::size_t t = 0; t < r * r; ++t) {
        double acc[3] = {0, 0, 0}, wsum = 0;
        for (const auto& p : partials) {
            if (p.mask[t] < 0.5f) continue;
            const double w = blend_weight(p.cosine[t], exponent);
            if (w <= 0) continue;
            for (int k = 0; k < 3; ++k) acc[k] += w * p.texture[t * 3 + k];
            wsum += w;
        }
        out.coverage[t] = static_cast<float>(wsum);
        if (wsum > 0)
            for (int k = 0; k < 3; ++k) out.texels[t * 3 + k] = static_cast<float>(acc[k] / wsum);
    }
    return out;
}

struct LADReport {
    double lad = 0;
    std::size_t overlap_texel_count = 0;
    std::vector<double> per_view_contributions;
    bool no_overlap = false;
};

/// Mean over views covering a texel; squared deviation (averaged over the
/// three channels) summed over views and texels, divided by the number of
/// texels covered by at least two views.
inline LADReport compute_lad(const std::vector<PartialTexture>& partials) {
    if (partials.size() < 2) throw std::invalid_argument("compute_lad: at least two partial textures required");
    const int res = partials[0].resolution;
    for (const auto& p : partials)
        if (p.resolution != res) throw ShapeError("compute_lad: partial resolutions differ");
    const std::size_t n = static_cast<std::size_t>(res) * res, nv = partials.size();
    LADReport rep;
    rep.per_view_contributions.assign(nv, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        std::size_t cover = 0;
        double m[3] = {0, 0, 0};
        for (const auto& p : partials) {
            if (p.mask[t] < 0.5f) continue;
            ++cover;
            for (int k = 0; k < 3; ++k) m[k] += p.texture[t * 3 + k];
        }
        if (cover < 2) continue;
        ++rep.overlap_texel_count;
        for (auto& x : m) x /= static_cast<double>(cover);
        for (std::size_t v = 0; v < nv; ++v) {
            if (partials[v].mask[t] < 0.5f) continue;
            double sq = 0;
            for (int k = 0; k < 3; ++k) {
                const double d = partials[v].texture[t * 3 + k] - m[k];
                sq += d * d;
            }
            rep.per_view_contributions[v] += sq / 3.0;
        }
    }
    if (rep.overlap_texel_count == 0) {
        rep.no_overlap = true;
        return rep;
    }
    for (auto& c : rep.per_view_contributions) {
        c /= static_cast<double>(rep.overlap_texel_count);
        rep.lad += c;
    }
    return rep;
}

/// Fills zero-coverage texels by repeated one-ring dilation. Each pass reads
/// only the previous pass, so the result does not depend on visit order.
inline UVTexture inpaint(const UVTexture& tex) {
    const auto r = static_cast<std::size_t>(tex.resolution);
    UVTexture out = tex;
    std::vector<std::uint8_t> filled(r * r);
    std::size_t n_filled = 0;
    for (std::size_t t = 0; t < r * r; ++t) n_filled += filled[t] = tex.coverage[t] > 0;
    if (n_filled == 0) throw std::invalid_argument("inpaint: texture has no covered texels");
    while (n_filled < r * r) {
        std::vector<std::uint8_t> next = filled;
        Grid texels = out.texels;
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < r; ++j) {
                if (filled[i * r + j]) continue;
                double acc[3] = {0, 0, 0};
                int cnt = 0;
                const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
                for (int q = 0; q < 4; ++q) {
                    const long ni = static_cast<long>(i) + di[q], nj = static_cast<long>(j) + dj[q];
                    if (ni < 0 || nj < 0 || ni >= static_cast<long>(r) || nj >= static_cast<long>(r)) continue;
                    const std::size_t s = static_cast<std::size_t>(ni) * r + static_cast<std::size_t>(nj);
                    if (!filled[s]) continue;
                    for (int k = 0; k < 3; ++k) acc[k] += out.texels[s * 3 + k];
                    ++cnt;
                }
                if (cnt == 0) continue;
                for (int k = 0; k < 3; ++k) texels[(i * r + j) * 3 + k] = static_cast<float>(acc[k] / cnt);
                next[i * r + j] = 1;
                ++n_filled;
            }
        }
        out.texels = std::move(texels);
        filled = std::move(next);
    }
    return out;
}

enum class TextureFilter { bilinear, nearest };

/// Texture lookup with clamp-to-edge addressing; texel centers sit at (k + 0.5)/R.
inline std::array<float, 3> sample_texture(const Grid& tex, float u, float v, TextureFilter filter) {
    const long h = static_cast<long>(tex.extent(0)), w = static_cast<long>(tex.extent(1));
    std::array<float, 3> c{};
    if (filter == TextureFilter::nearest) {
        const long x = std::clamp(static_cast<long>(std::floor(u * w)), 0L, w - 1);
        const long y = std::clamp(static_cast<long>(std::floor(v * h)), 0L, h - 1);
        for (std::size_t k = 0; k < 3; ++k) c[k] = tex(static_cast<std::size_t>(y), static_cast<std::size_t>(x), k);
        return c;
    }
    const double fx = std::clamp(u * static_cast<double>(w) - 0.5, 0.0, static_cast<double>(w - 1));
    const double fy = std::clamp(v * static_cast<double>(h) - 0.5, 0.0, static_cast<double>(h - 1));
    const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
    const std::size_t x1 = std::min<std::size_t>(x0 + 1, w - 1), y1 = std::min<std::size_t>(y0 + 1, h - 1);
    const double tx = fx - x0, ty = fy - y0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double top = tex(y0, x0, k) * (1 - tx) + tex(y0, x1, k) * tx;
        const double bot = tex(y1, x0, k) * (1 - tx) + tex(y1, x1, k) * tx;
        c[k] = static_cast<float>(top * (1 - ty) + bot * ty);
    }
    return c;
}

/// Albedo image for already rasterized maps.
inline Grid shade_albedo(const ConditionMaps& maps, const Grid& texture, std::array<float, 3> clear_color = {0, 0, 0},
                         TextureFilter filter = TextureFilter::bilinear) {
    const auto r = static_cast<std::size_t>(maps.resolution);
    Grid img({r, r, 3});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            const auto c = maps.covered(i, j) ? sample_texture(texture, maps.uv(i, j, 0), maps.uv(i, j, 1), filter)
                                              : clear_color;
            for (std::size_t k = 0; k < 3; ++k) img(i, j, k) = c[k];
        }
    return img;
}

/// Unshaded albedo rendering of a textured mesh.
inline Grid render_textured(const Mesh& mesh, const Grid& texture, const CameraView& cam, int resolution,
                            std::array<float, 3> clear_color = {0, 0, 0},
                            TextureFilter filter = TextureFilter::bilinear) {
    const ConditionMaps maps = rasterize_conditions(mesh, cam, resolution);
    return shade_albedo(maps, texture, clear_color, filter);
}

/// PSNR (peak 1) over texels/pixels where mask > 0.5; an empty mask gives 0.
inline double psnr(const Grid& a, const Grid& b, const Grid& mask) {
    require_same_shape(a, b, "psnr");
    const std::size_t n = mask.size(), c = a.size() / n;
    double se = 0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (mask[t] < 0.5f) continue;
        for (std::size_t k = 0; k < c; ++k) {
            const double d = static_cast<double>(a[t * c + k]) - b[t * c + k];
            se += d * d;
        }
        count += c;
    }
    if (count == 0) return 0;
    const double mse = se / static_cast<double>(count);
    return mse <= 0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

} // namespace romantex
