#pragma once

// Classifier-free guidance over two droppable conditions (geometry, reference).
//
//   g = ε(geo, ∅) − ε(∅, ∅)          geometry direction
//   r = ε(geo, ref) − ε(geo, ∅)      reference direction
//   plain:       ε = ε(∅,∅) + s_geo·g + s_ref·r
//   orthogonal:  ε = ε(∅,∅) + s_geo·g + s_ref·(r − (r·ĝ)ĝ)
//
// The plain form is evaluated as (1−s_geo)·ε_u + (s_geo−s_ref)·ε_g + s_ref·ε_f,
// which is algebraically identical and reduces exactly to ε_f, ε_g or ε_u at
// the corner scales.

#include "romantex/numerics.hpp"
#include "romantex/rope3d.hpp"

#include <optional>
#include <string>
#include <vector>

namespace romantex {

enum class GuidanceMode { plain, orthogonal };

inline std::string to_string(GuidanceMode m) { return m == GuidanceMode::plain ? "plain" : "orthogonal"; }

inline GuidanceMode parse_guidance_mode(const std::string& s) {
    if (s == "plain") return GuidanceMode::plain;
    if (s == "orthogonal") return GuidanceMode::orthogonal;
    throw std::invalid_argument("unknown guidance mode '" + s + "' (expected plain or orthogonal)");
}

struct GuidanceConfig {
    double s_geo = 2.0;
    double s_ref = 5.0;
    GuidanceMode mode = GuidanceMode::plain;
    bool per_view_projection = false;

    void validate() const {
        if (!std::isfinite(s_geo) || !std::isfinite(s_ref) || s_geo < 0 || s_ref < 0) {
            throw std::invalid_argument("guidance scales must be finite and non-negative");
        }
    }
};

struct GuidanceBundle {
    std::vector<LatentGrid> eps_uncond; // ε(z_t, ∅, ∅)
    std::vector<LatentGrid> eps_geo;    // ε(z_t, C_geo, ∅)
    std::vector<LatentGrid> eps_full;   // ε(z_t, C_geo, C_ref)

    void validate() const {
        if (eps_uncond.size() != eps_geo.size() || eps_geo.size() != eps_full.size() || eps_uncond.empty()) {
            throw ShapeError("guidance bundle: view counts differ");
        }
        for (std::size_t v = 0; v < eps_uncond.size(); ++v) {
            if (eps_uncond[v].data.shape() != eps_geo[v].data.shape() ||
                eps_geo[v].data.shape() != eps_full[v].data.shape()) {
                throw ShapeError("guidance bundle: shape mismatch in view " + std::to_string(v));
            }
            require_finite(eps_uncond[v].data, "eps_uncond");
            require_finite(eps_geo[v].data, "eps_geo");
            require_finite(eps_full[v].data, "eps_full");
        }
    }
};

struct GuidedEps {
    std::vector<LatentGrid> eps;
    bool degenerate_fallback = false; // orthogonal mode fell back to plain
};

inline GuidedEps compose_plain(const GuidanceBundle& b, const GuidanceConfig& c) {
    b.validate();
    c.validate();
    const float wu = static_cast<float>(1.0 - c.s_geo), wg = static_cast<float>(c.s_geo - c.s_ref),
                wf = static_cast<float>(c.s_ref);
    GuidedEps out;
    for (std::size_t v = 0; v < b.eps_uncond.size(); ++v) {
        LatentGrid e = b.eps_full[v];
        const auto& u = b.eps_uncond[v].data;
        const auto& g = b.eps_geo[v].data;
        const auto& f = b.eps_full[v].data;
        for (std::size_t i = 0; i < e.data.size(); ++i) e.data[i] = wu * u[i] + wg * g[i] + wf * f[i];
        out.eps.push_back(std::move(e));
    }
    return out;
}

namespace detail {

struct Projection {
    double rg = 0, gg = 0;
};

inline Projection accumulate_projection(const LatentGrid& u, const LatentGrid& g, const LatentGrid& f,
                                        Projection acc) {
    for (std::size_t i = 0; i < u.data.size(); ++i) {
        const double gd = static_cast<double>(g.data[i]) - u.data[i];
        const double rd = static_cast<double>(f.data[i]) - g.data[i];
        acc.rg += rd * gd;
        acc.gg += gd * gd;
    }
    return acc;
}

} // namespace detail

/// Removes the component of the reference direction parallel to the geometry
/// direction. The projection uses one inner product over all views unless
/// per_view_projection is set. A (near-)zero geometry direction falls back to
/// compose_plain and sets degenerate_fallback.
inline GuidedEps compose_orthogonal(const GuidanceBundle& b, const GuidanceConfig& c) {
    b.validate();
    c.validate();
    const std::size_t nv = b.eps_uncond.size();
    std::vector<detail::Projection> proj(nv);
    if (c.per_view_projection) {
        for (std::size_t v = 0; v < nv; ++v) {
            proj[v] = detail::accumulate_projection(b.eps_uncond[v], b.eps_geo[v], b.eps_full[v], {});
        }
    } else {
        detail::Projection all;
        for (std::size_t v = 0; v < nv; ++v) {
            all = detail::accumulate_projection(b.eps_uncond[v], b.eps_geo[v], b.eps_full[v], all);
        }
        proj.assign(nv, all);
    }
    for (const auto& p : proj) {
        if (std::sqrt(p.gg) <= 1e-8) {
            GuidedEps fb = compose_plain(b, c);
            fb.degenerate_fallback = true;
            return fb;
        }
    }
    GuidedEps out;
    for (std::size_t v = 0; v < nv; ++v) {
        const double coef = proj[v].rg / proj[v].gg; // (r·ĝ)/‖g‖
        LatentGrid e = b.eps_uncond[v];
        const auto& u = b.eps_uncond[v].data;
        const auto& g = b.eps_geo[v].data;
        const auto& f = b.eps_full[v].data;
        for (std::size_t i = 0; i < e.data.size(); ++i) {
            const double gd = static_cast<double>(g[i]) - u[i];
            const double rd = static_cast<double>(f[i]) - g[i];
            const double r_perp = rd - coef * gd;
            e.data[i] = static_cast<float>(u[i] + c.s_geo * gd + c.s_ref * r_perp);
        }
        out.eps.push_back(std::move(e));
    }
    return out;
}

inline GuidedEps compose(const GuidanceBundle& b, const GuidanceConfig& c) {
    return c.mode == GuidanceMode::plain ? compose_plain(b, c) : compose_orthogonal(b, c);
}

/// Returns nullopt with probability p.
template <typename Cond>
std::optional<Cond> drop_condition(Cond cond, double p, Rng& rng) {
    if (p < 0 || p > 1) throw std::invalid_argument("drop_condition: p must lie in [0, 1]");
    if (rng.bernoulli(p)) return std::nullopt;
    return cond;
}

} // namespace romantex
