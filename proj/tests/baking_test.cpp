#include "romantex/baking.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace romantex;
using romantex::testing::max_abs_diff;
using romantex::testing::random_extent;
using romantex::testing::random_grid;

namespace {

PartialTexture random_partial(Rng& rng, int r, double coverage) {
    PartialTexture p = PartialTexture::empty(r);
    p.texture = random_grid(rng, {std::size_t(r), std::size_t(r), 3}, 0, 1);
    for (auto& m : p.mask.values()) m = rng.uniform() < coverage ? 1.0f : 0.0f;
    for (std::size_t t = 0; t < p.mask.size(); ++t) {
        p.cosine[t] = static_cast<float>(rng.uniform(0.05, 1.0));
        if (p.mask[t] < 0.5f)
            for (int k = 0; k < 3; ++k) p.texture[t * 3 + k] = 0;
    }
    return p;
}

PartialTexture one_texel(int r, std::size_t t, float color) {
    PartialTexture p = PartialTexture::empty(r);
    p.mask[t] = 1;
    p.cosine[t] = 1;
    for (int k = 0; k < 3; ++k) p.texture[t * 3 + k] = color;
    return p;
}

// Same dilation rule as inpaint, visiting texels in reverse order.
Grid dilate_reversed(const UVTexture& tex) {
    const auto r = static_cast<std::size_t>(tex.resolution);
    Grid texels = tex.texels;
    std::vector<std::uint8_t> filled(r * r);
    for (std::size_t t = 0; t < r * r; ++t) filled[t] = tex.coverage[t] > 0;
    bool again = true;
    while (again) {
        again = false;
        Grid next = texels;
        auto next_filled = filled;
        for (std::size_t q = r * r; q-- > 0;) {
            if (filled[q]) continue;
            const long i = long(q / r), j = long(q % r);
            double acc[3] = {0, 0, 0};
            int cnt = 0;
            for (auto [di, dj] : {std::pair{1, 0}, std::pair{-1, 0}, std::pair{0, 1}, std::pair{0, -1}}) {
                const long ni = i + di, nj = j + dj;
                if (ni < 0 || nj < 0 || ni >= long(r) || nj >= long(r) || !filled[ni * r + nj]) continue;
                for (int k = 0; k < 3; ++k) acc[k] += texels[(ni * r + nj) * 3 + k];
                ++cnt;
            }
            if (!cnt) continue;
            for (int k = 0; k < 3; ++k) next[q * 3 + k] = static_cast<float>(acc[k] / cnt);
            next_filled[q] = 1;
            again = true;
        }
        texels = std::move(next);
        filled = std::move(next_filled);
    }
    return texels;
}

Grid smooth_texture(int r) {
    Grid t({std::size_t(r), std::size_t(r), 3});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            const double u = (j + 0.5) / r, v = (i + 0.5) / r;
            t(i, j, 0) = static_cast<float>(0.5 + 0.3 * std::sin(2 * M_PI * u));
            t(i, j, 1) = static_cast<float>(0.5 + 0.3 * std::cos(2 * M_PI * v));
            t(i, j, 2) = static_cast<float>(0.2 + 0.6 * u * v);
        }
    return t;
}

} // namespace

TEST(UnprojectView, ConstantImageGivesConstantPartial) {
    const ConditionMaps m = rasterize_conditions(make_uv_sphere(), make_camera(0, 0, 0.55f), 64);
    const PartialTexture p = unproject_view(Grid({64, 64, 3}, 0.3f), m, 64);
    ASSERT_GT(p.written(), 100u);
    for (std::size_t t = 0; t < p.mask.size(); ++t) {
        if (p.mask[t] < 0.5f) continue;
        for (int k = 0; k < 3; ++k) EXPECT_EQ(p.texture[t * 3 + k], 0.3f);
        EXPECT_GE(p.cosine[t], 0.0f);
        EXPECT_LE(p.cosine[t], 1.0f);
    }
}

TEST(UnprojectView, EmptyMapsGiveEmptyPartial) {
    const PartialTexture p = unproject_view(Grid({16, 16, 3}, 1.0f), ConditionMaps::empty(16), 32);
    EXPECT_EQ(p.written(), 0u);
    EXPECT_EQ(p.resolution, 32);
}

TEST(UnprojectView, ResolutionMismatch) {
    const ConditionMaps m = ConditionMaps::empty(16);
    EXPECT_THROW(unproject_view(Grid({32, 32, 3}), m, 32), ShapeError);
    EXPECT_THROW(unproject_view(Grid({16, 16, 3}), m, 0), std::invalid_argument);
}

TEST(UnprojectView, SmoothTextureRoundTrip) {
    const Grid tex = smooth_texture(64);
    const Mesh sphere = make_uv_sphere();
    for (float az : {0.0f, 90.0f}) {
        const ConditionMaps m = rasterize_conditions(sphere, make_camera(az, 0, 0.55f), 256);
        const PartialTexture p = unproject_view(shade_albedo(m, tex), m, 64);
        EXPECT_GT(psnr(p.texture, tex, p.mask), 30.0) << "azimuth " << az;
    }
}

TEST(Blend, SingleViewEqualsPartialOnMask) {
    Rng rng = seeded_rng(1);
    const PartialTexture p = random_partial(rng, 16, 0.6);
    const UVTexture u = blend({p});
    for (std::size_t t = 0; t < p.mask.size(); ++t) {
        if (p.mask[t] < 0.5f) {
            EXPECT_EQ(u.coverage[t], 0.0f);
            continue;
        }
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(u.texels[t * 3 + k], p.texture[t * 3 + k], 1e-6);
    }
}

TEST(Blend, IdenticalPartialsIndependentOfExponent) {
    Rng rng = seeded_rng(2);
    const PartialTexture p = random_partial(rng, 16, 0.7);
    PartialTexture q = p;
    for (auto& c : q.cosine.values()) c *= 0.5f;
    const UVTexture a = blend({p, q}, 1.0), b = blend({p, q}, 8.0);
    EXPECT_LT(max_abs_diff(a.texels, b.texels), 1e-6);
}

TEST(Blend, GrazingViewWeightIsNegligible) {
    EXPECT_LE(blend_weight(std::cos(80.0 * M_PI / 180), 4) / blend_weight(1.0, 4), 1e-3);
    EXPECT_EQ(blend_weight(std::cos(M_PI / 2) - 1e-12, 4), 0.0);
    EXPECT_EQ(blend_weight(-0.5, 4), 0.0);
}

TEST(Blend, ConvexCombinationProperty) {
    Rng rng = seeded_rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int r = static_cast<int>(random_extent(rng, 2, 12));
        std::vector<PartialTexture> ps;
        for (std::size_t v = 0, n = random_extent(rng, 1, 5); v < n; ++v) ps.push_back(random_partial(rng, r, 0.5));
        const UVTexture u = blend(ps, rng.uniform(0.5, 6));
        for (std::size_t t = 0; t < u.coverage.size(); ++t) {
            ASSERT_GE(u.coverage[t], 0.0f);
            if (u.coverage[t] <= 0) continue;
            for (int k = 0; k < 3; ++k) {
                float lo = 1e9f, hi = -1e9f;
                for (const auto& p : ps)
                    if (p.mask[t] > 0.5f) {
                        lo = std::min(lo, p.texture[t * 3 + k]);
                        hi = std::max(hi, p.texture[t * 3 + k]);
                    }
                ASSERT_GE(u.texels[t * 3 + k], lo - 1e-6f);
                ASSERT_LE(u.texels[t * 3 + k], hi + 1e-6f);
            }
        }
    }
}

TEST(Blend, RejectsEmptyAndMixedResolutions) {
    EXPECT_THROW(blend({}), std::invalid_argument);
    EXPECT_THROW(blend({PartialTexture::empty(4), PartialTexture::empty(8)}), ShapeError);
}

TEST(Lad, ClosedFormTwoViewsOneTexel) {
    const LADReport r = compute_lad({one_texel(4, 5, 0.0f), one_texel(4, 5, 1.0f)});
    EXPECT_EQ(r.overlap_texel_count, 1u);
    EXPECT_DOUBLE_EQ(r.lad, 0.5);
    EXPECT_DOUBLE_EQ(r.per_view_contributions[0], 0.25);
}

TEST(Lad, IdenticalPartialsGiveExactZero) {
    Rng rng = seeded_rng(4);
    const PartialTexture p = random_partial(rng, 16, 0.8);
    const LADReport r = compute_lad({p, p, p});
    EXPECT_EQ(r.lad, 0.0);
    EXPECT_GT(r.overlap_texel_count, 0u);
}

TEST(Lad, NoOverlapIsFlagged) {
    const LADReport r = compute_lad({one_texel(4, 1, 0.2f), one_texel(4, 2, 0.9f)});
    EXPECT_TRUE(r.no_overlap);
    EXPECT_EQ(r.lad, 0.0);
    EXPECT_EQ(r.overlap_texel_count, 0u);
}

TEST(Lad, NonNegativeAndOrderInvariantProperty) {
    Rng rng = seeded_rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int r = static_cast<int>(random_extent(rng, 2, 10));
        std::vector<PartialTexture> ps;
        for (std::size_t v = 0, n = random_extent(rng, 2, 6); v < n; ++v) ps.push_back(random_partial(rng, r, 0.6));
        const LADReport a = compute_lad(ps);
        std::vector<PartialTexture> rev(ps.rbegin(), ps.rend());
        const LADReport b = compute_lad(rev);
        EXPECT_GE(a.lad, 0.0);
        EXPECT_NEAR(a.lad, b.lad, 1e-12);
        EXPECT_EQ(a.overlap_texel_count, b.overlap_texel_count);
    }
}

TEST(Lad, NeedsTwoPartials) {
    EXPECT_THROW(compute_lad({PartialTexture::empty(4)}), std::invalid_argument);
    EXPECT_THROW(compute_lad({PartialTexture::empty(4), PartialTexture::empty(2)}), ShapeError);
}

TEST(Inpaint, FullyCoveredIsIdentity) {
    Rng rng = seeded_rng(6);
    const UVTexture u = blend({random_partial(rng, 8, 1.0)});
    EXPECT_EQ(inpaint(u).texels, u.texels);
}

TEST(Inpaint, SingleTexelFloodsChart) {
    const UVTexture u = blend({one_texel(8, 19, 0.7f)});
    const UVTexture f = inpaint(u);
    for (float x : f.texels.values()) EXPECT_FLOAT_EQ(x, 0.7f);
}

TEST(Inpaint, VisitOrderInvariantProperty) {
    Rng rng = seeded_rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int r = static_cast<int>(random_extent(rng, 3, 16));
        const UVTexture u = blend({random_partial(rng, r, rng.uniform(0.05, 0.5))});
        bool any = false;
        for (float c : u.coverage.values()) any = any || c > 0;
        if (!any) continue;
        const UVTexture f = inpaint(u);
        EXPECT_LT(max_abs_diff(f.texels, dilate_reversed(u)), 1e-6);
        for (std::size_t t = 0; t < u.coverage.size(); ++t) {
            if (u.coverage[t] <= 0) continue;
            for (int k = 0; k < 3; ++k) ASSERT_EQ(f.texels[t * 3 + k], u.texels[t * 3 + k]);
        }
    }
}

TEST(Inpaint, EmptyTextureRejected) {
    EXPECT_THROW(inpaint(blend({PartialTexture::empty(4)})), std::invalid_argument);
}

TEST(RenderTextured, ConstantTextureAndClearColor) {
    const Grid img = render_textured(make_torus(), Grid({8, 8, 3}, 0.4f), make_camera(30, 20, 0.55f), 48,
                                     {0.1f, 0.2f, 0.3f});
    const ConditionMaps m = rasterize_conditions(make_torus(), make_camera(30, 20, 0.55f), 48);
    for (std::size_t i = 0; i < 48; ++i)
        for (std::size_t j = 0; j < 48; ++j)
            for (std::size_t k = 0; k < 3; ++k) {
                const float expect = m.covered(i, j) ? 0.4f : 0.1f * (k + 1);
                ASSERT_FLOAT_EQ(img(i, j, k), expect);
            }
}

TEST(RenderTextured, SampleTextureFilters) {
    Grid tex({2, 2, 3});
    for (std::size_t k = 0; k < 3; ++k) {
        tex(0, 0, k) = 0;
        tex(0, 1, k) = 1;
        tex(1, 0, k) = 0;
        tex(1, 1, k) = 1;
    }
    EXPECT_FLOAT_EQ(sample_texture(tex, 0.5f, 0.5f, TextureFilter::bilinear)[0], 0.5f);
    EXPECT_FLOAT_EQ(sample_texture(tex, 0.25f, 0.25f, TextureFilter::bilinear)[0], 0.0f);
    EXPECT_FLOAT_EQ(sample_texture(tex, 0.6f, 0.1f, TextureFilter::nearest)[0], 1.0f);
    EXPECT_FLOAT_EQ(sample_texture(tex, 1.5f, 0.1f, TextureFilter::nearest)[0], 1.0f);
}

TEST(RenderTextured, DoubleRoundTripOnSphere) {
    const Mesh sphere = make_uv_sphere();
    const Grid tex = smooth_texture(128);
    std::vector<PartialTexture> partials;
    const auto cams = make_camera_rig(6, 0, 0.55f);
    for (const auto& cam : cams) {
        const ConditionMaps m = rasterize_conditions(sphere, cam, 128);
        partials.push_back(unproject_view(shade_albedo(m, tex), m, 128));
    }
    const UVTexture baked = inpaint(blend(partials));
    for (const auto& cam : cams) {
        const ConditionMaps m = rasterize_conditions(sphere, cam, 128);
        EXPECT_GT(psnr(shade_albedo(m, baked.texels), shade_albedo(m, tex), m.mask), 28.0);
    }
}

TEST(Psnr, KnownValues) {
    const Grid mask({2, 2}, 1.0f);
    const Grid a({2, 2, 3}, 0.5f);
    Grid b = a;
    EXPECT_TRUE(std::isinf(psnr(a, b, mask)));
    for (auto& x : b.values()) x += 0.1f;
    EXPECT_NEAR(psnr(a, b, mask), 20.0, 1e-4);
    EXPECT_EQ(psnr(a, b, Grid({2, 2})), 0.0);
}
