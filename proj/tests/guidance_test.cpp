#include "romantex/guidance.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace romantex;
using romantex::testing::max_abs_diff;
using romantex::testing::random_extent;
using romantex::testing::random_grid;

namespace {

GuidanceBundle random_bundle(Rng& rng, std::size_t views, std::size_t side = 4) {
    GuidanceBundle b;
    for (std::size_t v = 0; v < views; ++v) {
        b.eps_uncond.emplace_back(v, side, side, random_grid(rng, {side * side, 3}));
        b.eps_geo.emplace_back(v, side, side, random_grid(rng, {side * side, 3}));
        b.eps_full.emplace_back(v, side, side, random_grid(rng, {side * side, 3}));
    }
    return b;
}

GuidanceConfig scales(double g, double r, GuidanceMode m = GuidanceMode::plain) {
    GuidanceConfig c;
    c.s_geo = g;
    c.s_ref = r;
    c.mode = m;
    return c;
}

// Difference form: ε_u + s_geo·(ε_g − ε_u) + s_ref·(ε_f − ε_g), in double.
double plain_oracle(const GuidanceBundle& b, std::size_t v, std::size_t i, double sg, double sr) {
    const double u = b.eps_uncond[v].data[i], g = b.eps_geo[v].data[i], f = b.eps_full[v].data[i];
    return u + sg * (g - u) + sr * (f - g);
}

} // namespace

TEST(ComposePlain, CornerScalesReproduceBranchesExactly) {
    Rng rng = seeded_rng(1);
    const GuidanceBundle b = random_bundle(rng, 3);
    const auto full = compose_plain(b, scales(1, 1));
    const auto geo = compose_plain(b, scales(1, 0));
    const auto uncond = compose_plain(b, scales(0, 0));
    for (std::size_t v = 0; v < 3; ++v) {
        EXPECT_EQ(full.eps[v].data, b.eps_full[v].data);
        EXPECT_EQ(geo.eps[v].data, b.eps_geo[v].data);
        EXPECT_EQ(uncond.eps[v].data, b.eps_uncond[v].data);
    }
}

TEST(ComposePlain, MatchesDifferenceFormProperty) {
    Rng rng = seeded_rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t nv = random_extent(rng, 1, 4);
        const GuidanceBundle b = random_bundle(rng, nv);
        const double sg = rng.uniform(0, 8), sr = rng.uniform(0, 8);
        const auto out = compose_plain(b, scales(sg, sr));
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t i = 0; i < out.eps[v].data.size(); ++i)
                ASSERT_NEAR(out.eps[v].data[i], plain_oracle(b, v, i, sg, sr), 1e-5 * (1 + sg + sr));
    }
}

TEST(ComposeOrthogonal, ResidualReferenceDirectionIsOrthogonalProperty) {
    Rng rng = seeded_rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t nv = random_extent(rng, 1, 4);
        const GuidanceBundle b = random_bundle(rng, nv);
        const double sg = rng.uniform(0, 5);
        const auto out = compose_orthogonal(b, scales(sg, 1, GuidanceMode::orthogonal));
        ASSERT_FALSE(out.degenerate_fallback);
        double perp_g = 0, rr = 0, gg = 0;
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t i = 0; i < out.eps[v].data.size(); ++i) {
                const double u = b.eps_uncond[v].data[i], g = b.eps_geo[v].data[i] - u;
                const double r = b.eps_full[v].data[i] - b.eps_geo[v].data[i];
                const double perp = out.eps[v].data[i] - u - sg * g;
                perp_g += perp * g;
                rr += r * r;
                gg += g * g;
            }
        EXPECT_LT(std::abs(perp_g), 1e-4 * std::sqrt(rr) * std::sqrt(gg)) << "trial " << trial;
    }
}

TEST(ComposeOrthogonal, PerViewProjectionIsOrthogonalPerView) {
    Rng rng = seeded_rng(4);
    const GuidanceBundle b = random_bundle(rng, 3);
    GuidanceConfig c = scales(2, 1, GuidanceMode::orthogonal);
    c.per_view_projection = true;
    const auto out = compose(b, c);
    for (std::size_t v = 0; v < 3; ++v) {
        double perp_g = 0, gg = 0, rr = 0;
        for (std::size_t i = 0; i < out.eps[v].data.size(); ++i) {
            const double u = b.eps_uncond[v].data[i], g = b.eps_geo[v].data[i] - u;
            const double r = b.eps_full[v].data[i] - b.eps_geo[v].data[i];
            perp_g += (out.eps[v].data[i] - u - 2 * g) * g;
            gg += g * g;
            rr += r * r;
        }
        EXPECT_LT(std::abs(perp_g), 1e-4 * std::sqrt(rr * gg));
    }
}

TEST(ComposeOrthogonal, AgreesWithPlainWhenReferenceAlreadyOrthogonal) {
    // One view, two entries: g along x, r along y.
    GuidanceBundle b;
    b.eps_uncond.emplace_back(0, 1, 1, Grid({1, 3}, std::vector<float>{0, 0, 0}));
    b.eps_geo.emplace_back(0, 1, 1, Grid({1, 3}, std::vector<float>{1, 0, 0}));
    b.eps_full.emplace_back(0, 1, 1, Grid({1, 3}, std::vector<float>{1, 1, 0}));
    const auto o = compose(b, scales(2, 5, GuidanceMode::orthogonal));
    const auto p = compose(b, scales(2, 5));
    EXPECT_LT(max_abs_diff(o.eps[0].data, p.eps[0].data), 1e-6);
    EXPECT_FLOAT_EQ(o.eps[0].data[0], 2.0f);
    EXPECT_FLOAT_EQ(o.eps[0].data[1], 5.0f);
}

TEST(ComposeOrthogonal, ParallelReferenceIsRemoved) {
    GuidanceBundle b;
    b.eps_uncond.emplace_back(0, 1, 1, Grid({1, 3}, std::vector<float>{0, 0, 0}));
    b.eps_geo.emplace_back(0, 1, 1, Grid({1, 3}, std::vector<float>{1, 0, 0}));
    b.eps_full.emplace_back(0, 1, 1, Grid({1, 3}, std::vector<float>{3, 0, 0}));
    const auto o = compose(b, scales(2, 5, GuidanceMode::orthogonal));
    EXPECT_NEAR(o.eps[0].data[0], 2.0, 1e-6);
}

TEST(ComposeOrthogonal, DegenerateGeometryDirectionFallsBack) {
    Rng rng = seeded_rng(5);
    GuidanceBundle b = random_bundle(rng, 2);
    b.eps_geo = b.eps_uncond;
    const auto o = compose(b, scales(2, 5, GuidanceMode::orthogonal));
    EXPECT_TRUE(o.degenerate_fallback);
    const auto p = compose(b, scales(2, 5));
    EXPECT_EQ(o.eps[0].data, p.eps[0].data);
}

TEST(Guidance, ValidationErrors) {
    Rng rng = seeded_rng(6);
    GuidanceBundle b = random_bundle(rng, 2);
    EXPECT_THROW(compose(b, scales(-1, 1)), std::invalid_argument);
    EXPECT_THROW(compose(b, scales(1, std::numeric_limits<double>::infinity())), std::invalid_argument);
    GuidanceBundle short_b = b;
    short_b.eps_full.pop_back();
    EXPECT_THROW(compose(short_b, scales(1, 1)), ShapeError);
    GuidanceBundle nan_b = b;
    nan_b.eps_geo[1].data[3] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(compose(nan_b, scales(1, 1)), NumericalError);
    GuidanceBundle shape_b = b;
    shape_b.eps_full[0] = LatentGrid(0, 2, 2, 3);
    EXPECT_THROW(compose(shape_b, scales(1, 1, GuidanceMode::orthogonal)), ShapeError);
}

TEST(Guidance, ParseMode) {
    EXPECT_EQ(parse_guidance_mode("plain"), GuidanceMode::plain);
    EXPECT_EQ(parse_guidance_mode("orthogonal"), GuidanceMode::orthogonal);
    EXPECT_EQ(to_string(GuidanceMode::orthogonal), "orthogonal");
    EXPECT_THROW(parse_guidance_mode("ortho"), std::invalid_argument);
}

TEST(DropCondition, RateAndBounds) {
    Rng rng = seeded_rng(7);
    int dropped = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) dropped += !drop_condition(1, 0.1, rng).has_value();
    // Binomial std is about 42 draws.
    EXPECT_NEAR(dropped, n / 10, 200);
    EXPECT_TRUE(drop_condition(1, 0.0, rng).has_value());
    EXPECT_FALSE(drop_condition(1, 1.0, rng).has_value());
    EXPECT_THROW(drop_condition(1, 1.5, rng), std::invalid_argument);
}
