#include "romantex/geometry.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace romantex;

namespace {

const char* kCubeObj = R"(# unit cube, quads, no normals
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 1/1 4/4 3/3 2/2
f 5/1 6/2 7/3 8/4
f 1/1 2/2 6/3 5/4
f 4/1 8/2 7/3 3/4
f 1/1 5/2 8/3 4/4
f 2/1 3/2 7/3 6/4
)";

Mesh parse(const std::string& text) {
    std::istringstream in(text);
    return parse_obj(in);
}

Mesh box(Vec3 lo, Vec3 hi) {
    Mesh m = make_cube();
    for (auto& p : m.positions)
        for (int a = 0; a < 3; ++a) p[a] = lo[a] + p[a] * (hi[a] - lo[a]);
    return m;
}

} // namespace

TEST(LoadMesh, CubeQuadsAreFanTriangulated) {
    const Mesh m = parse(kCubeObj);
    EXPECT_EQ(m.positions.size(), 8u);
    EXPECT_EQ(m.triangles.size(), 12u);
}

TEST(LoadMesh, MissingNormalsAreComputedWithUnitLength) {
    const Mesh m = parse(kCubeObj);
    ASSERT_FALSE(m.normals.empty());
    for (const auto& n : m.normals) EXPECT_NEAR(length3(n), 1.0f, 1e-4);
}

TEST(LoadMesh, MissingUvsIsAnError) {
    try {
        parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
        FAIL() << "expected MeshError";
    } catch (const MeshError& e) {
        EXPECT_NE(std::string(e.what()).find("mesh lacks UV parameterization"), std::string::npos);
    }
}

TEST(LoadMesh, EmptyAndUnreadableAreErrors) {
    EXPECT_THROW(parse("# nothing\n"), MeshError);
    EXPECT_THROW(load_mesh("/nonexistent/dir/mesh.obj"), MeshError);
}

TEST(LoadMesh, WriteThenParseRoundTrips) {
    const Mesh m = make_uv_sphere(12, 6);
    std::ostringstream os;
    write_obj(m, os);
    const Mesh back = parse(os.str());
    ASSERT_EQ(back.positions.size(), m.positions.size());
    ASSERT_EQ(back.triangles.size(), m.triangles.size());
    for (std::size_t i = 0; i < m.positions.size(); ++i)
        for (int a = 0; a < 3; ++a) EXPECT_NEAR(back.positions[i][a], m.positions[i][a], 1e-6);
}

TEST(Normalize, CanonicalCubeIsFixedPoint) {
    const Mesh m = make_cube();
    const Mesh n = normalize_to_canonical(m);
    for (std::size_t i = 0; i < m.positions.size(); ++i)
        for (int a = 0; a < 3; ++a) EXPECT_NEAR(n.positions[i][a], m.positions[i][a], 1e-6);
}

TEST(Normalize, TranslatedScaledCubeSpansUnitRange) {
    const Mesh n = normalize_to_canonical(box({10, 10, 10}, {12, 12, 12}));
    for (const auto& p : n.positions)
        for (int a = 0; a < 3; ++a) EXPECT_TRUE(std::abs(p[a]) < 1e-6 || std::abs(p[a] - 1) < 1e-6);
}

TEST(Normalize, AspectRatioPreserved) {
    const Mesh n = normalize_to_canonical(box({0, 0, 0}, {2, 1, 1}));
    float lo[3] = {1, 1, 1}, hi[3] = {0, 0, 0};
    for (const auto& p : n.positions)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    EXPECT_NEAR(lo[0], 0.0f, 1e-6);
    EXPECT_NEAR(hi[0], 1.0f, 1e-6);
    for (int a = 1; a < 3; ++a) {
        EXPECT_NEAR(lo[a], 0.25f, 1e-6);
        EXPECT_NEAR(hi[a], 0.75f, 1e-6);
    }
}

TEST(Normalize, ZeroExtentIsAnError) {
    Mesh m = make_cube();
    for (auto& p : m.positions) p = {3, 3, 3};
    EXPECT_THROW(normalize_to_canonical(m), MeshError);
}

TEST(Normalize, PropertyOutputInsideUnitCube) {
    Rng rng = seeded_rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        Mesh m = make_uv_sphere(8, 4);
        const float s = static_cast<float>(rng.uniform(0.01, 100));
        const Vec3 off{float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50))};
        for (auto& p : m.positions) p = off + s * p;
        for (const auto& p : normalize_to_canonical(m).positions)
            for (int a = 0; a < 3; ++a) {
                EXPECT_GE(p[a], -1e-5f);
                EXPECT_LE(p[a], 1.0f + 1e-5f);
            }
    }
}

TEST(CameraRig, SixViewsEvenlySpaced) {
    const auto rig = make_camera_rig(6, 0.0f, 0.55f);
    ASSERT_EQ(rig.size(), 6u);
    const float expected[6] = {0, 60, 120, 180, 240, 300};
    for (int k = 0; k < 6; ++k) EXPECT_FLOAT_EQ(rig[k].azimuth, expected[k]);
    EXPECT_TRUE(rig[0].is_reference_pose);
    EXPECT_FALSE(rig[1].is_reference_pose);
}

TEST(CameraRig, SingleFrontView) {
    const auto rig = make_camera_rig(1);
    ASSERT_EQ(rig.size(), 1u);
    const Vec3 d = rig[0].toward_camera();
    EXPECT_NEAR(d[2], 1.0f, 1e-6);
}

TEST(CameraRig, CountBounds) {
    EXPECT_THROW(make_camera_rig(13), std::invalid_argument);
    EXPECT_THROW(make_camera_rig(0), std::invalid_argument);
    EXPECT_EQ(make_camera_rig(12).size(), 12u);
}

TEST(CameraRig, ViewMatricesAreRigid) {
    Rng rng = seeded_rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const CameraView c = make_camera(float(rng.uniform(0, 360)), float(rng.uniform(-89, 89)), 0.55f);
        for (int r = 0; r < 3; ++r)
            for (int s = 0; s < 3; ++s) {
                double d = 0;
                for (int k = 0; k < 3; ++k) d += double(c.view_matrix[r * 4 + k]) * c.view_matrix[s * 4 + k];
                EXPECT_NEAR(d, r == s ? 1.0 : 0.0, 1e-5);
            }
    }
}

TEST(Rasterize, SphereCenterPixelMatchesRaySphere) {
    const Mesh sphere = make_uv_sphere();
    const int res = 64;
    const CameraView cam = make_camera(0, 0, 0.55f);
    const ConditionMaps m = rasterize_conditions(sphere, cam, res);
    for (std::size_t i : {31u, 32u})
        for (std::size_t j : {31u, 32u}) {
            ASSERT_TRUE(m.covered(i, j));
            // Orthographic ray through the pixel center along −z hits the near cap.
            const double px = 2.0 * 0.55 / res;
            const double x = -0.55 + (j + 0.5) * px, y = 0.55 - (i + 0.5) * px;
            const double z = std::sqrt(0.25 - x * x - y * y);
            EXPECT_NEAR(m.ccm(i, j, 0), 0.5 + x, 2.0 / res);
            EXPECT_NEAR(m.ccm(i, j, 1), 0.5 + y, 2.0 / res);
            EXPECT_NEAR(m.ccm(i, j, 2), 0.5 + z, 2.0 / res);
        }
}

TEST(Rasterize, BackgroundCarriesSentinel) {
    const ConditionMaps m = rasterize_conditions(make_uv_sphere(), make_camera(0, 0, 0.55f), 32);
    ASSERT_FALSE(m.covered(0, 0));
    for (int a = 0; a < 3; ++a) {
        EXPECT_EQ(m.ccm(0, 0, a), kBackground);
        EXPECT_EQ(m.normal(0, 0, a), kBackground);
    }
    EXPECT_EQ(m.uv(0, 0, 0), kBackground);
    EXPECT_EQ(m.depth(0, 0), kBackground);
}

TEST(Rasterize, CoveredPixelsSatisfyInvariants) {
    for (const Mesh& mesh : {make_uv_sphere(), make_cube(), make_torus()}) {
        const ConditionMaps m = rasterize_conditions(mesh, make_camera(37, 20, 0.55f), 48);
        std::size_t covered = 0;
        for (std::size_t i = 0; i < 48; ++i)
            for (std::size_t j = 0; j < 48; ++j) {
                if (!m.covered(i, j)) continue;
                ++covered;
                double n2 = 0;
                for (int a = 0; a < 3; ++a) {
                    EXPECT_GE(m.ccm(i, j, a), 0.0f);
                    EXPECT_LE(m.ccm(i, j, a), 1.0f);
                    n2 += double(m.normal(i, j, a)) * m.normal(i, j, a);
                }
                EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-3);
            }
        EXPECT_GT(covered, 100u);
    }
}

TEST(Rasterize, FrontBackSilhouettesMirror) {
    const Mesh sphere = make_uv_sphere();
    const int res = 48;
    const ConditionMaps f = rasterize_conditions(sphere, make_camera(0, 0, 0.55f), res);
    const ConditionMaps b = rasterize_conditions(sphere, make_camera(180, 0, 0.55f), res);
    std::size_t mismatch = 0;
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) mismatch += f.covered(i, j) != b.covered(i, res - 1 - j);
    // Tessellation is symmetric under the half-turn only up to edge pixels.
    EXPECT_LE(mismatch, static_cast<std::size_t>(res / 4));
}

TEST(Rasterize, Deterministic) {
    const Mesh torus = make_torus();
    const CameraView cam = make_camera(60, 15, 0.55f);
    EXPECT_EQ(rasterize_conditions(torus, cam, 40), rasterize_conditions(torus, cam, 40));
}

TEST(Rasterize, UnprojectedDepthReproducesCcm) {
    const int res = 64;
    for (const Mesh& mesh : {make_uv_sphere(), make_cube(), make_torus()}) {
        for (float az : {0.0f, 75.0f, 210.0f}) {
            const CameraView cam = make_camera(az, 25, 0.55f);
            const ConditionMaps m = rasterize_conditions(mesh, cam, res);
            const double texel = 2.0 * 0.55 / res;
            for (std::size_t i = 0; i < res; ++i)
                for (std::size_t j = 0; j < res; ++j) {
                    if (!m.covered(i, j)) continue;
                    const Vec3 p = unproject_pixel(cam, m, i, j);
                    for (int a = 0; a < 3; ++a) ASSERT_NEAR(p[a], m.ccm(i, j, a), 2 * texel);
                }
        }
    }
}

TEST(Downsample, SameResolutionIsIdentity) {
    const ConditionMaps m = rasterize_conditions(make_uv_sphere(), make_camera(0, 0, 0.55f), 32);
    EXPECT_EQ(downsample_conditions(m, 32), m);
}

TEST(Downsample, CompositionMatchesDirect) {
    const ConditionMaps m = rasterize_conditions(make_torus(), make_camera(30, 10, 0.55f), 64);
    EXPECT_EQ(downsample_conditions(downsample_conditions(m, 16), 8), downsample_conditions(m, 8));
}

TEST(Downsample, NeverAveragesCoordinates) {
    const ConditionMaps m = rasterize_conditions(make_uv_sphere(), make_camera(0, 0, 0.55f), 64);
    const ConditionMaps d = downsample_conditions(m, 16);
    std::set<std::array<float, 3>> source;
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t j = 0; j < 64; ++j) source.insert({m.ccm(i, j, 0), m.ccm(i, j, 1), m.ccm(i, j, 2)});
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) EXPECT_TRUE(source.count({d.ccm(i, j, 0), d.ccm(i, j, 1), d.ccm(i, j, 2)}));
}

TEST(Downsample, SolidCoverageStaysSolid) {
    // The cube face fills the frame when the extent is smaller than the face.
    const ConditionMaps m = rasterize_conditions(make_cube(), make_camera(0, 0, 0.4f), 64);
    for (int r : {32, 16, 8, 4, 2, 1}) {
        const ConditionMaps d = downsample_conditions(m, r);
        for (float v : d.mask.values()) EXPECT_EQ(v, 1.0f);
    }
}

TEST(Downsample, NonDivisibleIsAnError) {
    const ConditionMaps m = ConditionMaps::empty(32);
    EXPECT_THROW(downsample_conditions(m, 12), std::invalid_argument);
    EXPECT_THROW(downsample_conditions(m, 0), std::invalid_argument);
}
