#pragma once

// Meshes in canonical space, an orthographic camera rig and a z-buffered
// software rasterizer producing per-view condition maps.

#include "romantex/numerics.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace romantex {

using Vec2 = std::array<float, 2>;
using Vec3 = std::array<float, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(float s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline float dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline float length3(const Vec3& a) { return std::sqrt(dot3(a, a)); }
inline Vec3 normalized3(const Vec3& a) {
    const float l = length3(a);
    return l > 0 ? (1.0f / l) * a : Vec3{0, 0, 0};
}

class MeshError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Corner {
    std::uint32_t position = 0;
    std::uint32_t normal = 0;
    std::uint32_t uv = 0;
};

using Triangle = std::array<Corner, 3>;

struct Mesh {
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;
    std::vector<Vec2> uvs;
    std::vector<Triangle> triangles;

    /// Throws MeshError on dangling indices or empty geometry.
    void validate() const {
        if (positions.empty() || triangles.empty()) throw MeshError("empty mesh");
        for (const auto& tri : triangles) {
            for (const auto& c : tri) {
                if (c.position >= positions.size() || c.normal >= normals.size() || c.uv >= uvs.size()) {
                    throw MeshError("triangle references an out-of-range index");
                }
            }
        }
    }
};

/// Area-weighted vertex normals keyed by position index.
inline void compute_vertex_normals(Mesh& mesh) {
    std::vector<Vec3> acc(mesh.positions.size(), Vec3{0, 0, 0});
    for (const auto& tri : mesh.triangles) {
        const Vec3& a = mesh.positions[tri[0].position];
        const Vec3& b = mesh.positions[tri[1].position];
        const Vec3& c = mesh.positions[tri[2].position];
        const Vec3 n = cross3(b - a, c - a); // |n| = 2·area
        for (const auto& corner : tri) acc[corner.position] = acc[corner.position] + n;
    }
    mesh.normals.resize(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const float l = length3(acc[i]);
        mesh.normals[i] = l > 0 ? (1.0f / l) * acc[i] : Vec3{0, 0, 1};
    }
    for (auto& tri : mesh.triangles)
        for (auto& corner : tri) corner.normal = corner.position;
}

namespace detail {

// OBJ indices are 1-based; negative values count back from the end.
inline std::uint32_t resolve_obj_index(long idx, std::size_t count) {
    if (idx > 0) return static_cast<std::uint32_t>(idx - 1);
    if (idx < 0 && static_cast<std::size_t>(-idx) <= count) return static_cast<std::uint32_t>(count + idx);
    throw MeshError("invalid OBJ index " + std::to_string(idx));
}

} // namespace detail

inline Mesh parse_obj(std::istream& in) {
    Mesh mesh;
    bool has_normal_refs = true;
    bool any_face = false;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p{};
            ls >> p[0] >> p[1] >> p[2];
            mesh.positions.push_back(p);
        } else if (tag == "vn") {
            Vec3 n{};
            ls >> n[0] >> n[1] >> n[2];
            mesh.normals.push_back(normalized3(n));
        } else if (tag == "vt") {
            Vec2 t{};
            ls >> t[0] >> t[1];
            mesh.uvs.push_back(t);
        } else if (tag == "f") {
            any_face = true;
            std::vector<Corner> poly;
            std::string tok;
            while (ls >> tok) {
                Corner c;
                long vi = 0, ti = 0, ni = 0;
                bool has_t = false, has_n = false;
                const auto s1 = tok.find('/');
                vi = std::stol(tok.substr(0, s1));
                if (s1 != std::string::npos) {
                    const auto s2 = tok.find('/', s1 + 1);
                    const std::string ts = tok.substr(s1 + 1, s2 == std::string::npos ? std::string::npos : s2 - s1 - 1);
                    if (!ts.empty()) {
                        ti = std::stol(ts);
                        has_t = true;
                    }
                    if (s2 != std::string::npos && s2 + 1 < tok.size()) {
                        ni = std::stol(tok.substr(s2 + 1));
                        has_n = true;
                    }
                }
                if (!has_t) throw MeshError("mesh lacks UV parameterization");
                c.position = detail::resolve_obj_index(vi, mesh.positions.size());
                c.uv = detail::resolve_obj_index(ti, mesh.uvs.size());
                if (has_n) {
                    c.normal = detail::resolve_obj_index(ni, mesh.normals.size());
                } else {
                    has_normal_refs = false;
                }
                poly.push_back(c);
            }
            if (poly.size() < 3) throw MeshError("face with fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < poly.size(); ++k) mesh.triangles.push_back({poly[0], poly[k], poly[k + 1]});
        }
    }
    if (mesh.positions.empty() || !any_face) throw MeshError("empty mesh");
    if (mesh.uvs.empty()) throw MeshError("mesh lacks UV parameterization");
    if (!has_normal_refs || mesh.normals.empty()) compute_vertex_normals(mesh);
    mesh.validate();
    return mesh;
}

inline Mesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot read mesh file: " + path);
    return parse_obj(in);
}

inline void write_obj(const Mesh& mesh, std::ostream& out) {
    out.precision(9);
    for (const auto& p : mesh.positions) out << "v " << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    for (const auto& t : mesh.uvs) out << "vt " << t[0] << ' ' << t[1] << '\n';
    for (const auto& n : mesh.normals) out << "vn " << n[0] << ' ' << n[1] << ' ' << n[2] << '\n';
    for (const auto& tri : mesh.triangles) {
        out << 'f';
        for (const auto& c : tri) out << ' ' << c.position + 1 << '/' << c.uv + 1 << '/' << c.normal + 1;
        out << '\n';
    }
}

/// Uniform scale + translation mapping the bounding box into [0,1]³, centered at 0.5.
inline Mesh normalize_to_canonical(const Mesh& mesh) {
    if (mesh.positions.empty()) throw MeshError("empty mesh");
    Vec3 lo = mesh.positions[0], hi = mesh.positions[0];
    for (const auto& p : mesh.positions) {
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    const double extent = std::max({double(hi[0]) - lo[0], double(hi[1]) - lo[1], double(hi[2]) - lo[2]});
    if (!(extent > 0)) throw MeshError("zero-extent bounding box");
    Mesh out = mesh;
    for (auto& p : out.positions) {
        for (int a = 0; a < 3; ++a) {
            const double center = 0.5 * (double(lo[a]) + hi[a]);
            p[a] = static_cast<float>((p[a] - center) / extent + 0.5);
        }
    }
    return out;
}

/// Flips triangles whose winding disagrees with their corner normals.
inline void orient_outward(Mesh& m) {
    for (auto& tri : m.triangles) {
        const Vec3 e = cross3(m.positions[tri[1].position] - m.positions[tri[0].position],
                              m.positions[tri[2].position] - m.positions[tri[0].position]);
        const Vec3 n = m.normals[tri[0].normal] + m.normals[tri[1].normal] + m.normals[tri[2].normal];
        if (dot3(e, n) < 0) std::swap(tri[1], tri[2]);
    }
}

// ---------------------------------------------------------------------------
// Procedural primitives (already canonical, CCW winding seen from outside).

inline Mesh make_uv_sphere(int segments = 64, int rings = 32) {
    Mesh m;
    for (int r = 0; r <= rings; ++r) {
        const double v = static_cast<double>(r) / rings;
        const double theta = v * std::numbers::pi; // 0 at +y pole
        for (int s = 0; s <= segments; ++s) {
            const double u = static_cast<double>(s) / segments;
            const double phi = (u - 0.5) * 2.0 * std::numbers::pi; // u = 0.5 faces +z
            const Vec3 n{static_cast<float>(std::sin(theta) * std::sin(phi)), static_cast<float>(std::cos(theta)),
                         static_cast<float>(std::sin(theta) * std::cos(phi))};
            m.positions.push_back(Vec3{0.5f, 0.5f, 0.5f} + 0.5f * n);
            m.normals.push_back(n);
            m.uvs.push_back({static_cast<float>(u), static_cast<float>(v)});
        }
    }
    const auto idx = [&](int r, int s) { return static_cast<std::uint32_t>(r * (segments + 1) + s); };
    const auto corner = [&](std::uint32_t i) { return Corner{i, i, i}; };
    for (int r = 0; r < rings; ++r) {
        for (int s = 0; s < segments; ++s) {
            const auto a = idx(r, s), b = idx(r + 1, s), c = idx(r + 1, s + 1), d = idx(r, s + 1);
            if (r != 0) m.triangles.push_back({corner(a), corner(b), corner(d)});
            if (r != rings - 1) m.triangles.push_back({corner(b), corner(c), corner(d)});
        }
    }
    orient_outward(m);
    return m;
}

/// Axis-aligned cube with flat faces; UV charts tile a 3×2 atlas.
inline Mesh make_cube(float lo = 0.0f, float hi = 1.0f) {
    Mesh m;
    // (normal, u axis, v axis) per face; the face corner is c + ±u ± v.
    const std::array<std::array<Vec3, 3>, 6> faces = {{
        {{{1, 0, 0}, {0, 0, -1}, {0, -1, 0}}},
        {{{-1, 0, 0}, {0, 0, 1}, {0, -1, 0}}},
        {{{0, 1, 0}, {1, 0, 0}, {0, 0, 1}}},
        {{{0, -1, 0}, {1, 0, 0}, {0, 0, -1}}},
        {{{0, 0, 1}, {1, 0, 0}, {0, -1, 0}}},
        {{{0, 0, -1}, {-1, 0, 0}, {0, -1, 0}}},
    }};
    const float mid = 0.5f * (lo + hi), half = 0.5f * (hi - lo);
    for (int f = 0; f < 6; ++f) {
        const Vec3& n = faces[f][0];
        const Vec3& u = faces[f][1];
        const Vec3& v = faces[f][2];
        const float u0 = static_cast<float>(f % 3) / 3.0f, v0 = static_cast<float>(f / 3) / 2.0f;
        const std::uint32_t base = static_cast<std::uint32_t>(m.positions.size());
        m.normals.push_back(n);
        const std::array<std::array<float, 2>, 4> q = {{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};
        for (const auto& c : q) {
            Vec3 p = Vec3{mid, mid, mid} + half * n + (half * c[0]) * u + (half * c[1]) * v;
            m.positions.push_back(p);
            // Inset charts by a small gutter so bilinear lookups stay inside.
            const float gu = 0.02f, gv = 0.02f;
            m.uvs.push_back({u0 + gu + (1.0f / 3 - 2 * gu) * (0.5f * (c[0] + 1)),
                             v0 + gv + (0.5f - 2 * gv) * (0.5f * (c[1] + 1))});
        }
        const auto cn = static_cast<std::uint32_t>(f);
        auto cr = [&](std::uint32_t k) { return Corner{base + k, cn, base + k}; };
        m.triangles.push_back({cr(0), cr(3), cr(2)});
        m.triangles.push_back({cr(0), cr(2), cr(1)});
    }
    orient_outward(m);
    return m;
}

inline Mesh make_torus(float major = 0.35f, float minor = 0.15f, int segments = 64, int sides = 24) {
    Mesh m;
    for (int i = 0; i <= segments; ++i) {
        const double u = static_cast<double>(i) / segments, a = u * 2 * std::numbers::pi;
        for (int j = 0; j <= sides; ++j) {
            const double v = static_cast<double>(j) / sides, b = v * 2 * std::numbers::pi;
            const Vec3 n{static_cast<float>(std::cos(b) * std::sin(a)), static_cast<float>(std::sin(b)),
                         static_cast<float>(std::cos(b) * std::cos(a))};
            const Vec3 ring{static_cast<float>(major * std::sin(a)), 0.0f, static_cast<float>(major * std::cos(a))};
            m.positions.push_back(ring + minor * n);
            m.normals.push_back(n);
            m.uvs.push_back({static_cast<float>(u), static_cast<float>(v)});
        }
    }
    const auto idx = [&](int i, int j) { return static_cast<std::uint32_t>(i * (sides + 1) + j); };
    const auto corner = [&](std::uint32_t k) { return Corner{k, k, k}; };
    for (int i = 0; i < segments; ++i) {
        for (int j = 0; j < sides; ++j) {
            const auto a = idx(i, j), b = idx(i + 1, j), c = idx(i + 1, j + 1), d = idx(i, j + 1);
            m.triangles.push_back({corner(a), corner(b), corner(c)});
            m.triangles.push_back({corner(a), corner(c), corner(d)});
        }
    }
    orient_outward(m);
    return normalize_to_canonical(m);
}

// ---------------------------------------------------------------------------
// Cameras.

using Mat4 = std::array<float, 16>; // row-major

struct CameraView {
    float azimuth = 0;          // degrees, rotation about +y; 0 looks from +z
    float elevation = 0;        // degrees
    float ortho_half_extent = 0.55f;
    Mat4 view_matrix{};         // world → camera (camera looks along −z, y up)
    bool is_reference_pose = false;

    /// Unit vector from the object toward the camera, in world frame.
    Vec3 toward_camera() const { return {view_matrix[8], view_matrix[9], view_matrix[10]}; }
};

inline constexpr Vec3 kCanonicalCenter{0.5f, 0.5f, 0.5f};
inline constexpr float kCameraDistance = 2.0f;

inline CameraView make_camera(float azimuth_deg, float elevation_deg, float half_extent) {
    const double az = azimuth_deg * std::numbers::pi / 180.0, el = elevation_deg * std::numbers::pi / 180.0;
    const Vec3 back{static_cast<float>(std::sin(az) * std::cos(el)), static_cast<float>(std::sin(el)),
                    static_cast<float>(std::cos(az) * std::cos(el))};
    Vec3 right = cross3(Vec3{0, 1, 0}, back);
    if (length3(right) < 1e-6f) right = Vec3{1, 0, 0};
    right = normalized3(right);
    const Vec3 up = normalized3(cross3(back, right));
    const Vec3 eye = kCanonicalCenter + kCameraDistance * back;
    CameraView cam;
    cam.azimuth = azimuth_deg;
    cam.elevation = elevation_deg;
    cam.ortho_half_extent = half_extent;
    const std::array<Vec3, 3> rows{right, up, back};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.view_matrix[r * 4 + c] = rows[r][c];
        cam.view_matrix[r * 4 + 3] = -dot3(rows[r], eye);
    }
    cam.view_matrix[15] = 1.0f;
    cam.is_reference_pose = azimuth_deg == 0.0f;
    return cam;
}

/// Evenly spaced azimuths starting at the 0° reference pose.
inline std::vector<CameraView> make_camera_rig(int n_views, float elevation_deg = 0.0f, float half_extent = 0.55f) {
    if (n_views < 1 || n_views > 12) {
        throw std::invalid_argument("n_views must be in [1, 12], got " + std::to_string(n_views));
    }
    std::vector<CameraView> rig;
    for (int k = 0; k < n_views; ++k) {
        rig.push_back(make_camera(360.0f * static_cast<float>(k) / static_cast<float>(n_views), elevation_deg,
                                  half_extent));
    }
    return rig;
}

inline Vec3 to_camera(const CameraView& cam, const Vec3& p) {
    const auto& m = cam.view_matrix;
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3], m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11]};
}

inline Vec3 from_camera(const CameraView& cam, const Vec3& q) {
    const auto& m = cam.view_matrix;
    const Vec3 t{q[0] - m[3], q[1] - m[7], q[2] - m[11]};
    // Rotation is orthonormal: inverse is the transpose.
    return {m[0] * t[0] + m[4] * t[1] + m[8] * t[2], m[1] * t[0] + m[5] * t[1] + m[9] * t[2],
            m[2] * t[0] + m[6] * t[1] + m[10] * t[2]};
}

/// Continuous pixel coordinates (col, row) of a world point; pixel centers sit at k + 0.5.
inline std::array<double, 2> project_to_pixel(const CameraView& cam, const Vec3& p, int resolution) {
    const Vec3 q = to_camera(cam, p);
    const double h = cam.ortho_half_extent;
    return {(q[0] / h + 1.0) * 0.5 * resolution, (1.0 - q[1] / h) * 0.5 * resolution};
}

// ---------------------------------------------------------------------------
// Condition maps.

inline constexpr float kBackground = -1.0f;

struct ConditionMaps {
    int resolution = 0;
    Grid ccm;    // H×W×3 canonical position of the visible surface point
    Grid normal; // H×W×3 world-frame unit normal
    Grid mask;   // H×W, 1 where covered
    Grid uv;     // H×W×2 texture coordinate
    Grid depth;  // H×W distance along the viewing direction from the camera plane
    Vec3 view_dir{0, 0, 1}; // toward the camera

    static ConditionMaps empty(int resolution) {
        const auto r = static_cast<std::size_t>(resolution);
        ConditionMaps m;
        m.resolution = resolution;
        m.ccm = Grid({r, r, 3}, kBackground);
        m.normal = Grid({r, r, 3}, kBackground);
        m.mask = Grid({r, r}, 0.0f);
        m.uv = Grid({r, r, 2}, kBackground);
        m.depth = Grid({r, r}, kBackground);
        return m;
    }

    bool covered(std::size_t i, std::size_t j) const { return mask(i, j) > 0.5f; }

    friend bool operator==(const ConditionMaps&, const ConditionMaps&) = default;
};

/// Z-buffered, back-face-culled orthographic rasterization of a canonical mesh.
inline ConditionMaps rasterize_conditions(const Mesh& mesh, const CameraView& cam, int resolution) {
    ConditionMaps out = ConditionMaps::empty(resolution);
    out.view_dir = cam.toward_camera();
    const double h = cam.ortho_half_extent;
    const double px = 2.0 * h / resolution;
    std::vector<double> zbuf(static_cast<std::size_t>(resolution) * resolution,
                             std::numeric_limits<double>::infinity());

    for (const auto& tri : mesh.triangles) {
        std::array<Vec3, 3> q;
        for (int k = 0; k < 3; ++k) q[k] = to_camera(cam, mesh.positions[tri[k].position]);
        const double area = (double(q[1][0]) - q[0][0]) * (double(q[2][1]) - q[0][1]) -
                            (double(q[1][1]) - q[0][1]) * (double(q[2][0]) - q[0][0]);
        if (area <= 0) continue; // back-facing or degenerate

        double xmin = q[0][0], xmax = q[0][0], ymin = q[0][1], ymax = q[0][1];
        for (int k = 1; k < 3; ++k) {
            xmin = std::min<double>(xmin, q[k][0]);
            xmax = std::max<double>(xmax, q[k][0]);
            ymin = std::min<double>(ymin, q[k][1]);
            ymax = std::max<double>(ymax, q[k][1]);
        }
        const int j0 = std::max(0, static_cast<int>(std::floor((xmin + h) / px - 0.5)));
        const int j1 = std::min(resolution - 1, static_cast<int>(std::ceil((xmax + h) / px - 0.5)));
        const int i0 = std::max(0, static_cast<int>(std::floor((h - ymax) / px - 0.5)));
        const int i1 = std::min(resolution - 1, static_cast<int>(std::ceil((h - ymin) / px - 0.5)));

        for (int i = i0; i <= i1; ++i) {
            const double y = h - (i + 0.5) * px;
            for (int j = j0; j <= j1; ++j) {
                const double x = -h + (j + 0.5) * px;
                const double w0 = ((double(q[1][0]) - x) * (double(q[2][1]) - y) -
                                   (double(q[1][1]) - y) * (double(q[2][0]) - x)) / area;
                const double w1 = ((double(q[2][0]) - x) * (double(q[0][1]) - y) -
                                   (double(q[2][1]) - y) * (double(q[0][0]) - x)) / area;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                const double depth = -(w0 * q[0][2] + w1 * q[1][2] + w2 * q[2][2]);
                const std::size_t pix = static_cast<std::size_t>(i) * resolution + j;
                if (!(depth < zbuf[pix])) continue;
                zbuf[pix] = depth;

                const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
                Vec3 n{0, 0, 0};
                for (int a = 0; a < 3; ++a) {
                    const auto& p0 = mesh.positions[tri[0].position];
                    const auto& p1 = mesh.positions[tri[1].position];
                    const auto& p2 = mesh.positions[tri[2].position];
                    out.ccm(si, sj, a) = static_cast<float>(w0 * p0[a] + w1 * p1[a] + w2 * p2[a]);
                    n[a] = static_cast<float>(w0 * mesh.normals[tri[0].normal][a] +
                                              w1 * mesh.normals[tri[1].normal][a] +
                                              w2 * mesh.normals[tri[2].normal][a]);
                }
                n = normalized3(n);
                for (int a = 0; a < 3; ++a) out.normal(si, sj, a) = n[a];
                for (int a = 0; a < 2; ++a) {
                    out.uv(si, sj, a) = static_cast<float>(w0 * mesh.uvs[tri[0].uv][a] + w1 * mesh.uvs[tri[1].uv][a] +
                                                           w2 * mesh.uvs[tri[2].uv][a]);
                }
                out.depth(si, sj) = static_cast<float>(depth);
                out.mask(si, sj) = 1.0f;
            }
        }
    }
    return out;
}

/// Camera-frame point seen at pixel (i, j) with the stored depth, mapped back to world.
inline Vec3 unproject_pixel(const CameraView& cam, const ConditionMaps& maps, std::size_t i, std::size_t j) {
    const double h = cam.ortho_half_extent, px = 2.0 * h / maps.resolution;
    const Vec3 q{static_cast<float>(-h + (j + 0.5) * px), static_cast<float>(h - (i + 0.5) * px),
                 -maps.depth(i, j)};
    return from_camera(cam, q);
}

/// Nearest-pixel decimation: output pixel (i, j) copies source pixel (i·f, j·f).
/// Sampling the top-left pixel of each block makes decimations compose exactly.
inline ConditionMaps downsample_conditions(const ConditionMaps& maps, int target_resolution) {
    if (target_resolution <= 0 || maps.resolution % target_resolution != 0) {
        throw std::invalid_argument("downsample_conditions: " + std::to_string(target_resolution) +
                                    " does not divide " + std::to_string(maps.resolution));
    }
    const std::size_t f = static_cast<std::size_t>(maps.resolution / target_resolution);
    if (f == 1) return maps;
    ConditionMaps out = ConditionMaps::empty(target_resolution);
    out.view_dir = maps.view_dir;
    const auto r = static_cast<std::size_t>(target_resolution);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
            const std::size_t si = i * f, sj = j * f;
            for (int a = 0; a < 3; ++a) {
                out.ccm(i, j, a) = maps.ccm(si, sj, a);
                out.normal(i, j, a) = maps.normal(si, sj, a);
            }
            for (int a = 0; a < 2; ++a) out.uv(i, j, a) = maps.uv(si, sj, a);
            out.mask(i, j) = maps.mask(si, sj);
            out.depth(i, j) = maps.depth(si, sj);
        }
    }
    return out;
}

} // namespace romantex
