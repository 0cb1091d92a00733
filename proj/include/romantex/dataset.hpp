#pragma once

// Procedural textures and the synthetic multi-view dataset.

#include "romantex/baking.hpp"
#include "romantex/denoiser.hpp"
#include "romantex/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace romantex {

enum class TextureKind { checker, gradient, stripe };

inline std::string to_string(TextureKind k) {
    switch (k) {
    case TextureKind::checker: return "checker";
    case TextureKind::gradient: return "gradient";
    case TextureKind::stripe: return "stripe";
    }
    return "?";
}

inline TextureKind parse_texture_kind(const std::string& s) {
    if (s == "checker") return TextureKind::checker;
    if (s == "gradient") return TextureKind::gradient;
    if (s == "stripe") return TextureKind::stripe;
    throw std::invalid_argument("unknown texture kind '" + s + "'");
}

struct TextureSpec {
    TextureKind kind = TextureKind::checker;
    std::array<float, 3> color_a{0, 0, 0}, color_b{1, 1, 1};
    int cells = 8;      // checker cells / stripe periods per UV unit
    float angle = 0.0f; // gradient / stripe direction in radians
};

inline Grid make_texture(const TextureSpec& spec, int resolution) {
    if (resolution <= 0) throw std::invalid_argument("make_texture: resolution must be positive");
    if (spec.cells <= 0) throw std::invalid_argument("make_texture: cells must be positive");
    const auto r = static_cast<std::size_t>(resolution);
    Grid tex({r, r, 3});
    const double ca = std::cos(spec.angle), sa = std::sin(spec.angle);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
            const double u = (j + 0.5) / r, v = (i + 0.5) / r;
            double s = 0;
            switch (spec.kind) {
            case TextureKind::checker:
                s = static_cast<double>((i * spec.cells / r + j * spec.cells / r) % 2);
                break;
            case TextureKind::gradient:
                s = std::clamp(0.5 + (u - 0.5) * ca + (v - 0.5) * sa, 0.0, 1.0);
                break;
            case TextureKind::stripe: {
                const double w = (u * ca + v * sa) * spec.cells;
                s = (w - std::floor(w)) < 0.5 ? 0.0 : 1.0;
                break;
            }
            }
            for (std::size_t k = 0; k < 3; ++k) {
                tex(i, j, k) = static_cast<float>((1 - s) * spec.color_a[k] + s * spec.color_b[k]);
            }
        }
    }
    return tex;
}

inline TextureSpec random_texture_spec(Rng& rng) {
    TextureSpec s;
    s.kind = static_cast<TextureKind>(rng.below(3));
    for (auto* c : {&s.color_a, &s.color_b})
        for (auto& x : *c) x = static_cast<float>(rng.uniform(0.05, 0.95));
    constexpr int kCells[] = {2, 4, 6, 8};
    s.cells = kCells[rng.below(4)];
    s.angle = static_cast<float>(rng.uniform(0.0, 2.0 * std::numbers::pi));
    return s;
}

/// Box-filtered albedo render: shade at `supersample`× resolution and average.
inline Grid render_image(const Mesh& mesh, const Grid& texture, const CameraView& cam, int resolution,
                         int supersample = 4, std::array<float, 3> clear_color = {0, 0, 0}) {
    if (supersample < 1) throw std::invalid_argument("render_image: supersample must be >= 1");
    const Grid hi = render_textured(mesh, texture, cam, resolution * supersample, clear_color);
    if (supersample == 1) return hi;
    const auto r = static_cast<std::size_t>(resolution), f = static_cast<std::size_t>(supersample);
    Grid img({r, r, 3});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
            for (std::size_t k = 0; k < 3; ++k) {
                double acc = 0;
                for (std::size_t a = 0; a < f; ++a)
                    for (std::size_t b = 0; b < f; ++b) acc += hi(i * f + a, j * f + b, k);
                img(i, j, k) = static_cast<float>(acc / static_cast<double>(f * f));
            }
    return img;
}

/// Built-in meshes by name; anything else is read as an OBJ path.
inline Mesh builtin_or_obj(const std::string& name) {
    if (name == "sphere") return make_uv_sphere();
    if (name == "cube") return make_cube();
    if (name == "torus") return make_torus();
    return normalize_to_canonical(load_mesh(name));
}

inline std::string mesh_label(const std::string& name) {
    if (name == "sphere" || name == "cube" || name == "torus") return name;
    return std::filesystem::path(name).stem().string();
}

// ---------------------------------------------------------------------------
// In-memory dataset.

struct DatasetSpec {
    std::vector<std::string> meshes{"cube", "sphere", "torus"};
    int variants_per_mesh = 1;
    int n_views = 6;
    float elevation = 0.0f;
    float half_extent = 0.55f;
    int image_resolution = 32;
    int texture_resolution = 64;
    int supersample = 4;
    float ref_azimuth = 30.0f, ref_elevation = 20.0f;
    std::uint64_t seed = 0;
};

struct DatasetObject {
    std::string mesh_name;
    int variant = 0;
    std::uint64_t seed = 0; // per-object texture seed
    TextureSpec texture_spec;
    Mesh mesh;
    Grid texture;
    std::vector<CameraView> cameras;
    std::vector<Grid> images; // H×W×3 in [0,1]
    std::vector<ConditionMaps> conds;
    Grid reference;
};

inline CameraView reference_camera(const DatasetSpec& s) {
    CameraView c = make_camera(s.ref_azimuth, s.ref_elevation, s.half_extent);
    c.is_reference_pose = true;
    return c;
}

/// Renders one textured object from the rig and the reference pose.
inline DatasetObject render_object(const DatasetSpec& s, const std::string& mesh_name, const Mesh& mesh,
                                   const TextureSpec& spec, int variant, std::uint64_t seed) {
    DatasetObject o;
    o.mesh_name = mesh_name;
    o.variant = variant;
    o.seed = seed;
    o.texture_spec = spec;
    o.mesh = mesh;
    o.texture = make_texture(spec, s.texture_resolution);
    o.cameras = make_camera_rig(s.n_views, s.elevation, s.half_extent);
    for (const auto& cam : o.cameras) {
        o.images.push_back(render_image(mesh, o.texture, cam, s.image_resolution, s.supersample));
        o.conds.push_back(rasterize_conditions(mesh, cam, s.image_resolution));
    }
    o.reference = render_image(mesh, o.texture, reference_camera(s), s.image_resolution, s.supersample);
    return o;
}

/// Every mesh × variant; texture specs come from the "dataset" sub-stream.
inline std::vector<DatasetObject> build_dataset(const DatasetSpec& s) {
    if (s.meshes.empty()) throw std::invalid_argument("dataset: no meshes");
    if (s.variants_per_mesh < 1) throw std::invalid_argument("dataset: variants_per_mesh must be >= 1");
    const Rng root = seeded_rng(s.seed).split("dataset");
    std::vector<DatasetObject> out;
    for (const auto& name : s.meshes) {
        const Mesh mesh = builtin_or_obj(name);
        for (int v = 0; v < s.variants_per_mesh; ++v) {
            Rng rng = root.split(mesh_label(name)).split(static_cast<std::uint64_t>(v));
            const std::uint64_t obj_seed = rng.key();
            out.push_back(render_object(s, mesh_label(name), mesh, random_texture_spec(rng), v, obj_seed));
        }
    }
    return out;
}

/// Training example with `n_views` views drawn without replacement.
inline TrainingExample<float> make_example(const DatasetObject& o, const DenoiserConfig& cfg, std::size_t n_views,
                                           Rng& rng, bool with_reference = true) {
    const std::size_t total = o.images.size();
    if (n_views < 1 || n_views > total) throw std::invalid_argument("make_example: bad view count");
    std::vector<std::size_t> idx(total);
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n_views; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);
    TrainingExample<float> ex;
    for (std::size_t i = 0; i < n_views; ++i) {
        ex.views.push_back(image_to_model<float>(o.images[idx[i]], i));
        ex.conds.push_back(o.conds[idx[i]]);
    }
    ex.phases = view_phases(ex.conds, cfg);
    if (with_reference) ex.reference = image_to_model<float>(o.reference);
    return ex;
}

// ---------------------------------------------------------------------------
// Artifact files.

inline void save_conditions(const std::string& path, const ConditionMaps& m, const std::string& config_hash) {
    TensorArchive ar;
    ar.set_meta("kind", "condition-maps");
    ar.set_meta("config_hash", config_hash);
    ar.set_meta("resolution", std::to_string(m.resolution));
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", m.view_dir[0], m.view_dir[1], m.view_dir[2]);
    ar.set_meta("view_dir", buf);
    ar.add("ccm", m.ccm);
    ar.add("normal", m.normal);
    ar.add("mask", m.mask);
    ar.add("uv", m.uv);
    ar.add("depth", m.depth);
    save_archive(path, ar);
}

inline ConditionMaps load_conditions(const std::string& path) {
    const TensorArchive ar = load_archive(path);
    if (ar.get_meta("kind") != "condition-maps") throw IoError(path + ": not a condition-map archive");
    ConditionMaps m;
    m.resolution = std::stoi(ar.get_meta("resolution", "0"));
    std::istringstream vd(ar.get_meta("view_dir"));
    vd >> m.view_dir[0] >> m.view_dir[1] >> m.view_dir[2];
    m.ccm = ar.get("ccm");
    m.normal = ar.get("normal");
    m.mask = ar.get("mask");
    m.uv = ar.get("uv");
    m.depth = ar.get("depth");
    const auto r = static_cast<std::size_t>(m.resolution);
    if (m.ccm.shape() != Shape{r, r, 3} || m.mask.shape() != Shape{r, r}) throw IoError(path + ": inconsistent shapes");
    return m;
}

inline void save_phases(const std::string& path, const PhaseGrid& p, const std::string& config_hash) {
    TensorArchive ar;
    ar.set_meta("kind", "phase-grid");
    ar.set_meta("config_hash", config_hash);
    ar.set_meta("level", std::to_string(p.level));
    ar.set_meta("voxel_resolution", std::to_string(p.voxel_resolution));
    Grid ph({p.height, p.width, 3}), valid({p.height, p.width});
    for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t a = 0; a < 3; ++a) ph[t * 3 + a] = static_cast<float>(p.phases[t][a]);
        valid[t] = p.valid[t];
    }
    ar.add("phases", std::move(ph));
    ar.add("valid", std::move(valid));
    save_archive(path, ar);
}

inline PhaseGrid load_phases(const std::string& path) {
    const TensorArchive ar = load_archive(path);
    if (ar.get_meta("kind") != "phase-grid") throw IoError(path + ": not a phase-grid archive");
    const Grid& ph = ar.get("phases");
    const Grid& valid = ar.get("valid");
    PhaseGrid p = PhaseGrid::identity(ph.extent(0), ph.extent(1), std::stoul(ar.get_meta("level", "0")),
                                      std::stoi(ar.get_meta("voxel_resolution", "1")));
    for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t a = 0; a < 3; ++a) p.phases[t][a] = static_cast<std::int32_t>(ph[t * 3 + a]);
        p.valid[t] = valid[t] > 0.5f;
    }
    return p;
}

inline void save_partial(const std::string& path, const PartialTexture& p, const std::string& config_hash) {
    TensorArchive ar;
    ar.set_meta("kind", "partial-texture");
    ar.set_meta("config_hash", config_hash);
    ar.add("texture", p.texture);
    ar.add("mask", p.mask);
    ar.add("cosine", p.cosine);
    save_archive(path, ar);
}

inline PartialTexture load_partial(const std::string& path) {
    const TensorArchive ar = load_archive(path);
    if (ar.get_meta("kind") != "partial-texture") throw IoError(path + ": not a partial-texture archive");
    PartialTexture p{static_cast<int>(ar.get("mask").extent(0)), ar.get("texture"), ar.get("mask"), ar.get("cosine")};
    return p;
}

/// Float image → 8-bit channels, for writing previews of signed maps.
inline Grid remap(const Grid& g, float scale, float offset) {
    Grid out = g;
    for (auto& v : out.values()) v = std::clamp(v * scale + offset, 0.0f, 1.0f);
    return out;
}

inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create output directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
    }
    const auto probe = dir / ".write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw IoError("output directory '" + dir.string() + "' is not writable");
    }
    std::filesystem::remove(probe, ec);
}

// ---------------------------------------------------------------------------
// Manifest: one line per sample, closed by a checksum over all preceding bytes.

struct ManifestEntry {
    std::string mesh;
    int variant = 0;
    int view = 0;
    float azimuth = 0, elevation = 0;
    std::uint64_t seed = 0;
    std::string image, cond;
};

struct Manifest {
    std::string config_hash;
    std::vector<ManifestEntry> entries;
    std::vector<std::string> objects; // "<mesh> <variant> <texture-spec>" lines
};

inline std::string manifest_body(const Manifest& m) {
    std::ostringstream os;
    os << "romantex-manifest 1\n";
    os << "config_hash " << m.config_hash << "\n";
    for (const auto& o : m.objects) os << "object " << o << "\n";
    for (const auto& e : m.entries) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.6g %.6g", e.azimuth, e.elevation);
        os << "sample " << e.mesh << " " << e.variant << " " << e.view << " " << buf << " " << hex64(e.seed) << " "
           << e.image << " " << e.cond << "\n";
    }
    return os.str();
}

inline void write_manifest(const std::string& path, const Manifest& m) {
    const std::string body = manifest_body(m);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest '" + path + "'");
    f << body << "checksum " << hex64(fnv1a64(body)) << "\n";
    if (!f) throw IoError("failed writing manifest '" + path + "'");
}

inline Manifest read_manifest(const std::string& path) {
    const std::string text = read_text_file(path);
    const auto pos = text.rfind("checksum ");
    if (pos == std::string::npos) throw IoError(path + ": manifest has no checksum line");
    const std::string body = text.substr(0, pos);
    std::string stored = text.substr(pos + 9);
    while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) stored.pop_back();
    if (stored != hex64(fnv1a64(body))) throw IoError(path + ": manifest checksum mismatch (file corrupt or edited)");
    Manifest m;
    std::istringstream in(body);
    std::string line;
    std::getline(in, line);
    if (line != "romantex-manifest 1") throw IoError(path + ": unknown manifest header");
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "config_hash") {
            ls >> m.config_hash;
        } else if (tag == "object") {
            std::string rest;
            std::getline(ls, rest);
            m.objects.push_back(rest.empty() ? rest : rest.substr(1));
        } else if (tag == "sample") {
            ManifestEntry e;
            std::string seed;
            ls >> e.mesh >> e.variant >> e.view >> e.azimuth >> e.elevation >> seed >> e.image >> e.cond;
            if (!ls) throw IoError(path + ": malformed sample line");
            e.seed = std::stoull(seed, nullptr, 16);
            m.entries.push_back(std::move(e));
        } else if (!tag.empty()) {
            throw IoError(path + ": unknown manifest record '" + tag + "'");
        }
    }
    return m;
}

} // namespace romantex
