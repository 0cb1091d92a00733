#pragma once

// Command implementations behind the romantex executable. Each command takes a
// validated RunConfig plus command arguments and returns a process exit code.

#include "romantex/config.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace romantex {

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitNumerical = 3, kExitThreshold = 4 };

struct CommandArgs {
    std::string dataset;    // dataset directory (train)
    std::string resume;     // checkpoint to resume from (train)
    std::string checkpoint; // generate
    std::string mesh;       // render-conditions, generate, bake
    std::string ref_image;  // generate
    std::string images;     // bake: directory with view_*.png and cameras.txt
    std::string partials;   // eval: directory with partial_*.rtxa
};

namespace fs = std::filesystem;

namespace detail {

inline PngText artifact_text(const std::string& hash, const std::string& what) {
    return {{"romantex:config_hash", hash}, {"romantex:artifact", what}};
}

inline std::string view_name(const std::string& stem, std::size_t i, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%02zu", i);
    return stem + buf + ext;
}

inline Mesh load_input_mesh(const std::string& name) {
    if (name.empty()) throw std::invalid_argument("a mesh is required (--mesh NAME|PATH.obj)");
    return builtin_or_obj(name);
}

inline Grid read_rgb(const std::string& path) { return to_channels(read_png(path).pixels, 3); }

struct CameraFile {
    std::string config_hash;
    std::vector<CameraView> cameras;
};

inline void write_cameras(const std::string& path, const std::vector<CameraView>& cams, const std::string& hash) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "# romantex cameras\nconfig_hash " << hash << "\n";
    for (std::size_t i = 0; i < cams.size(); ++i) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "view %zu %.9g %.9g %.9g\n", i, cams[i].azimuth, cams[i].elevation,
                      cams[i].ortho_half_extent);
        f << buf;
    }
}

inline CameraFile read_cameras(const std::string& path) {
    std::istringstream in(read_text_file(path));
    CameraFile cf;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag.empty() || tag[0] == '#') continue;
        if (tag == "config_hash") {
            ls >> cf.config_hash;
        } else if (tag == "view") {
            std::size_t idx = 0;
            float az = 0, el = 0, he = 0;
            ls >> idx >> az >> el >> he;
            if (!ls || idx != cf.cameras.size()) throw IoError(path + ": malformed camera line '" + line + "'");
            cf.cameras.push_back(make_camera(az, el, he));
        } else {
            throw IoError(path + ": unknown record '" + tag + "'");
        }
    }
    return cf;
}

inline std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& prefix, const std::string& ext) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string n = e.path().filename().string();
        if (n.starts_with(prefix) && e.path().extension() == ext) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------

/// Writes meshes, textures, renders, condition maps and the manifest.
inline int cmd_gen_dataset(const RunConfig& cfg, const CommandArgs&, std::ostream& out) {
    const std::string hash = config_hash(cfg);
    const fs::path root = fs::path(cfg.output_dir) / "dataset";
    ensure_directory(root / "meshes");
    const auto objects = build_dataset(cfg.dataset());
    Manifest man;
    man.config_hash = hash;
    std::map<std::string, bool> mesh_written;
    for (const auto& o : objects) {
        if (!mesh_written[o.mesh_name]) {
            std::ofstream f(root / "meshes" / (o.mesh_name + ".obj"));
            if (!f) throw IoError("cannot write mesh for " + o.mesh_name);
            write_obj(o.mesh, f);
            mesh_written[o.mesh_name] = true;
        }
        const std::string dir = o.mesh_name + "_v" + std::to_string(o.variant);
        ensure_directory(root / dir);
        write_png((root / dir / "texture.png").string(), o.texture, detail::artifact_text(hash, "texture"));
        write_png((root / dir / "ref.png").string(), o.reference, detail::artifact_text(hash, "reference"));
        const auto& t = o.texture_spec;
        char spec[256];
        std::snprintf(spec, sizeof spec, "%s %d %s %s cells=%d angle=%.6g a=%.6g,%.6g,%.6g b=%.6g,%.6g,%.6g",
                      o.mesh_name.c_str(), o.variant, dir.c_str(), to_string(t.kind).c_str(), t.cells, t.angle,
                      t.color_a[0], t.color_a[1], t.color_a[2], t.color_b[0], t.color_b[1], t.color_b[2]);
        man.objects.push_back(spec);
        for (std::size_t v = 0; v < o.images.size(); ++v) {
            const std::string img = dir + "/" + detail::view_name("view", v, ".png");
            const std::string cond = dir + "/" + detail::view_name("cond", v, ".rtxa");
            write_png((root / img).string(), o.images[v], detail::artifact_text(hash, "view"));
            save_conditions((root / cond).string(), o.conds[v], hash);
            man.entries.push_back({o.mesh_name, o.variant, static_cast<int>(v), o.cameras[v].azimuth,
                                   o.cameras[v].elevation, o.seed, img, cond});
        }
    }
    write_manifest((root / "manifest.txt").string(), man);
    out << "dataset: " << objects.size() << " objects, " << man.entries.size() << " samples → "
        << (root / "manifest.txt").string() << "\n";
    return kExitOk;
}

/// Loads a dataset directory written by gen-dataset.
inline std::vector<DatasetObject> load_dataset(const fs::path& root, const RunConfig& cfg) {
    const Manifest man = read_manifest((root / "manifest.txt").string());
    std::vector<DatasetObject> objects;
    std::map<std::string, std::size_t> index;
    for (const auto& line : man.objects) {
        std::istringstream ls(line);
        DatasetObject o;
        std::string dir;
        ls >> o.mesh_name >> o.variant >> dir;
        if (!ls) throw IoError("malformed object record in manifest");
        index[o.mesh_name + "#" + std::to_string(o.variant)] = objects.size();
        o.reference = detail::read_rgb((root / dir / "ref.png").string());
        objects.push_back(std::move(o));
    }
    for (const auto& e : man.entries) {
        const auto it = index.find(e.mesh + "#" + std::to_string(e.variant));
        if (it == index.end()) throw IoError("manifest sample refers to an unknown object");
        DatasetObject& o = objects[it->second];
        if (e.view != static_cast<int>(o.images.size())) throw IoError("manifest views out of order");
        o.seed = e.seed;
        o.images.push_back(detail::read_rgb((root / e.image).string()));
        o.conds.push_back(load_conditions((root / e.cond).string()));
        const auto res = static_cast<std::size_t>(cfg.image_resolution);
        if (o.images.back().extent(0) != res || o.conds.back().resolution != cfg.image_resolution) {
            throw ShapeError("dataset image resolution " + std::to_string(o.images.back().extent(0)) +
                             " does not match image_resolution " + std::to_string(res));
        }
    }
    for (const auto& o : objects) {
        if (o.images.size() < static_cast<std::size_t>(cfg.train_views)) {
            throw ShapeError("dataset object " + o.mesh_name + " has fewer views than train_views");
        }
    }
    if (objects.empty()) throw IoError("dataset is empty");
    return objects;
}

inline int cmd_render_conditions(const RunConfig& cfg, const CommandArgs& args, std::ostream& out) {
    const std::string hash = config_hash(cfg);
    const Mesh mesh = detail::load_input_mesh(args.mesh);
    const fs::path root = fs::path(cfg.output_dir) / "conditions";
    ensure_directory(root);
    const auto cams = make_camera_rig(cfg.n_views, static_cast<float>(cfg.elevation), static_cast<float>(cfg.half_extent));
    const DenoiserConfig model = cfg.model();
    for (std::size_t v = 0; v < cams.size(); ++v) {
        const ConditionMaps m = rasterize_conditions(mesh, cams[v], cfg.image_resolution);
        save_conditions((root / detail::view_name("cond", v, ".rtxa")).string(), m, hash);
        write_png((root / detail::view_name("ccm", v, ".png")).string(), remap(m.ccm, 1, 0),
                  detail::artifact_text(hash, "ccm"));
        write_png((root / detail::view_name("normal", v, ".png")).string(), remap(m.normal, 0.5f, 0.5f),
                  detail::artifact_text(hash, "normal"));
        const auto r = static_cast<std::size_t>(m.resolution);
        write_png((root / detail::view_name("mask", v, ".png")).string(), Grid({r, r, 1}, m.mask.storage()),
                  detail::artifact_text(hash, "mask"));
        const auto phases = phase_pyramid(m, model.pyramid());
        for (const auto& p : phases) {
            save_phases((root / detail::view_name("phases_l" + std::to_string(p.level), v, ".rtxa")).string(), p, hash);
        }
    }
    detail::write_cameras((root / "cameras.txt").string(), cams, hash);
    out << "conditions: " << cams.size() << " views → " << root.string() << "\n";
    return kExitOk;
}

inline void save_checkpoint(const std::string& path, const DenoiserState& s, const AdamW<float>& opt,
                            const std::string& hash) {
    TensorArchive ar = checkpoint_archive(s, &opt);
    ar.set_meta("config_hash", hash);
    save_archive(path, ar);
}

/// SA pretraining on single views, then multi-view training with SA frozen.
inline int cmd_train(const RunConfig& cfg, const CommandArgs& args, std::ostream& out) {
    const std::string hash = config_hash(cfg);
    const fs::path data_root = args.dataset.empty() ? fs::path(cfg.output_dir) / "dataset" : fs::path(args.dataset);
    const auto objects = load_dataset(data_root, cfg);
    const fs::path root = fs::path(cfg.output_dir) / "train";
    ensure_directory(root);
    const NoiseSchedule schedule = cfg.schedule();
    const DenoiserConfig model = cfg.model();

    DenoiserState state;
    AdamW<float> opt;
    if (!args.resume.empty()) {
        const TensorArchive ar = load_archive(args.resume);
        state = state_from_archive(ar);
        const DenoiserConfig c = state.cfg;
        if (c.image_resolution != model.image_resolution || c.channels1 != model.channels1 ||
            c.channels2 != model.channels2 || c.heads1 != model.heads1 || c.heads2 != model.heads2 ||
            c.timesteps != model.timesteps || c.beta_start != model.beta_start || c.beta_end != model.beta_end) {
            throw ShapeError("checkpoint model shape does not match the config");
        }
        auto o = optimizer_from_archive(ar, state, cfg.optimizer());
        if (!o) throw IoError("checkpoint has no optimizer state; cannot resume");
        opt = std::move(*o);
    } else {
        state = DenoiserState::init(model, cfg.seed);
        opt = AdamW<float>::init(state.params, cfg.optimizer());
    }

    const fs::path log_path = root / "train_log.csv";
    const bool fresh = args.resume.empty() || !fs::exists(log_path);
    std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot write " + log_path.string());
    if (fresh) log << "step,phase,t,loss,drop_geo,drop_ref,drop_mv\n";

    const Rng train_root = seeded_rng(cfg.seed).split("train");
    const auto ckpt = (root / "checkpoint.rtxa").string();
    for (std::int64_t step = opt.step; step < cfg.train_steps; ++step) {
        if (step >= cfg.pretrain_steps && !state.sa_frozen) {
            state.snapshot_refnet();
            state.sa_frozen = true;
        }
        const TrainPhase phase = step < cfg.pretrain_steps ? TrainPhase::self_attention : TrainPhase::multi_view;
        Rng rng = train_root.split(static_cast<std::uint64_t>(step));
        const DatasetObject& obj = objects[rng.below(objects.size())];
        const std::size_t nv = phase == TrainPhase::self_attention ? 1 : static_cast<std::size_t>(cfg.train_views);
        const TrainingExample<float> ex = make_example(obj, model, nv, rng);
        const TrainStepResult r = train_step(state, opt, ex, schedule, rng, cfg.dropout(), phase);
        char row[160];
        std::snprintf(row, sizeof row, "%lld,%s,%d,%.9g,%d,%d,%d\n", static_cast<long long>(step),
                      phase == TrainPhase::self_attention ? "sa" : "mv", r.t, r.loss, r.dropped.geo, r.dropped.ref,
                      r.dropped.mv);
        log << row;
        if ((step + 1) % cfg.checkpoint_every == 0) {
            log.flush();
            save_checkpoint(ckpt, state, opt, hash);
        }
    }
    log.flush();
    save_checkpoint(ckpt, state, opt, hash);
    out << "train: " << opt.step << " steps → " << ckpt << "\n";
    return kExitOk;
}

inline int cmd_generate(const RunConfig& cfg, const CommandArgs& args, std::ostream& out) {
    const std::string hash = config_hash(cfg);
    if (args.checkpoint.empty()) throw std::invalid_argument("generate requires --checkpoint");
    if (!fs::exists(args.checkpoint)) throw IoError("checkpoint '" + args.checkpoint + "' does not exist");
    const DenoiserState state = state_from_archive(load_archive(args.checkpoint));
    const Mesh mesh = detail::load_input_mesh(args.mesh);
    const auto cams = make_camera_rig(cfg.n_views, static_cast<float>(cfg.elevation), static_cast<float>(cfg.half_extent));
    const int res = static_cast<int>(state.cfg.image_resolution);
    std::vector<ConditionMaps> conds;
    for (const auto& c : cams) conds.push_back(rasterize_conditions(mesh, c, res));
    std::optional<Grid> ref;
    if (!args.ref_image.empty()) ref = detail::read_rgb(args.ref_image);

    const NoiseSchedule schedule = state.cfg.schedule();
    SampleOptions so;
    so.steps = std::min(cfg.sample_steps, state.cfg.timesteps);
    so.eta = cfg.eta;
    so.use_mv = cfg.use_mv;
    so.keep_bundles = cfg.dump_bundles;
    Rng rng = seeded_rng(cfg.seed).split("sample");
    const SampleResult result =
        sample(state, conds, ref, view_phases(conds, state.cfg, cfg.use_rope), schedule, cfg.guidance(), rng, so);

    const fs::path root = fs::path(cfg.output_dir) / "generate";
    ensure_directory(root);
    for (std::size_t v = 0; v < result.images.size(); ++v) {
        write_png((root / detail::view_name("view", v, ".png")).string(), result.images[v],
                  detail::artifact_text(hash, "generated-view"));
    }
    detail::write_cameras((root / "cameras.txt").string(), cams, hash);
    if (cfg.dump_bundles) {
        TensorArchive ar;
        ar.set_meta("kind", "guidance-bundles");
        ar.set_meta("config_hash", hash);
        for (std::size_t s = 0; s < result.bundles.size(); ++s) {
            const auto& b = result.bundles[s];
            for (std::size_t v = 0; v < b.eps_uncond.size(); ++v) {
                const std::string tag = "step" + std::to_string(s) + ".view" + std::to_string(v);
                ar.add(tag + ".uncond", b.eps_uncond[v].data);
                ar.add(tag + ".geo", b.eps_geo[v].data);
                ar.add(tag + ".full", b.eps_full[v].data);
            }
        }
        save_archive((root / "bundles.rtxa").string(), ar);
    }
    if (result.degenerate_fallback) out << "warning: orthogonal guidance fell back to plain on a degenerate step\n";
    out << "generate: " << result.images.size() << " views → " << root.string() << "\n";
    return kExitOk;
}

inline std::string format_lad_report(const LADReport& r, const std::string& hash) {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", r.lad);
    os << "lad: " << buf << "\n";
    os << "overlap_texel_count: " << r.overlap_texel_count << "\n";
    os << "no_overlap: " << (r.no_overlap ? "true" : "false") << "\n";
    for (std::size_t v = 0; v < r.per_view_contributions.size(); ++v) {
        std::snprintf(buf, sizeof buf, "%.9g", r.per_view_contributions[v]);
        os << "view_" << v << ": " << buf << "\n";
    }
    os << "config_hash: " << hash << "\n";
    return os.str();
}

/// Unprojects every view, blends, inpaints and writes the texture.
inline int cmd_bake(const RunConfig& cfg, const CommandArgs& args, std::ostream& out) {
    const std::string hash = config_hash(cfg);
    if (args.images.empty()) throw std::invalid_argument("bake requires --images DIR");
    const Mesh mesh = detail::load_input_mesh(args.mesh);
    const fs::path in_dir(args.images);
    const auto cams = detail::read_cameras((in_dir / "cameras.txt").string()).cameras;
    const auto views = detail::sorted_files(in_dir, "view_", ".png");
    if (views.size() != cams.size()) {
        throw std::invalid_argument("bake: " + std::to_string(views.size()) + " images but " +
                                    std::to_string(cams.size()) + " cameras");
    }
    if (views.empty()) throw std::invalid_argument("bake: no images");
    const fs::path root = fs::path(cfg.output_dir) / "bake";
    ensure_directory(root);
    std::vector<PartialTexture> partials;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const Grid img = detail::read_rgb(views[v].string());
        if (img.extent(0) != img.extent(1)) throw ShapeError("bake: images must be square");
        const ConditionMaps maps = rasterize_conditions(mesh, cams[v], static_cast<int>(img.extent(0)));
        partials.push_back(unproject_view(img, maps, cfg.bake_resolution));
        save_partial((root / detail::view_name("partial", v, ".rtxa")).string(), partials.back(), hash);
    }
    const UVTexture tex = inpaint(blend(partials, cfg.blend_exponent));
    write_png((root / "texture.png").string(), tex.texels, detail::artifact_text(hash, "texture"));
    TensorArchive ar;
    ar.set_meta("kind", "uv-texture");
    ar.set_meta("config_hash", hash);
    ar.add("texels", tex.texels);
    ar.add("coverage", tex.coverage);
    save_archive((root / "texture.rtxa").string(), ar);
    if (partials.size() >= 2) {
        const std::string report = format_lad_report(compute_lad(partials), hash);
        std::ofstream((root / "lad.txt").string()) << report;
    }
    out << "bake: " << partials.size() << " views → " << (root / "texture.png").string() << "\n";
    return kExitOk;
}

/// Prints the LAD report; exit code 4 when LAD exceeds lad_threshold.
inline int cmd_eval(const RunConfig& cfg, const CommandArgs& args, std::ostream& out) {
    const std::string hash = config_hash(cfg);
    if (args.partials.empty()) throw std::invalid_argument("eval requires --partials DIR");
    std::vector<PartialTexture> partials;
    for (const auto& p : detail::sorted_files(args.partials, "partial_", ".rtxa")) partials.push_back(load_partial(p.string()));
    if (partials.size() < 2) throw std::invalid_argument("eval needs at least two partial textures");
    const LADReport r = compute_lad(partials);
    out << format_lad_report(r, hash);
    if (r.lad > cfg.lad_threshold) {
        out << "FAIL: lad " << r.lad << " exceeds threshold " << cfg.lad_threshold << "\n";
        return kExitThreshold;
    }
    return kExitOk;
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"gen-dataset", "render-conditions", "train", "generate", "bake", "eval"};
    return names;
}

/// Validates the config, dispatches, and maps failures onto exit codes.
inline int run_command(const std::string& name, const RunConfig& cfg, const CommandArgs& args,
                       std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        cfg.validate();
        if (name == "gen-dataset") return cmd_gen_dataset(cfg, args, out);
        if (name == "render-conditions") return cmd_render_conditions(cfg, args, out);
        if (name == "train") return cmd_train(cfg, args, out);
        if (name == "generate") return cmd_generate(cfg, args, out);
        if (name == "bake") return cmd_bake(cfg, args, out);
        if (name == "eval") return cmd_eval(cfg, args, out);
        throw std::invalid_argument("unknown command '" + name + "'");
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

} // namespace romantex
