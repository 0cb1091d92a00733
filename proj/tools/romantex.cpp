// romantex command-line driver.
//
//   romantex gen-dataset [--config run.cfg] [--seed 7] ...
//   romantex train --dataset out/dataset
//   romantex generate --checkpoint out/train/checkpoint.rtxa --mesh sphere --ref-image ref.png
//   romantex bake --mesh sphere --images out/generate
//   romantex eval --partials out/bake
//
// Every config key is also a flag (`lad_threshold` → `--lad-threshold`).

#include "romantex/cli.hpp"

#include <CLI11.hpp>

#include <map>
#include <optional>

namespace {

std::string flag_name(const std::string& key) {
    std::string f = key;
    std::replace(f.begin(), f.end(), '_', '-');
    return "--" + f;
}

} // namespace

int main(int argc, char** argv) {
    using namespace romantex;
    CLI::App app{"Multi-view texture generation with 3D-aware rotary attention"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flag_values;
    CommandArgs args;

    std::vector<CLI::App*> subs;
    const std::map<std::string, std::string> about{
        {"gen-dataset", "render the synthetic training set"},
        {"render-conditions", "rasterize condition maps and voxel phases for a mesh"},
        {"train", "pretrain self-attention, then train the multi-view branches"},
        {"generate", "sample a multi-view image set for a mesh"},
        {"bake", "unproject generated views into a UV texture"},
        {"eval", "report the local alignment distance of saved partial textures"},
    };
    for (const auto& name : command_names()) {
        CLI::App* sub = app.add_subcommand(name, about.at(name));
        sub->add_option("--config", config_path, "flat key = value config file");
        sub->add_option("--set", sets, "override a config key (key=value), repeatable");
        for (const auto& f : config_fields()) {
            std::string names = flag_name(f.key);
            if (f.key == "n_views") names += ",--views";
            if (f.key == "output_dir") names += ",--output";
            sub->add_option_function<std::string>(
                names, [&flag_values, key = f.key](const std::string& v) { flag_values[key] = v; },
                "config key " + f.key);
        }
        if (name == "train") {
            sub->add_option("--dataset", args.dataset, "dataset directory (default <output_dir>/dataset)");
            sub->add_option("--resume", args.resume, "checkpoint to resume from");
        }
        if (name == "render-conditions" || name == "generate" || name == "bake") {
            sub->add_option("--mesh", args.mesh, "cube, sphere, torus, or an OBJ path");
        }
        if (name == "generate") {
            sub->add_option("--checkpoint", args.checkpoint, "trained checkpoint");
            sub->add_option("--ref-image", args.ref_image, "reference image (PNG)");
        }
        if (name == "bake") sub->add_option("--images", args.images, "directory with view_*.png and cameras.txt");
        if (name == "eval") sub->add_option("--partials", args.partials, "directory with partial_*.rtxa");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config_file(config_path, cfg);
        apply_output_root_env(cfg);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            set_config_value(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
        }
        for (const auto& [k, v] : flag_values) set_config_value(cfg, k, v);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    for (CLI::App* sub : subs) {
        if (sub->parsed()) return run_command(sub->get_name(), cfg, args);
    }
    return kExitValidation;
}
