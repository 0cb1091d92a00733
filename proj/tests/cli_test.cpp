#include "romantex/cli.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace romantex;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

// Runs the built executable; stdout and stderr land in <dir>/last_output.txt.
int run_cli(const fs::path& dir, const std::string& args) {
    const std::string cmd =
        std::string(ROMANTEX_CLI_PATH) + " " + args + " > " + (dir / "last_output.txt").string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// A small model and dataset that keep every command to a few seconds.
std::string tiny_config(const fs::path& out) {
    return "version = 1\n"
           "output_dir = " + out.string() + "\n"
           "image_resolution = 16\n"
           "texture_resolution = 32\n"
           "supersample = 1\n"
           "channels1 = 12\n"
           "channels2 = 24\n"
           "train_steps = 8\n"
           "pretrain_steps = 2\n"
           "train_views = 2\n"
           "checkpoint_every = 4\n"
           "sample_steps = 3\n"
           "bake_resolution = 16\n";
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const fs::path p = dir / "run.cfg";
    std::ofstream(p) << text;
    return p;
}

std::vector<std::string> csv_rows(const fs::path& p) {
    std::ifstream f(p);
    std::vector<std::string> rows;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) rows.push_back(line);
    return rows;
}

} // namespace

TEST(Config, ParsesFileAndRejectsUnknownOrDuplicateKeys) {
    const RunConfig c = parse_config("# a run\nversion = 1\nseed = 7   # trailing\ns_geo = 1.5\nmeshes = sphere\n");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.s_geo, 1.5);
    EXPECT_EQ(c.mesh_list(), std::vector<std::string>{"sphere"});
    EXPECT_THROW(parse_config("sead = 7\n"), ConfigError);
    EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
    EXPECT_THROW(parse_config("seed 7\n"), ConfigError);
    EXPECT_THROW(parse_config("n_views = six\n"), ConfigError);
    EXPECT_THROW(parse_config("use_mv = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("seed = -1\n"), ConfigError);
}

TEST(Config, ValidationCatchesBadValues) {
    RunConfig c;
    c.validate();
    for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
             {"version", "2"}, {"n_views", "13"}, {"train_views", "7"}, {"image_resolution", "30"},
             {"dropout_geo", "1.5"}, {"guidance_mode", "sideways"}, {"s_ref", "-1"}, {"sample_steps", "101"},
             {"channels1", "40"}, {"beta_end", "1"}}) {
        RunConfig bad;
        set_config_value(bad, key, value);
        EXPECT_THROW(bad.validate(), ConfigError) << key << " = " << value;
    }
}

TEST(Config, HashIgnoresOutputDirAndSerializationRoundTrips) {
    RunConfig a;
    RunConfig b = a;
    b.output_dir = "elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 1;
    EXPECT_NE(config_hash(a), config_hash(b));
    b.s_geo = 0.1 + 0.2;
    const RunConfig back = parse_config(serialize_config(b));
    EXPECT_EQ(config_hash(back), config_hash(b));
    EXPECT_EQ(back.s_geo, b.s_geo);
}

TEST(Cli, UsageAndValidationExitCodes) {
    const fs::path dir = romantex::testing::scratch_dir("cli_usage");
    EXPECT_EQ(run_cli(dir, "--help"), kExitOk);
    EXPECT_EQ(run_cli(dir, "frobnicate"), kExitValidation);
    EXPECT_EQ(run_cli(dir, "gen-dataset --no-such-flag 1"), kExitValidation);
    EXPECT_EQ(run_cli(dir, "gen-dataset --set sead=3"), kExitValidation);
    EXPECT_EQ(run_cli(dir, "gen-dataset --views 13 --output " + dir.string()), kExitValidation);
    EXPECT_EQ(run_cli(dir, "generate --checkpoint " + (dir / "missing.rtxa").string() + " --mesh sphere --output " +
                               dir.string()),
              kExitValidation);
    EXPECT_NE(slurp(dir / "last_output.txt").find("does not exist"), std::string::npos);
}

TEST(Cli, GenDatasetCountsAndDeterminism) {
    const fs::path dir = romantex::testing::scratch_dir("cli_dataset");
    const fs::path cfg = write_config(dir, tiny_config(dir / "a"));
    ASSERT_EQ(run_cli(dir, "gen-dataset --config " + cfg.string()), kExitOk);
    const Manifest m = read_manifest((dir / "a/dataset/manifest.txt").string());
    EXPECT_EQ(m.entries.size(), 18u);
    EXPECT_EQ(m.objects.size(), 3u);
    EXPECT_EQ(m.config_hash, config_hash(load_config_file(cfg.string())));

    ASSERT_EQ(run_cli(dir, "gen-dataset --config " + cfg.string() + " --output " + (dir / "b").string()), kExitOk);
    for (const auto& e : m.entries) {
        EXPECT_EQ(slurp(dir / "a/dataset" / e.image), slurp(dir / "b/dataset" / e.image)) << e.image;
        EXPECT_EQ(slurp(dir / "a/dataset" / e.cond), slurp(dir / "b/dataset" / e.cond)) << e.cond;
    }
    EXPECT_EQ(slurp(dir / "a/dataset/manifest.txt"), slurp(dir / "b/dataset/manifest.txt"));
}

TEST(Cli, CorruptManifestDetected) {
    const fs::path dir = romantex::testing::scratch_dir("cli_manifest");
    const fs::path cfg = write_config(dir, tiny_config(dir / "out") + "meshes = sphere\n");
    ASSERT_EQ(run_cli(dir, "gen-dataset --config " + cfg.string()), kExitOk);
    const fs::path man = dir / "out/dataset/manifest.txt";
    std::string text = slurp(man);
    const auto pos = text.find("sphere");
    ASSERT_NE(pos, std::string::npos);
    text[pos] = 'S';
    std::ofstream(man, std::ios::binary) << text;
    EXPECT_THROW(read_manifest(man.string()), IoError);
    EXPECT_EQ(run_cli(dir, "train --config " + cfg.string()), kExitValidation);
    EXPECT_NE(slurp(dir / "last_output.txt").find("checksum"), std::string::npos);
}

TEST(Cli, OutputRootEnvironmentOverride) {
    const fs::path dir = romantex::testing::scratch_dir("cli_env");
    const fs::path cfg = write_config(dir, tiny_config(dir / "from_file") + "meshes = cube\nn_views = 2\n");
    const std::string cmd = std::string("ROMANTEX_OUTPUT_ROOT=") + (dir / "from_env").string() + " " +
                            ROMANTEX_CLI_PATH + " gen-dataset --config " + cfg.string() + " > /dev/null 2>&1";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_TRUE(fs::exists(dir / "from_env/dataset/manifest.txt"));
    EXPECT_FALSE(fs::exists(dir / "from_file"));
}

TEST(Cli, TrainResumeMatchesUninterruptedRun) {
    const fs::path dir = romantex::testing::scratch_dir("cli_train");
    const std::string base = tiny_config(dir / "full") + "meshes = sphere,cube\n";
    const fs::path cfg = write_config(dir, base);
    ASSERT_EQ(run_cli(dir, "gen-dataset --config " + cfg.string()), kExitOk);
    const std::string data = " --dataset " + (dir / "full/dataset").string();
    ASSERT_EQ(run_cli(dir, "train --config " + cfg.string() + data), kExitOk);
    const auto full = csv_rows(dir / "full/train/train_log.csv");
    ASSERT_EQ(full.size(), 8u);

    // Stop at step 4 (a checkpoint boundary), then resume to 8.
    const std::string part = " --output " + (dir / "part").string();
    ASSERT_EQ(run_cli(dir, "train --config " + cfg.string() + data + part + " --train-steps 4"), kExitOk);
    const fs::path ckpt = dir / "part/train/checkpoint.rtxa";
    ASSERT_EQ(run_cli(dir, "train --config " + cfg.string() + data + part + " --resume " + ckpt.string()), kExitOk);
    const auto resumed = csv_rows(dir / "part/train/train_log.csv");
    EXPECT_EQ(resumed, full);

    const TensorArchive a = load_archive((dir / "full/train/checkpoint.rtxa").string());
    const TensorArchive b = load_archive(ckpt.string());
    EXPECT_EQ(parameter_checksum(state_from_archive(a).params), parameter_checksum(state_from_archive(b).params));

    // A checkpoint for a different model shape is refused.
    EXPECT_EQ(run_cli(dir, "train --config " + cfg.string() + data + part + " --channels1 24 --resume " + ckpt.string()),
              kExitValidation);
}

TEST(Cli, GenerateViewsAndSeedDeterminism) {
    const fs::path dir = romantex::testing::scratch_dir("cli_generate");
    const fs::path cfg = write_config(dir, tiny_config(dir / "out") + "meshes = sphere\n");
    ASSERT_EQ(run_cli(dir, "gen-dataset --config " + cfg.string()), kExitOk);
    ASSERT_EQ(run_cli(dir, "train --config " + cfg.string() + " --train-steps 2"), kExitOk);
    const std::string ckpt = " --checkpoint " + (dir / "out/train/checkpoint.rtxa").string() + " --mesh sphere";

    ASSERT_EQ(run_cli(dir, "generate --config " + cfg.string() + ckpt + " --views 12 --seed 7"), kExitOk);
    const auto views = detail::sorted_files(dir / "out/generate", "view_", ".png");
    ASSERT_EQ(views.size(), 12u);
    std::vector<std::string> first;
    for (const auto& v : views) first.push_back(slurp(v));
    const PngText text = read_png(views[0].string()).text;
    RunConfig run = load_config_file(cfg.string());
    run.n_views = 12;
    run.seed = 7;
    EXPECT_NE(std::find(text.begin(), text.end(), std::pair<std::string, std::string>{"romantex:config_hash", config_hash(run)}),
              text.end());

    ASSERT_EQ(run_cli(dir, "generate --config " + cfg.string() + ckpt + " --views 12 --seed 7"), kExitOk);
    for (std::size_t v = 0; v < views.size(); ++v) EXPECT_EQ(slurp(views[v]), first[v]);
}

TEST(Cli, UnitScalesGuidedEpsIsFullyConditioned) {
    const fs::path dir = romantex::testing::scratch_dir("cli_unit_scales");
    const fs::path cfg = write_config(dir, tiny_config(dir / "out") + "meshes = sphere\nn_views = 2\n");
    ASSERT_EQ(run_cli(dir, "gen-dataset --config " + cfg.string()), kExitOk);
    ASSERT_EQ(run_cli(dir, "train --config " + cfg.string() + " --train-steps 2"), kExitOk);
    const std::string args = "generate --config " + cfg.string() + " --checkpoint " +
                             (dir / "out/train/checkpoint.rtxa").string() + " --mesh sphere --ref-image " +
                             (dir / "out/dataset/sphere_v0/ref.png").string() +
                             " --guidance-mode plain --s-geo 1 --s-ref 1 --dump-bundles true";
    ASSERT_EQ(run_cli(dir, args), kExitOk);
    const TensorArchive ar = load_archive((dir / "out/generate/bundles.rtxa").string());
    GuidanceBundle b;
    for (std::size_t v = 0; v < 2; ++v) {
        const std::string tag = "step0.view" + std::to_string(v);
        b.eps_uncond.emplace_back(v, 16, 16, ar.get(tag + ".uncond"));
        b.eps_geo.emplace_back(v, 16, 16, ar.get(tag + ".geo"));
        b.eps_full.emplace_back(v, 16, 16, ar.get(tag + ".full"));
    }
    GuidanceConfig g;
    g.s_geo = 1;
    g.s_ref = 1;
    const GuidedEps e = compose(b, g);
    for (std::size_t v = 0; v < 2; ++v) EXPECT_EQ(e.eps[v].data, b.eps_full[v].data);
    EXPECT_NE(b.eps_full[0].data, b.eps_geo[0].data);
}

TEST(Cli, BakeGroundTruthRendersAndEvalThresholds) {
    const fs::path dir = romantex::testing::scratch_dir("cli_bake");
    const fs::path views = dir / "views";
    fs::create_directories(views);
    TextureSpec spec;
    spec.kind = TextureKind::gradient;
    spec.color_a = {0.9f, 0.2f, 0.1f};
    spec.color_b = {0.1f, 0.4f, 0.9f};
    spec.angle = 0.6f;
    const Grid tex = make_texture(spec, 64);
    const Mesh sphere = make_uv_sphere();
    const auto cams = make_camera_rig(6, 0, 0.55f);
    for (std::size_t v = 0; v < cams.size(); ++v)
        write_png((views / detail::view_name("view", v, ".png")).string(), render_textured(sphere, tex, cams[v], 128));
    detail::write_cameras((views / "cameras.txt").string(), cams, "0000000000000000");

    const std::string common = " --output " + (dir / "out").string() + " --bake-resolution 64";
    ASSERT_EQ(run_cli(dir, "bake --mesh sphere --images " + views.string() + common), kExitOk);
    const TensorArchive ar = load_archive((dir / "out/bake/texture.rtxa").string());
    const Grid& baked = ar.get("texels");
    EXPECT_GT(psnr(baked, tex, ar.get("coverage")), 30.0);
    EXPECT_TRUE(fs::exists(dir / "out/bake/lad.txt"));

    // Same partial twice: zero LAD passes even a zero threshold.
    const fs::path same = dir / "same";
    fs::create_directories(same);
    fs::copy_file(dir / "out/bake/partial_00.rtxa", same / "partial_00.rtxa");
    fs::copy_file(dir / "out/bake/partial_00.rtxa", same / "partial_01.rtxa");
    EXPECT_EQ(run_cli(dir, "eval --partials " + same.string() + " --lad-threshold 0" + common), kExitOk);
    EXPECT_NE(slurp(dir / "last_output.txt").find("lad: 0\n"), std::string::npos);

    // Disagreeing partials trip a zero threshold.
    const fs::path diff = dir / "diff";
    fs::create_directories(diff);
    PartialTexture a = load_partial((dir / "out/bake/partial_00.rtxa").string()), b = a;
    for (auto& x : b.texture.values()) x = 1.0f - x;
    save_partial((diff / "partial_00.rtxa").string(), a, "h");
    save_partial((diff / "partial_01.rtxa").string(), b, "h");
    EXPECT_EQ(run_cli(dir, "eval --partials " + diff.string() + " --lad-threshold 0" + common), kExitThreshold);
    EXPECT_EQ(run_cli(dir, "eval --partials " + diff.string() + " --lad-threshold 10" + common), kExitOk);

    // One image removed: counts no longer match the camera file.
    fs::remove(views / detail::view_name("view", 5, ".png"));
    EXPECT_EQ(run_cli(dir, "bake --mesh sphere --images " + views.string() + common), kExitValidation);
}

TEST(Cli, RenderConditionsWritesPhasesPerLevel) {
    const fs::path dir = romantex::testing::scratch_dir("cli_render");
    const fs::path cfg = write_config(dir, tiny_config(dir / "out") + "n_views = 3\n");
    ASSERT_EQ(run_cli(dir, "render-conditions --config " + cfg.string() + " --mesh torus"), kExitOk);
    const fs::path root = dir / "out/conditions";
    EXPECT_EQ(detail::sorted_files(root, "cond_", ".rtxa").size(), 3u);
    EXPECT_EQ(detail::sorted_files(root, "phases_l0_", ".rtxa").size(), 3u);
    EXPECT_EQ(detail::sorted_files(root, "phases_l1_", ".rtxa").size(), 3u);
    const PhaseGrid p = load_phases((root / "phases_l1_02.rtxa").string());
    EXPECT_EQ(p.height, 4u);
    const ConditionMaps m = load_conditions((root / "cond_00.rtxa").string());
    EXPECT_EQ(m.resolution, 16);
    EXPECT_EQ(run_cli(dir, "render-conditions --config " + cfg.string() + " --mesh " + (dir / "none.obj").string()),
              kExitValidation);
}
