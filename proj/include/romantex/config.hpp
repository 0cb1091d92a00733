#pragma once

// Flat, versioned key = value run configuration.
//
//   # comment
//   version = 1
//   seed = 7
//
// Precedence: defaults < file < ROMANTEX_OUTPUT_ROOT (output_dir only) < flags.

#include "romantex/dataset.hpp"
#include "romantex/guidance.hpp"

#include <cstdlib>
#include <functional>
#include <map>

namespace romantex {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kOutputRootEnv = "ROMANTEX_OUTPUT_ROOT";

struct RunConfig {
    int version = kConfigVersion;
    std::uint64_t seed = 0;
    std::string output_dir = "romantex_out";

    // scene and rendering
    std::string meshes = "cube,sphere,torus";
    int variants_per_mesh = 1;
    int n_views = 6;
    double elevation = 0.0;
    double half_extent = 0.55;
    int image_resolution = 32;
    int texture_resolution = 64;
    int supersample = 4;
    double ref_azimuth = 30.0, ref_elevation = 20.0;

    // model and schedule
    int channels1 = 48, channels2 = 96;
    int heads1 = 1, heads2 = 2;
    int timesteps = 100;
    double beta_start = 1e-4, beta_end = 0.2;

    // training
    int train_steps = 3000;
    int pretrain_steps = 500;
    int train_views = 4;
    double lr = 1e-3;
    int warmup_steps = 50;
    double weight_decay = 0.0;
    double clip_norm = 1.0;
    double dropout_geo = 0.1, dropout_ref = 0.1, dropout_mv = 0.1;
    int checkpoint_every = 500;

    // sampling
    int sample_steps = 20;
    double eta = 0.0;
    std::string guidance_mode = "plain";
    double s_geo = 2.0, s_ref = 5.0;
    bool per_view_projection = false;
    bool use_mv = true;
    bool use_rope = true;
    bool dump_bundles = false;

    // baking and evaluation
    int bake_resolution = 32;
    double blend_exponent = 4.0;
    double lad_threshold = 0.05;

    DenoiserConfig model() const {
        DenoiserConfig c;
        c.image_resolution = static_cast<std::size_t>(image_resolution);
        c.channels1 = static_cast<std::size_t>(channels1);
        c.channels2 = static_cast<std::size_t>(channels2);
        c.heads1 = static_cast<std::size_t>(heads1);
        c.heads2 = static_cast<std::size_t>(heads2);
        c.timesteps = timesteps;
        c.beta_start = beta_start;
        c.beta_end = beta_end;
        return c;
    }

    NoiseSchedule schedule() const { return NoiseSchedule::linear(timesteps, beta_start, beta_end); }

    GuidanceConfig guidance() const {
        GuidanceConfig g;
        g.s_geo = s_geo;
        g.s_ref = s_ref;
        g.mode = parse_guidance_mode(guidance_mode);
        g.per_view_projection = per_view_projection;
        return g;
    }

    DropoutProbs dropout() const { return {dropout_geo, dropout_ref, dropout_mv}; }

    AdamWConfig optimizer() const {
        AdamWConfig a;
        a.lr = lr;
        a.weight_decay = weight_decay;
        a.clip_norm = clip_norm;
        a.warmup_steps = warmup_steps;
        return a;
    }

    std::vector<std::string> mesh_list() const {
        std::vector<std::string> out;
        std::string cur;
        for (char c : meshes + ",") {
            if (c == ',') {
                if (!cur.empty()) out.push_back(cur);
                cur.clear();
            } else if (c != ' ') {
                cur += c;
            }
        }
        return out;
    }

    DatasetSpec dataset() const {
        DatasetSpec d;
        d.meshes = mesh_list();
        d.variants_per_mesh = variants_per_mesh;
        d.n_views = n_views;
        d.elevation = static_cast<float>(elevation);
        d.half_extent = static_cast<float>(half_extent);
        d.image_resolution = image_resolution;
        d.texture_resolution = texture_resolution;
        d.supersample = supersample;
        d.ref_azimuth = static_cast<float>(ref_azimuth);
        d.ref_elevation = static_cast<float>(ref_elevation);
        d.seed = seed;
        return d;
    }

    void validate() const {
        auto need = [](bool ok, const std::string& msg) {
            if (!ok) throw ConfigError(msg);
        };
        need(version == kConfigVersion, "unsupported config version " + std::to_string(version));
        need(!output_dir.empty(), "output_dir must not be empty");
        need(!mesh_list().empty(), "meshes must list at least one mesh");
        need(variants_per_mesh >= 1, "variants_per_mesh must be >= 1");
        need(n_views >= 1 && n_views <= 12, "n_views must lie in [1, 12]");
        need(std::isfinite(elevation) && std::abs(elevation) < 90, "elevation must lie in (-90, 90) degrees");
        need(half_extent > 0, "half_extent must be positive");
        need(image_resolution >= 4 && image_resolution % 4 == 0, "image_resolution must be a positive multiple of 4");
        need(texture_resolution >= 1 && bake_resolution >= 1, "texture resolutions must be positive");
        need(supersample >= 1 && supersample <= 16, "supersample must lie in [1, 16]");
        need(train_steps >= 0 && pretrain_steps >= 0, "step counts must be non-negative");
        need(train_views >= 1 && train_views <= n_views, "train_views must lie in [1, n_views]");
        need(lr > 0 && std::isfinite(lr), "lr must be positive");
        need(warmup_steps >= 0 && weight_decay >= 0 && clip_norm >= 0, "optimizer settings must be non-negative");
        need(checkpoint_every >= 1, "checkpoint_every must be >= 1");
        need(sample_steps >= 1 && sample_steps <= timesteps, "sample_steps must lie in [1, timesteps]");
        need(eta >= 0, "eta must be non-negative");
        need(blend_exponent >= 0, "blend_exponent must be non-negative");
        need(lad_threshold >= 0, "lad_threshold must be non-negative");
        try {
            model().validate();
            schedule();
            guidance().validate();
            dropout().validate();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

struct ConfigField {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
    bool hashed = true;
};

inline long long parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    return x;
}

inline double parse_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename M>
ConfigField field(const std::string& key, M RunConfig::*member, bool hashed = true) {
    ConfigField f;
    f.key = key;
    f.hashed = hashed;
    f.get = [member](const RunConfig& c) {
        const auto& v = c.*member;
        if constexpr (std::is_same_v<M, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<M, bool>) {
            return std::string(v ? "true" : "false");
        } else if constexpr (std::is_floating_point_v<M>) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        } else {
            return std::to_string(v);
        }
    };
    f.set = [member, key](RunConfig& c, const std::string& v) {
        auto& dst = c.*member;
        if constexpr (std::is_same_v<M, std::string>) {
            dst = v;
        } else if constexpr (std::is_same_v<M, bool>) {
            dst = parse_bool(key, v);
        } else if constexpr (std::is_floating_point_v<M>) {
            dst = parse_real(key, v);
        } else if constexpr (std::is_unsigned_v<M>) {
            if (!v.empty() && v[0] == '-') throw ConfigError("config key '" + key + "' must be non-negative");
            std::size_t used = 0;
            try {
                dst = std::stoull(v, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != v.size()) throw ConfigError("config key '" + key + "': expected an integer");
        } else {
            const long long x = parse_int(key, v);
            if (x < std::numeric_limits<M>::min() || x > std::numeric_limits<M>::max()) {
                throw ConfigError("config key '" + key + "' out of range");
            }
            dst = static_cast<M>(x);
        }
    };
    return f;
}

} // namespace detail

inline const std::vector<detail::ConfigField>& config_fields() {
    using detail::field;
    static const std::vector<detail::ConfigField> fields = {
        field("version", &RunConfig::version),
        field("seed", &RunConfig::seed),
        field("output_dir", &RunConfig::output_dir, false),
        field("meshes", &RunConfig::meshes),
        field("variants_per_mesh", &RunConfig::variants_per_mesh),
        field("n_views", &RunConfig::n_views),
        field("elevation", &RunConfig::elevation),
        field("half_extent", &RunConfig::half_extent),
        field("image_resolution", &RunConfig::image_resolution),
        field("texture_resolution", &RunConfig::texture_resolution),
        field("supersample", &RunConfig::supersample),
        field("ref_azimuth", &RunConfig::ref_azimuth),
        field("ref_elevation", &RunConfig::ref_elevation),
        field("channels1", &RunConfig::channels1),
        field("channels2", &RunConfig::channels2),
        field("heads1", &RunConfig::heads1),
        field("heads2", &RunConfig::heads2),
        field("timesteps", &RunConfig::timesteps),
        field("beta_start", &RunConfig::beta_start),
        field("beta_end", &RunConfig::beta_end),
        field("train_steps", &RunConfig::train_steps),
        field("pretrain_steps", &RunConfig::pretrain_steps),
        field("train_views", &RunConfig::train_views),
        field("lr", &RunConfig::lr),
        field("warmup_steps", &RunConfig::warmup_steps),
        field("weight_decay", &RunConfig::weight_decay),
        field("clip_norm", &RunConfig::clip_norm),
        field("dropout_geo", &RunConfig::dropout_geo),
        field("dropout_ref", &RunConfig::dropout_ref),
        field("dropout_mv", &RunConfig::dropout_mv),
        field("checkpoint_every", &RunConfig::checkpoint_every),
        field("sample_steps", &RunConfig::sample_steps),
        field("eta", &RunConfig::eta),
        field("guidance_mode", &RunConfig::guidance_mode),
        field("s_geo", &RunConfig::s_geo),
        field("s_ref", &RunConfig::s_ref),
        field("per_view_projection", &RunConfig::per_view_projection),
        field("use_mv", &RunConfig::use_mv),
        field("use_rope", &RunConfig::use_rope),
        field("dump_bundles", &RunConfig::dump_bundles),
        field("bake_resolution", &RunConfig::bake_resolution),
        field("blend_exponent", &RunConfig::blend_exponent),
        field("lad_threshold", &RunConfig::lad_threshold),
    };
    return fields;
}

inline const detail::ConfigField& find_config_field(const std::string& key) {
    for (const auto& f : config_fields())
        if (f.key == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    find_config_field(key).set(c, value);
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) { return find_config_field(key).get(c); }

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Applies `key = value` lines on top of `base`. Unknown or repeated keys are errors.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    std::map<std::string, int> seen;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (seen.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        seen[key] = lineno;
        set_config_value(base, key, value);
    }
    return base;
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text, base);
}

/// Every key, one per line, in declaration order.
inline std::string serialize_config(const RunConfig& c, bool hashed_only = false) {
    std::string out;
    for (const auto& f : config_fields()) {
        if (hashed_only && !f.hashed) continue;
        out += f.key + " = " + f.get(c) + "\n";
    }
    return out;
}

/// Hash over every key that influences computed results (output_dir excluded).
inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(serialize_config(c, true))); }

inline void apply_output_root_env(RunConfig& c) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) c.output_dir = root;
}

} // namespace romantex
