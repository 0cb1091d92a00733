#pragma once

// Pixel-space multi-view denoiser: a two-level UNet whose levels each hold one
// parallel attention block, trained with ε-prediction and sampled with DDIM.
//
//   input  H×W×10  [noisy rgb, ccm, normal, mask]     (null geometry → zeros)
//   stem   space_to_depth(2) → Linear → C1 (+ time)     level 1: H/2 × W/2
//   block1 parallel_block + MLP
//   down   space_to_depth(2) → Linear → C2 (+ time)     level 2: H/4 × W/4
//   block2 parallel_block + MLP
//   up     Linear → depth_to_space(2) + skip, MLP
//   out    LayerNorm → Linear, plus a linear skip from the stem input,
//          → depth_to_space(2) → F,   ε = √(1−ᾱ_t)·z_t + √ᾱ_t·F
//
// The output mix lets ε follow z_t at high noise without the network having to
// pass z_t through unchanged; F plays the role of a v-prediction. The training
// loss is still plain MSE on ε.
//
// Reference features come from a frozen copy of the encoder ("refnet") run on
// the clean reference image at t = 0 without geometry; they are the
// layer-normalized inputs of each level.

#include "romantex/attention.hpp"
#include "romantex/guidance.hpp"
#include "romantex/io.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace romantex {

// ---------------------------------------------------------------------------
// Noise schedule.

struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alpha_bar;

    int steps() const { return static_cast<int>(betas.size()); }

    static NoiseSchedule linear(int steps = 100, double beta_start = 1e-4, double beta_end = 0.2) {
        if (steps < 1) throw std::invalid_argument("noise schedule: steps must be >= 1");
        if (!(beta_start > 0) || !(beta_end < 1) || beta_start > beta_end) {
            throw std::invalid_argument("noise schedule: need 0 < beta_start <= beta_end < 1");
        }
        NoiseSchedule s;
        double prod = 1.0;
        for (int t = 0; t < steps; ++t) {
            const double b = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (steps - 1);
            prod *= 1.0 - b;
            s.betas.push_back(b);
            s.alpha_bar.push_back(prod);
        }
        return s;
    }

    void check_step(int t) const {
        if (t < 0 || t >= steps()) {
            throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
        }
    }
};

template <typename T>
struct NoisedLatent {
    BasicLatentGrid<T> noisy;
    BasicLatentGrid<T> eps;
};

/// x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε with ε drawn from rng.
template <typename T>
NoisedLatent<T> add_noise(const BasicLatentGrid<T>& clean, int t, const NoiseSchedule& schedule, Rng& rng) {
    schedule.check_step(t);
    BasicLatentGrid<T> eps = clean;
    for (auto& v : eps.data.values()) v = static_cast<T>(rng.gaussian());
    const T a = static_cast<T>(std::sqrt(schedule.alpha_bar[t]));
    const T b = static_cast<T>(std::sqrt(1.0 - schedule.alpha_bar[t]));
    BasicLatentGrid<T> noisy = clean;
    for (std::size_t i = 0; i < noisy.data.size(); ++i) noisy.data[i] = a * clean.data[i] + b * eps.data[i];
    return {std::move(noisy), std::move(eps)};
}

/// Descending DDIM timesteps from T−1 to 0, evenly spaced.
inline std::vector<int> ddim_timesteps(int total, int steps) {
    if (steps < 1 || steps > total) throw std::invalid_argument("sampling steps must lie in [1, T]");
    std::vector<int> ts;
    for (int i = 0; i < steps; ++i) {
        const int t = steps == 1 ? total - 1
                                 : static_cast<int>(std::lround((total - 1) * double(steps - 1 - i) / (steps - 1)));
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;
}

// ---------------------------------------------------------------------------
// Configuration and parameters.

struct DenoiserConfig {
    static constexpr std::size_t kImageChannels = 3;
    static constexpr std::size_t kCondChannels = 7;
    static constexpr std::size_t kInputChannels = kImageChannels + kCondChannels;

    std::size_t image_resolution = 32;
    std::size_t channels1 = 48, channels2 = 96;
    std::size_t heads1 = 1, heads2 = 2;
    std::size_t time_dim = 32;
    std::size_t mlp_ratio = 2;
    double rope_base = 10000.0;
    int timesteps = 100;
    double beta_start = 1e-4, beta_end = 0.2;

    NoiseSchedule schedule() const { return NoiseSchedule::linear(timesteps, beta_start, beta_end); }

    std::size_t level_resolution(std::size_t level) const { return image_resolution >> (level + 1); }
    std::size_t level_channels(std::size_t level) const { return level == 0 ? channels1 : channels2; }
    std::size_t level_heads(std::size_t level) const { return level == 0 ? heads1 : heads2; }

    VoxelPyramid pyramid() const {
        return build_pyramid({static_cast<int>(level_resolution(0)), static_cast<int>(level_resolution(1))});
    }

    RopeConfig rope(std::size_t level) const { return {level_channels(level) / level_heads(level), rope_base}; }

    void validate() const {
        if (image_resolution < 4 || image_resolution % 4 != 0) {
            throw std::invalid_argument("denoiser: image resolution must be a positive multiple of 4");
        }
        for (std::size_t l = 0; l < 2; ++l) {
            const std::size_t c = level_channels(l), h = level_heads(l);
            if (h == 0 || c % (6 * h) != 0) {
                throw std::invalid_argument("denoiser: level channels must be divisible by 6·heads");
            }
        }
        if (time_dim == 0 || time_dim % 2 != 0) throw std::invalid_argument("denoiser: time_dim must be even");
        if (mlp_ratio == 0) throw std::invalid_argument("denoiser: mlp_ratio must be positive");
        if (timesteps < 1) throw std::invalid_argument("denoiser: timesteps must be positive");
        schedule();
    }

    bool same_schedule(const NoiseSchedule& s) const {
        return s.steps() == timesteps && s.betas == schedule().betas;
    }
};

template <typename T>
struct Mlp {
    Linear<T> fc1, fc2;
};

template <typename T>
struct BasicDenoiserParams {
    Linear<T> stem, time1, time2, down, up, out, skip;
    Mlp<T> mlp1, mlp2, mlp3;
    BasicAttentionBlockWeights<T> block1, block2;

    template <typename Self, typename F>
    static void visit(Self& p, F&& fn) {
        auto lin = [&](const std::string& n, auto& l) {
            fn(n + ".weight", l.weight);
            fn(n + ".bias", l.bias);
        };
        auto proj = [&](const std::string& n, auto& s) {
            fn(n + ".q", s.q);
            fn(n + ".k", s.k);
            fn(n + ".v", s.v);
            fn(n + ".o", s.o);
        };
        lin("stem", p.stem);
        lin("time1", p.time1);
        lin("time2", p.time2);
        lin("down", p.down);
        lin("up", p.up);
        lin("out", p.out);
        lin("skip", p.skip);
        lin("mlp1.fc1", p.mlp1.fc1);
        lin("mlp1.fc2", p.mlp1.fc2);
        lin("mlp2.fc1", p.mlp2.fc1);
        lin("mlp2.fc2", p.mlp2.fc2);
        lin("mlp3.fc1", p.mlp3.fc1);
        lin("mlp3.fc2", p.mlp3.fc2);
        for (auto [name, blk] : {std::pair{std::string("block1"), &p.block1}, std::pair{std::string("block2"), &p.block2}}) {
            proj(name + ".sa", blk->sa);
            proj(name + ".ref", blk->ref);
            proj(name + ".mv", blk->mv);
        }
    }

    /// Same structure with every tensor zeroed.
    BasicDenoiserParams zeros_like() const {
        BasicDenoiserParams z = *this;
        visit(z, [](const std::string&, BasicGrid<T>& g) { g.fill(T(0)); });
        return z;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        visit(*this, [&](const std::string&, const BasicGrid<T>& g) { n += g.size(); });
        return n;
    }
};

template <typename T>
Linear<T> init_linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    Linear<T> l{BasicGrid<T>({in, out}), BasicGrid<T>({1, out})};
    const double sd = gain / std::sqrt(static_cast<double>(in));
    for (auto& v : l.weight.values()) v = static_cast<T>(sd * rng.gaussian());
    return l;
}

/// Sinusoidal timestep features, one row per step.
template <typename T>
BasicGrid<T> timestep_table(int steps, std::size_t dim) {
    BasicGrid<T> tab({static_cast<std::size_t>(steps), dim});
    const std::size_t half = dim / 2;
    for (int t = 0; t < steps; ++t) {
        for (std::size_t k = 0; k < half; ++k) {
            const double freq = std::pow(1000.0, -static_cast<double>(k) / static_cast<double>(half));
            tab(static_cast<std::size_t>(t), k) = static_cast<T>(std::sin(t * freq));
            tab(static_cast<std::size_t>(t), half + k) = static_cast<T>(std::cos(t * freq));
        }
    }
    return tab;
}

template <typename T>
struct BasicDenoiserState {
    DenoiserConfig cfg;
    BasicDenoiserParams<T> params;
    BasicDenoiserParams<T> refnet; // frozen encoder copy; valid when has_refnet
    bool has_refnet = false;
    bool sa_frozen = false;
    BasicGrid<T> time_table;
    std::vector<double> alpha_bar; // cached from cfg.schedule()
    std::uint64_t seed = 0;

    static BasicDenoiserState init(const DenoiserConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        BasicDenoiserState s;
        s.cfg = cfg;
        s.seed = seed;
        Rng rng = seeded_rng(seed).split("init");
        const std::size_t c1 = cfg.channels1, c2 = cfg.channels2, r = cfg.mlp_ratio;
        auto& p = s.params;
        p.stem = init_linear<T>(4 * DenoiserConfig::kInputChannels, c1, rng);
        p.time1 = init_linear<T>(cfg.time_dim, c1, rng);
        p.time2 = init_linear<T>(cfg.time_dim, c2, rng);
        p.mlp1 = {init_linear<T>(c1, r * c1, rng), init_linear<T>(r * c1, c1, rng, 0.5)};
        p.down = init_linear<T>(4 * c1, c2, rng);
        p.mlp2 = {init_linear<T>(c2, r * c2, rng), init_linear<T>(r * c2, c2, rng, 0.5)};
        p.up = init_linear<T>(c2, 4 * c1, rng);
        p.mlp3 = {init_linear<T>(c1, r * c1, rng), init_linear<T>(r * c1, c1, rng, 0.5)};
        p.out = init_linear<T>(c1, 4 * DenoiserConfig::kImageChannels, rng, 0.1);
        p.skip = init_linear<T>(4 * DenoiserConfig::kInputChannels, 4 * DenoiserConfig::kImageChannels, rng, 0.1);
        p.block1 = BasicAttentionBlockWeights<T>::init(c1, cfg.heads1, rng, T(0.1));
        p.block2 = BasicAttentionBlockWeights<T>::init(c2, cfg.heads2, rng, T(0.1));
        s.time_table = timestep_table<T>(cfg.timesteps, cfg.time_dim);
        s.alpha_bar = cfg.schedule().alpha_bar;
        return s;
    }

    /// Snapshots the current encoder as the reference network.
    void snapshot_refnet() {
        refnet = params;
        has_refnet = true;
    }

    const BasicDenoiserParams<T>& reference_params() const { return has_refnet ? refnet : params; }

    bool trainable(const std::string& name) const {
        return !(sa_frozen && (name.starts_with("block1.sa.") || name.starts_with("block2.sa.")));
    }
};

using DenoiserParams = BasicDenoiserParams<float>;
using DenoiserState = BasicDenoiserState<float>;

/// FNV-1a over the raw bytes of every parameter whose name starts with `prefix`.
template <typename T>
std::uint64_t parameter_checksum(const BasicDenoiserParams<T>& p, const std::string& prefix = "") {
    std::uint64_t h = 1469598103934665603ULL;
    BasicDenoiserParams<T>::visit(p, [&](const std::string& name, const BasicGrid<T>& g) {
        if (!name.starts_with(prefix)) return;
        h = fnv1a64(name, h);
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(g.data()), g.size() * sizeof(T)), h);
    });
    return h;
}

// ---------------------------------------------------------------------------
// Conversions between [0,1] images and model space.

template <typename T = float>
BasicLatentGrid<T> image_to_model(const Grid& img, std::size_t view_id = 0) {
    if (img.rank() != 3 || img.extent(2) != 3) throw ShapeError("expected an H×W×3 image");
    const std::size_t h = img.extent(0), w = img.extent(1);
    BasicLatentGrid<T> z(view_id, h, w, 3);
    for (std::size_t i = 0; i < img.size(); ++i) z.data[i] = static_cast<T>(2.0 * img[i] - 1.0);
    return z;
}

template <typename T>
Grid model_to_image(const BasicLatentGrid<T>& z) {
    Grid img({z.height, z.width, z.channels});
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = static_cast<float>(std::clamp((static_cast<double>(z.data[i]) + 1.0) * 0.5, 0.0, 1.0));
    }
    return img;
}

/// Phase grids for every level of every view; identity phases disable RoPE.
inline std::vector<std::vector<PhaseGrid>> view_phases(const std::vector<ConditionMaps>& conds,
                                                       const DenoiserConfig& cfg, bool rope = true) {
    const VoxelPyramid pyr = cfg.pyramid();
    std::vector<std::vector<PhaseGrid>> out;
    for (const auto& c : conds) {
        if (rope) {
            out.push_back(phase_pyramid(c, pyr));
        } else {
            std::vector<PhaseGrid> id;
            for (std::size_t l = 0; l < pyr.levels(); ++l) {
                const auto n = static_cast<std::size_t>(pyr.resolution(l));
                id.push_back(PhaseGrid::identity(n, n, l, pyr.resolution(l)));
            }
            out.push_back(std::move(id));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward.

template <typename T>
struct MlpTape {
    LayerNormTape<T> norm;
    BasicGrid<T> hidden; // fc1 output before SiLU
    BasicGrid<T> act;
};

/// x + fc2(silu(fc1(LN x)))
template <typename T>
BasicGrid<T> mlp_forward(const Mlp<T>& m, const BasicGrid<T>& x, MlpTape<T>* tape) {
    LayerNormTape<T> nt;
    const BasicGrid<T> n = layer_norm(x, &nt);
    BasicGrid<T> h = m.fc1.forward(n);
    BasicGrid<T> a = apply_silu(h);
    BasicGrid<T> y = m.fc2.forward(a);
    axpy(T(1), x, y);
    if (tape) {
        tape->norm = std::move(nt);
        tape->hidden = std::move(h);
        tape->act = std::move(a);
    }
    return y;
}

template <typename T>
BasicGrid<T> mlp_backward(const Mlp<T>& m, const MlpTape<T>& tape, const BasicGrid<T>& dy, Mlp<T>& grad) {
    const BasicGrid<T> da = m.fc2.backward(tape.act, dy, grad.fc2);
    const BasicGrid<T> dh = silu_backward(tape.hidden, da);
    const BasicGrid<T> dn = m.fc1.backward(tape.norm.normalized, dh, grad.fc1);
    BasicGrid<T> dx = layer_norm_backward(tape.norm, dn);
    axpy(T(1), dy, dx);
    return dx;
}

template <typename T>
struct RefFeatures {
    BasicLatentGrid<T> level1, level2;
};

template <typename T>
struct DenoiserTape {
    BasicGrid<T> time_row;
    double alpha_bar = 1;
    BasicAttentionBlockWeights<T> w1, w2;
    std::vector<BasicGrid<T>> stem_in, down_in, up_in, out_in;
    std::vector<MlpTape<T>> mlp1, mlp2, mlp3;
    std::vector<LayerNormTape<T>> out_norm;
    ParallelBlockTape<T> block1, block2;
};

struct ForwardOptions {
    bool use_mv = true;
};

namespace detail {

template <typename T>
BasicGrid<T> build_input(const BasicLatentGrid<T>& z, const ConditionMaps* cond) {
    const std::size_t n = z.tokens();
    BasicGrid<T> x({n, DenoiserConfig::kInputChannels});
    for (std::size_t t = 0; t < n; ++t) {
        T* r = x.row(t);
        for (std::size_t k = 0; k < 3; ++k) r[k] = z.data(t, k);
        if (!cond) continue;
        const std::size_t i = t / z.width, j = t % z.width;
        if (!cond->covered(i, j)) continue;
        for (std::size_t k = 0; k < 3; ++k) {
            r[3 + k] = static_cast<T>(2.0f * cond->ccm(i, j, k) - 1.0f);
            r[6 + k] = static_cast<T>(cond->normal(i, j, k));
        }
        r[9] = T(1);
    }
    return x;
}

template <typename T>
void add_row(BasicGrid<T>& x, const BasicGrid<T>& row) {
    for (std::size_t t = 0; t < x.rows(); ++t) {
        T* r = x.row(t);
        for (std::size_t j = 0; j < x.cols(); ++j) r[j] += row[j];
    }
}

template <typename T>
BasicGrid<T> column_sums(const std::vector<BasicGrid<T>>& xs) {
    BasicGrid<T> s({1, xs.at(0).cols()});
    for (const auto& x : xs)
        for (std::size_t t = 0; t < x.rows(); ++t)
            for (std::size_t j = 0; j < x.cols(); ++j) s[j] += x(t, j);
    return s;
}

template <typename T>
BasicAttentionBlockWeights<T> effective_block(const BasicAttentionBlockWeights<T>& w, bool use_mv, bool sa_frozen) {
    BasicAttentionBlockWeights<T> e = w;
    if (!use_mv) e.lambda_mv = T(0);
    e.sa_frozen = sa_frozen;
    return e;
}

template <typename T>
std::vector<PhaseGrid> level_phases(const std::vector<std::vector<PhaseGrid>>& phases, std::size_t level) {
    std::vector<PhaseGrid> out;
    for (const auto& p : phases) out.push_back(p.at(level));
    return out;
}

template <typename T>
std::vector<BasicLatentGrid<T>> wrap(std::vector<BasicGrid<T>>&& xs, std::size_t side) {
    std::vector<BasicLatentGrid<T>> out;
    for (std::size_t v = 0; v < xs.size(); ++v) out.emplace_back(v, side, side, std::move(xs[v]));
    return out;
}

template <typename T>
std::vector<BasicGrid<T>> unwrap(std::vector<BasicLatentGrid<T>>&& zs) {
    std::vector<BasicGrid<T>> out;
    for (auto& z : zs) out.push_back(std::move(z.data));
    return out;
}

} // namespace detail

/// ε-prediction for a set of views sharing one timestep. `conds[v] == nullptr`
/// drops the geometry condition for that view; `ref == nullptr` drops the
/// reference branch.
template <typename T>
std::vector<BasicLatentGrid<T>> predict_noise(const BasicDenoiserState<T>& state,
                                              const std::vector<BasicLatentGrid<T>>& z_t, int t,
                                              const std::vector<const ConditionMaps*>& conds,
                                              const RefFeatures<T>* ref,
                                              const std::vector<std::vector<PhaseGrid>>& phases,
                                              ForwardOptions opt = {}, DenoiserTape<T>* tape = nullptr) {
    const DenoiserConfig& cfg = state.cfg;
    const auto& p = state.params;
    const std::size_t nv = z_t.size(), res = cfg.image_resolution;
    const std::size_t s1 = cfg.level_resolution(0), s2 = cfg.level_resolution(1);
    if (nv == 0) throw ShapeError("predict_noise: no views");
    if (conds.size() != nv || phases.size() != nv) throw ShapeError("predict_noise: one condition and phase set per view");
    if (t < 0 || t >= cfg.timesteps) throw std::out_of_range("predict_noise: timestep out of range");
    for (std::size_t v = 0; v < nv; ++v) {
        if (z_t[v].height != res || z_t[v].width != res || z_t[v].channels != 3) {
            throw ShapeError("predict_noise: view " + std::to_string(v) + " is not " + std::to_string(res) + "²×3");
        }
        if (conds[v] && conds[v]->resolution != static_cast<int>(res)) {
            throw ShapeError("predict_noise: condition resolution does not match the input");
        }
        if (phases[v].size() != 2) throw ShapeError("predict_noise: two phase levels required per view");
    }
    if (ref && (ref->level1.tokens() == 0 || ref->level2.tokens() == 0)) throw ShapeError("predict_noise: empty reference");

    const BasicGrid<T> trow = slice_rows(state.time_table, static_cast<std::size_t>(t), 1);
    const BasicGrid<T> temb1 = p.time1.forward(trow), temb2 = p.time2.forward(trow);
    const auto w1 = detail::effective_block(p.block1, opt.use_mv, state.sa_frozen);
    const auto w2 = detail::effective_block(p.block2, opt.use_mv, state.sa_frozen);
    const double ab = state.alpha_bar.at(static_cast<std::size_t>(t));
    const T c_in = static_cast<T>(std::sqrt(1.0 - ab)), c_out = static_cast<T>(std::sqrt(ab));
    if (tape) {
        tape->time_row = trow;
        tape->alpha_bar = ab;
        tape->w1 = w1;
        tape->w2 = w2;
        for (auto* vec : {&tape->stem_in, &tape->down_in, &tape->up_in, &tape->out_in}) vec->assign(nv, {});
        tape->mlp1.assign(nv, {});
        tape->mlp2.assign(nv, {});
        tape->mlp3.assign(nv, {});
        tape->out_norm.assign(nv, {});
    }

    std::vector<BasicGrid<T>> h0(nv), stems(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        BasicGrid<T> s = space_to_depth(detail::build_input(z_t[v], conds[v]), res, res, 2);
        h0[v] = p.stem.forward(s);
        detail::add_row(h0[v], temb1);
        if (tape) {
            tape->stem_in[v] = std::move(s);
        } else {
            stems[v] = std::move(s);
        }
    }
    auto h1 = detail::unwrap(parallel_block(detail::wrap(std::move(h0), s1), detail::level_phases<T>(phases, 0),
                                            ref ? &ref->level1 : nullptr, w1, cfg.rope(0),
                                            tape ? &tape->block1 : nullptr));
    std::vector<BasicGrid<T>> a1(nv), h2(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        a1[v] = mlp_forward(p.mlp1, h1[v], tape ? &tape->mlp1[v] : nullptr);
        BasicGrid<T> d = space_to_depth(a1[v], s1, s1, 2);
        h2[v] = p.down.forward(d);
        detail::add_row(h2[v], temb2);
        if (tape) tape->down_in[v] = std::move(d);
    }
    auto h3 = detail::unwrap(parallel_block(detail::wrap(std::move(h2), s2), detail::level_phases<T>(phases, 1),
                                            ref ? &ref->level2 : nullptr, w2, cfg.rope(1),
                                            tape ? &tape->block2 : nullptr));
    std::vector<BasicLatentGrid<T>> out;
    for (std::size_t v = 0; v < nv; ++v) {
        BasicGrid<T> a2 = mlp_forward(p.mlp2, h3[v], tape ? &tape->mlp2[v] : nullptr);
        BasicGrid<T> u = depth_to_space(p.up.forward(a2), s1, s1, 2);
        axpy(T(1), a1[v], u);
        const BasicGrid<T> u2 = mlp_forward(p.mlp3, u, tape ? &tape->mlp3[v] : nullptr);
        BasicGrid<T> n = layer_norm(u2, tape ? &tape->out_norm[v] : nullptr);
        BasicGrid<T> o = p.out.forward(n);
        axpy(T(1), p.skip.forward(tape ? tape->stem_in[v] : stems[v]), o);
        BasicGrid<T> eps = depth_to_space(o, res, res, 2);
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = c_in * z_t[v].data[i] + c_out * eps[i];
        if (tape) {
            tape->up_in[v] = std::move(a2);
            tape->out_in[v] = std::move(n);
        }
        out.emplace_back(z_t[v].view_id, res, res, std::move(eps));
    }
    return out;
}

/// Accumulates parameter gradients for dL/dε given per view.
template <typename T>
void predict_noise_backward(const BasicDenoiserState<T>& state, const DenoiserTape<T>& tape,
                            const std::vector<BasicGrid<T>>& d_eps, BasicDenoiserParams<T>& g) {
    const DenoiserConfig& cfg = state.cfg;
    const auto& p = state.params;
    const std::size_t nv = d_eps.size(), res = cfg.image_resolution;
    const std::size_t s1 = cfg.level_resolution(0);

    std::vector<BasicGrid<T>> d_a1(nv), d_h3(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        const BasicGrid<T> d_out = space_to_depth(scale(d_eps[v], static_cast<T>(std::sqrt(tape.alpha_bar))), res, res, 2);
        const BasicGrid<T> d_n = p.out.backward(tape.out_in[v], d_out, g.out);
        p.skip.backward(tape.stem_in[v], d_out, g.skip, false);
        const BasicGrid<T> d_u2 = layer_norm_backward(tape.out_norm[v], d_n);
        d_a1[v] = mlp_backward(p.mlp3, tape.mlp3[v], d_u2, g.mlp3);
        const BasicGrid<T> d_up = space_to_depth(d_a1[v], s1, s1, 2);
        const BasicGrid<T> d_a2 = p.up.backward(tape.up_in[v], d_up, g.up);
        d_h3[v] = mlp_backward(p.mlp2, tape.mlp2[v], d_a2, g.mlp2);
    }
    BasicAttentionBlockWeights<T> g2 = tape.w2;
    g2.sa = g.block2.sa;
    g2.ref = g.block2.ref;
    g2.mv = g.block2.mv;
    const std::vector<BasicGrid<T>> d_h2 = parallel_block_backward(tape.block2, d_h3, tape.w2, g2);
    g.block2.sa = std::move(g2.sa);
    g.block2.ref = std::move(g2.ref);
    g.block2.mv = std::move(g2.mv);
    p.time2.backward(tape.time_row, detail::column_sums(d_h2), g.time2, false);

    std::vector<BasicGrid<T>> d_h1(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        const BasicGrid<T> d_d = p.down.backward(tape.down_in[v], d_h2[v], g.down);
        axpy(T(1), depth_to_space(d_d, s1, s1, 2), d_a1[v]);
        d_h1[v] = mlp_backward(p.mlp1, tape.mlp1[v], d_a1[v], g.mlp1);
    }
    BasicAttentionBlockWeights<T> g1 = tape.w1;
    g1.sa = g.block1.sa;
    g1.ref = g.block1.ref;
    g1.mv = g.block1.mv;
    const std::vector<BasicGrid<T>> d_h0 = parallel_block_backward(tape.block1, d_h1, tape.w1, g1);
    g.block1.sa = std::move(g1.sa);
    g.block1.ref = std::move(g1.ref);
    g.block1.mv = std::move(g1.mv);
    p.time1.backward(tape.time_row, detail::column_sums(d_h0), g.time1, false);
    for (std::size_t v = 0; v < nv; ++v) p.stem.backward(tape.stem_in[v], d_h0[v], g.stem, false);
}

/// Reference features of a clean model-space image: frozen encoder, t = 0, no geometry.
template <typename T>
RefFeatures<T> compute_ref_features(const BasicDenoiserState<T>& state, const BasicLatentGrid<T>& ref_image) {
    const DenoiserConfig& cfg = state.cfg;
    const auto& p = state.reference_params();
    const std::size_t res = cfg.image_resolution, s1 = cfg.level_resolution(0), s2 = cfg.level_resolution(1);
    if (ref_image.height != res || ref_image.width != res || ref_image.channels != 3) {
        throw ShapeError("reference image must be " + std::to_string(res) + "²×3");
    }
    const BasicGrid<T> trow = slice_rows(state.time_table, 0, 1);
    BasicGrid<T> h0 = p.stem.forward(space_to_depth(detail::build_input<T>(ref_image, nullptr), res, res, 2));
    detail::add_row(h0, p.time1.forward(trow));
    RefFeatures<T> f;
    f.level1 = BasicLatentGrid<T>(0, s1, s1, layer_norm(h0));

    BasicAttentionBlockWeights<T> w1 = p.block1;
    w1.lambda_mv = T(0);
    const std::vector<PhaseGrid> id{PhaseGrid::identity(s1, s1, 0, static_cast<int>(s1))};
    const auto h1 = parallel_block<T>({BasicLatentGrid<T>(0, s1, s1, std::move(h0))}, id, nullptr, w1, cfg.rope(0));
    const BasicGrid<T> a1 = mlp_forward<T>(p.mlp1, h1[0].data, nullptr);
    BasicGrid<T> h2 = p.down.forward(space_to_depth(a1, s1, s1, 2));
    detail::add_row(h2, p.time2.forward(trow));
    f.level2 = BasicLatentGrid<T>(0, s2, s2, layer_norm(h2));
    return f;
}

// ---------------------------------------------------------------------------
// Training.

template <typename T>
struct TrainingExample {
    std::vector<BasicLatentGrid<T>> views; // clean, model space
    std::vector<ConditionMaps> conds;
    std::vector<std::vector<PhaseGrid>> phases;
    std::optional<BasicLatentGrid<T>> reference; // clean, model space
};

struct DropoutProbs {
    double geo = 0.1, ref = 0.1, mv = 0.1;

    void validate() const {
        for (double p : {geo, ref, mv})
            if (!(p >= 0 && p <= 1)) throw std::invalid_argument("dropout probabilities must lie in [0, 1]");
    }
};

struct DropoutDraws {
    bool geo = false, ref = false, mv = false; // true = dropped
};

enum class TrainPhase { self_attention, multi_view };

/// Mean squared ε error for fixed noise, timestep and dropout; gradients are
/// accumulated into `grads` when non-null.
template <typename T>
double denoising_loss(const BasicDenoiserState<T>& state, const TrainingExample<T>& ex, int t,
                      const std::vector<BasicLatentGrid<T>>& noisy, const std::vector<BasicLatentGrid<T>>& eps,
                      DropoutDraws drop, TrainPhase phase, BasicDenoiserParams<T>* grads) {
    const std::size_t nv = ex.views.size();
    const bool single = phase == TrainPhase::self_attention;
    std::vector<const ConditionMaps*> conds(nv, nullptr);
    if (!drop.geo)
        for (std::size_t v = 0; v < nv; ++v) conds[v] = &ex.conds[v];
    std::optional<RefFeatures<T>> ref;
    if (!single && !drop.ref && ex.reference) ref = compute_ref_features(state, *ex.reference);
    ForwardOptions opt;
    opt.use_mv = !single && !drop.mv;

    DenoiserTape<T> tape;
    const auto pred = predict_noise(state, noisy, t, conds, ref ? &*ref : nullptr, ex.phases, opt,
                                    grads ? &tape : nullptr);
    double se = 0;
    std::size_t count = 0;
    std::vector<BasicGrid<T>> d_eps(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        count += pred[v].data.size();
        for (std::size_t i = 0; i < pred[v].data.size(); ++i) {
            const double d = static_cast<double>(pred[v].data[i]) - eps[v].data[i];
            se += d * d;
        }
    }
    const double loss = se / static_cast<double>(count);
    if (grads) {
        for (std::size_t v = 0; v < nv; ++v) {
            d_eps[v] = BasicGrid<T>(pred[v].data.shape());
            for (std::size_t i = 0; i < pred[v].data.size(); ++i) {
                d_eps[v][i] = static_cast<T>(2.0 * (static_cast<double>(pred[v].data[i]) - eps[v].data[i]) / count);
            }
        }
        predict_noise_backward(state, tape, d_eps, *grads);
    }
    return loss;
}

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0; // 0 disables global-norm clipping
    int warmup_steps = 0;
};

template <typename T>
struct AdamW {
    AdamWConfig cfg;
    BasicDenoiserParams<T> m, v;
    std::int64_t step = 0;

    static AdamW init(const BasicDenoiserParams<T>& like, const AdamWConfig& cfg) {
        return AdamW{cfg, like.zeros_like(), like.zeros_like(), 0};
    }

    /// One update of every trainable tensor of `state`.
    void apply(BasicDenoiserState<T>& state, const BasicDenoiserParams<T>& grads) {
        double sq = 0;
        BasicDenoiserParams<T>::visit(grads, [&](const std::string& name, const BasicGrid<T>& g) {
            if (!state.trainable(name)) return;
            for (T x : g.values()) sq += static_cast<double>(x) * x;
        });
        const double gnorm = std::sqrt(sq);
        if (!std::isfinite(gnorm)) throw NumericalError("non-finite gradient norm");
        const double clip = cfg.clip_norm > 0 && gnorm > cfg.clip_norm ? cfg.clip_norm / gnorm : 1.0;
        ++step;
        const double warm = cfg.warmup_steps > 0 ? std::min(1.0, static_cast<double>(step) / cfg.warmup_steps) : 1.0;
        const double lr = cfg.lr * warm;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));

        std::vector<BasicGrid<T>*> ps, ms, vs;
        std::vector<const BasicGrid<T>*> gs;
        std::vector<bool> train;
        BasicDenoiserParams<T>::visit(state.params, [&](const std::string& name, BasicGrid<T>& x) {
            ps.push_back(&x);
            train.push_back(state.trainable(name));
        });
        BasicDenoiserParams<T>::visit(m, [&](const std::string&, BasicGrid<T>& x) { ms.push_back(&x); });
        BasicDenoiserParams<T>::visit(v, [&](const std::string&, BasicGrid<T>& x) { vs.push_back(&x); });
        BasicDenoiserParams<T>::visit(grads, [&](const std::string&, const BasicGrid<T>& x) { gs.push_back(&x); });
        for (std::size_t k = 0; k < ps.size(); ++k) {
            if (!train[k]) continue;
            BasicGrid<T>& x = *ps[k];
            BasicGrid<T>& mk = *ms[k];
            BasicGrid<T>& vk = *vs[k];
            const BasicGrid<T>& gk = *gs[k];
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double g = gk[i] * clip;
                mk[i] = static_cast<T>(cfg.beta1 * mk[i] + (1 - cfg.beta1) * g);
                vk[i] = static_cast<T>(cfg.beta2 * vk[i] + (1 - cfg.beta2) * g * g);
                const double upd = (mk[i] / bc1) / (std::sqrt(vk[i] / bc2) + cfg.eps);
                x[i] = static_cast<T>(x[i] - lr * (upd + cfg.weight_decay * x[i]));
            }
        }
    }
};

struct TrainStepResult {
    double loss = 0;
    int t = 0;
    DropoutDraws dropped;
};

/// One optimization step on one example. The timestep, noise and dropout draws
/// all come from `rng`, in that order.
template <typename T>
TrainStepResult train_step(BasicDenoiserState<T>& state, AdamW<T>& opt, const TrainingExample<T>& ex,
                           const NoiseSchedule& schedule, Rng& rng, DropoutProbs probs = {},
                           TrainPhase phase = TrainPhase::multi_view) {
    if (ex.views.empty()) throw std::invalid_argument("train_step: empty example");
    if (ex.conds.size() != ex.views.size() || ex.phases.size() != ex.views.size()) {
        throw ShapeError("train_step: example views, conditions and phases differ in count");
    }
    if (!state.cfg.same_schedule(schedule)) throw ShapeError("train_step: noise schedule differs from the model's");
    probs.validate();
    TrainStepResult r;
    r.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    std::vector<BasicLatentGrid<T>> noisy, eps;
    for (const auto& v : ex.views) {
        auto ne = add_noise(v, r.t, schedule, rng);
        noisy.push_back(std::move(ne.noisy));
        eps.push_back(std::move(ne.eps));
    }
    r.dropped.geo = rng.bernoulli(probs.geo);
    r.dropped.ref = rng.bernoulli(probs.ref);
    r.dropped.mv = rng.bernoulli(probs.mv);

    BasicDenoiserParams<T> grads = state.params.zeros_like();
    r.loss = denoising_loss(state, ex, r.t, noisy, eps, r.dropped, phase, &grads);
    if (!std::isfinite(r.loss)) {
        throw NumericalError("non-finite training loss at optimizer step " + std::to_string(opt.step + 1) +
                             " (t=" + std::to_string(r.t) + ")");
    }
    opt.apply(state, grads);
    return r;
}

// ---------------------------------------------------------------------------
// Sampling.

struct SampleOptions {
    int steps = 20;
    double eta = 0.0;
    bool use_mv = true;
    bool keep_bundles = false; // keep the guidance bundle of every step
};

struct SampleResult {
    std::vector<Grid> images; // H×W×3 in [0,1]
    std::vector<GuidanceBundle> bundles;
    bool degenerate_fallback = false;
};

/// Deterministic DDIM loop with three guidance passes per step:
/// ε(∅,∅), ε(geo,∅) and ε(geo,ref). Without a reference image the full pass
/// equals the geometry pass.
inline SampleResult sample(const DenoiserState& state, const std::vector<ConditionMaps>& conds,
                           const std::optional<Grid>& ref_image, const std::vector<std::vector<PhaseGrid>>& phases,
                           const NoiseSchedule& schedule, const GuidanceConfig& guidance, Rng& rng,
                           SampleOptions opt = {}) {
    const std::size_t nv = conds.size(), res = state.cfg.image_resolution;
    if (nv < 1 || nv > 12) throw std::invalid_argument("sample: view count must lie in [1, 12]");
    if (!state.cfg.same_schedule(schedule)) throw ShapeError("sample: noise schedule differs from the model's");
    if (!(opt.eta >= 0)) throw std::invalid_argument("sample: eta must be non-negative");
    guidance.validate();

    std::optional<RefFeatures<float>> ref;
    if (ref_image) ref = compute_ref_features(state, image_to_model<float>(resize_bilinear(*ref_image, res, res)));
    std::vector<const ConditionMaps*> geo(nv), none(nv, nullptr);
    for (std::size_t v = 0; v < nv; ++v) geo[v] = &conds[v];
    ForwardOptions fo;
    fo.use_mv = opt.use_mv;

    std::vector<LatentGrid> x;
    for (std::size_t v = 0; v < nv; ++v) x.emplace_back(v, res, res, gaussian<float>(rng, {res * res, 3}));

    SampleResult result;
    const std::vector<int> ts = ddim_timesteps(schedule.steps(), opt.steps);
    for (std::size_t s = 0; s < ts.size(); ++s) {
        const int t = ts[s];
        GuidanceBundle b;
        b.eps_uncond = predict_noise(state, x, t, none, static_cast<const RefFeatures<float>*>(nullptr), phases, fo);
        b.eps_geo = predict_noise(state, x, t, geo, static_cast<const RefFeatures<float>*>(nullptr), phases, fo);
        b.eps_full = ref ? predict_noise(state, x, t, geo, &*ref, phases, fo) : b.eps_geo;
        GuidedEps ge = compose(b, guidance);
        result.degenerate_fallback = result.degenerate_fallback || ge.degenerate_fallback;
        if (opt.keep_bundles) result.bundles.push_back(std::move(b));

        const double ab = schedule.alpha_bar[t];
        const double ab_prev = s + 1 < ts.size() ? schedule.alpha_bar[ts[s + 1]] : 1.0;
        const double sigma =
            s + 1 < ts.size() ? opt.eta * std::sqrt((1 - ab_prev) / (1 - ab) * (1 - ab / ab_prev)) : 0.0;
        const double dir = std::sqrt(std::max(0.0, 1 - ab_prev - sigma * sigma));
        for (std::size_t v = 0; v < nv; ++v) {
            for (std::size_t i = 0; i < x[v].data.size(); ++i) {
                const double xt = x[v].data[i], e = ge.eps[v].data[i];
                const double x0 = std::clamp((xt - std::sqrt(1 - ab) * e) / std::sqrt(ab), -1.0, 1.0);
                const double e_hat = (xt - std::sqrt(ab) * x0) / std::sqrt(1 - ab);
                double nx = std::sqrt(ab_prev) * x0 + dir * e_hat;
                if (sigma > 0) nx += sigma * rng.gaussian();
                x[v].data[i] = static_cast<float>(s + 1 < ts.size() ? nx : x0);
            }
            require_finite(x[v].data, "sample");
        }
    }
    for (const auto& z : x) result.images.push_back(model_to_image(z));
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline void put_config(TensorArchive& ar, const DenoiserConfig& c) {
    ar.set_meta("model.image_resolution", std::to_string(c.image_resolution));
    ar.set_meta("model.channels1", std::to_string(c.channels1));
    ar.set_meta("model.channels2", std::to_string(c.channels2));
    ar.set_meta("model.heads1", std::to_string(c.heads1));
    ar.set_meta("model.heads2", std::to_string(c.heads2));
    ar.set_meta("model.time_dim", std::to_string(c.time_dim));
    ar.set_meta("model.mlp_ratio", std::to_string(c.mlp_ratio));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", c.rope_base);
    ar.set_meta("model.rope_base", buf);
    ar.set_meta("model.timesteps", std::to_string(c.timesteps));
    std::snprintf(buf, sizeof buf, "%.17g", c.beta_start);
    ar.set_meta("model.beta_start", buf);
    std::snprintf(buf, sizeof buf, "%.17g", c.beta_end);
    ar.set_meta("model.beta_end", buf);
}

inline DenoiserConfig get_config(const TensorArchive& ar) {
    auto num = [&](const std::string& key) {
        const std::string s = ar.get_meta(key);
        if (s.empty()) throw IoError("checkpoint lacks '" + key + "'");
        return std::stod(s);
    };
    DenoiserConfig c;
    c.image_resolution = static_cast<std::size_t>(num("model.image_resolution"));
    c.channels1 = static_cast<std::size_t>(num("model.channels1"));
    c.channels2 = static_cast<std::size_t>(num("model.channels2"));
    c.heads1 = static_cast<std::size_t>(num("model.heads1"));
    c.heads2 = static_cast<std::size_t>(num("model.heads2"));
    c.time_dim = static_cast<std::size_t>(num("model.time_dim"));
    c.mlp_ratio = static_cast<std::size_t>(num("model.mlp_ratio"));
    c.rope_base = num("model.rope_base");
    c.timesteps = static_cast<int>(num("model.timesteps"));
    c.beta_start = num("model.beta_start");
    c.beta_end = num("model.beta_end");
    c.validate();
    return c;
}

inline TensorArchive checkpoint_archive(const DenoiserState& s, const AdamW<float>* opt = nullptr) {
    TensorArchive ar;
    ar.set_meta("kind", "romantex-checkpoint");
    put_config(ar, s.cfg);
    ar.set_meta("seed", std::to_string(s.seed));
    ar.set_meta("sa_frozen", s.sa_frozen ? "1" : "0");
    ar.set_meta("has_refnet", s.has_refnet ? "1" : "0");
    DenoiserParams::visit(s.params, [&](const std::string& n, const Grid& g) { ar.add("param." + n, g); });
    if (s.has_refnet) DenoiserParams::visit(s.refnet, [&](const std::string& n, const Grid& g) { ar.add("refnet." + n, g); });
    ar.add("time_table", s.time_table);
    if (opt) {
        ar.set_meta("adam.step", std::to_string(opt->step));
        DenoiserParams::visit(opt->m, [&](const std::string& n, const Grid& g) { ar.add("adam.m." + n, g); });
        DenoiserParams::visit(opt->v, [&](const std::string& n, const Grid& g) { ar.add("adam.v." + n, g); });
    }
    return ar;
}

namespace detail {

inline void load_params(const TensorArchive& ar, const std::string& prefix, DenoiserParams& p) {
    DenoiserParams::visit(p, [&](const std::string& n, Grid& g) {
        const Grid& src = ar.get(prefix + n);
        if (src.shape() != g.shape()) {
            throw ShapeError("checkpoint tensor '" + prefix + n + "' has shape " + shape_string(src.shape()) +
                             ", expected " + shape_string(g.shape()));
        }
        g = src;
    });
}

} // namespace detail

inline DenoiserState state_from_archive(const TensorArchive& ar) {
    if (ar.get_meta("kind") != "romantex-checkpoint") throw IoError("archive is not a checkpoint");
    DenoiserState s = DenoiserState::init(get_config(ar), std::stoull(ar.get_meta("seed", "0")));
    detail::load_params(ar, "param.", s.params);
    s.sa_frozen = ar.get_meta("sa_frozen") == "1";
    s.has_refnet = ar.get_meta("has_refnet") == "1";
    if (s.has_refnet) {
        s.refnet = s.params;
        detail::load_params(ar, "refnet.", s.refnet);
    }
    s.time_table = ar.get("time_table");
    s.alpha_bar = s.cfg.schedule().alpha_bar;
    return s;
}

inline std::optional<AdamW<float>> optimizer_from_archive(const TensorArchive& ar, const DenoiserState& s,
                                                          const AdamWConfig& cfg) {
    if (ar.get_meta("adam.step").empty()) return std::nullopt;
    AdamW<float> opt = AdamW<float>::init(s.params, cfg);
    opt.step = std::stoll(ar.get_meta("adam.step"));
    detail::load_params(ar, "adam.m.", opt.m);
    detail::load_params(ar, "adam.v.", opt.v);
    return opt;
}

} // namespace romantex
