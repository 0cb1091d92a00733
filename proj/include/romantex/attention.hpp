#pragma once

// Decoupled parallel attention block:
//
//   ẑ_v = z_v + SA(n_v) + λ_ref·RefA(n_v, Z_ref) + λ_mv·MVA(n_1..n_V)_v,   n_v = LN(z_v)
//
// SA attends within one view, RefA attends from a view to cached reference
// features, MVA attends over the concatenated tokens of all views with query
// and key rotated by the 3D-aware rotary embedding. Every branch has its own
// Q/K/V/O projections; the SA projections are frozen during multi-view training.

#include "romantex/layers.hpp"
#include "romantex/rope3d.hpp"

#include <optional>
#include <string>
#include <vector>

namespace romantex {

template <typename T>
struct ProjectionSet {
    BasicGrid<T> q, k, v, o; // each channels × channels

    static ProjectionSet zeros(std::size_t c) {
        return {BasicGrid<T>({c, c}), BasicGrid<T>({c, c}), BasicGrid<T>({c, c}), BasicGrid<T>({c, c})};
    }

    template <typename F>
    void visit(const std::string& prefix, F&& fn) {
        fn(prefix + ".q", q);
        fn(prefix + ".k", k);
        fn(prefix + ".v", v);
        fn(prefix + ".o", o);
    }
};

template <typename T>
struct BasicAttentionBlockWeights {
    std::size_t channels = 0;
    std::size_t heads = 1;
    ProjectionSet<T> sa, ref, mv;
    T lambda_ref = 1;
    T lambda_mv = 1;
    bool sa_frozen = true;
    bool pre_norm = true;

    std::size_t head_dim() const { return channels / heads; }

    void validate() const {
        if (heads == 0 || channels % (heads * 6) != 0) {
            throw ShapeError("attention: channels must be divisible by heads·6");
        }
        if (lambda_ref < 0 || lambda_mv < 0) throw std::invalid_argument("attention: λ must be non-negative");
    }

    /// Gaussian init with std 1/√C; output projections of the ref and mv
    /// branches start at `branch_out_scale` times that (0 ⇒ zero-initialized).
    static BasicAttentionBlockWeights init(std::size_t channels, std::size_t heads, Rng& rng,
                                           T branch_out_scale = T(1)) {
        BasicAttentionBlockWeights w;
        w.channels = channels;
        w.heads = heads;
        w.validate();
        const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
        auto fill = [&](BasicGrid<T>& g, double s) {
            g = BasicGrid<T>({channels, channels});
            for (auto& v : g.values()) v = static_cast<T>(s * rng.gaussian());
        };
        for (auto* set : {&w.sa, &w.ref, &w.mv}) {
            fill(set->q, sd);
            fill(set->k, sd);
            fill(set->v, sd);
            fill(set->o, set == &w.sa ? sd : sd * branch_out_scale);
        }
        return w;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& fn) {
        sa.visit(prefix + ".sa", fn);
        ref.visit(prefix + ".ref", fn);
        mv.visit(prefix + ".mv", fn);
    }
};

using AttentionBlockWeights = BasicAttentionBlockWeights<float>;

/// Rotary phases bound to the rows of a token grid.
struct RopeBinding {
    std::vector<Phase> phases;
    std::vector<std::uint8_t> valid;
    RopeConfig cfg;
};

template <typename T>
struct AttentionTape {
    BasicGrid<T> xq, xkv;
    BasicGrid<T> q, k, v;                // q and k after rotation; q not yet scaled
    std::vector<BasicGrid<T>> probs;     // per head, Nq × Nk
    BasicGrid<T> context;                // Nq × C, before the output projection
    bool self = false;                   // xq and xkv are the same tokens
};

namespace detail {

template <typename T>
BasicGrid<T> head_slice(const BasicGrid<T>& x, std::size_t h, std::size_t d) {
    BasicGrid<T> out({x.rows(), d});
    for (std::size_t t = 0; t < x.rows(); ++t) std::copy_n(x.row(t) + h * d, d, out.row(t));
    return out;
}

template <typename T>
void head_store(BasicGrid<T>& x, const BasicGrid<T>& part, std::size_t h, std::size_t d, bool accumulate) {
    for (std::size_t t = 0; t < x.rows(); ++t) {
        T* dst = x.row(t) + h * d;
        const T* src = part.row(t);
        if (accumulate) {
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        } else {
            std::copy_n(src, d, dst);
        }
    }
}

template <typename T>
BasicGrid<T> project(const BasicGrid<T>& x, const BasicGrid<T>& w) {
    BasicGrid<T> y({x.rows(), w.cols()});
    kernels::gemm(x.data(), w.data(), y.data(), x.rows(), x.cols(), w.cols(), false);
    return y;
}

} // namespace detail

/// Multi-head scaled dot-product attention with optional rotary phases on the
/// query and key tokens. Pass `self = true` when xq and xkv are identical.
template <typename T>
BasicGrid<T> attend(const BasicGrid<T>& xq, const BasicGrid<T>& xkv, const ProjectionSet<T>& w, std::size_t heads,
                    const RopeBinding* rope_q, const RopeBinding* rope_k, AttentionTape<T>* tape = nullptr,
                    bool self = false) {
    const std::size_t c = w.q.rows();
    if (xq.cols() != c || xkv.cols() != c) throw ShapeError("attention: token channels do not match projections");
    if (heads == 0 || c % heads != 0) throw ShapeError("attention: channels not divisible by heads");
    const std::size_t d = c / heads, nq = xq.rows(), nk = xkv.rows();
    if (nk == 0) throw ShapeError("attention: empty key set");

    BasicGrid<T> q = detail::project(xq, w.q);
    BasicGrid<T> k = detail::project(xkv, w.k);
    BasicGrid<T> v = detail::project(xkv, w.v);
    if (rope_q) rotate_tokens_inplace<T>(q, rope_q->phases, rope_q->valid, heads, rope_q->cfg);
    if (rope_k) rotate_tokens_inplace<T>(k, rope_k->phases, rope_k->valid, heads, rope_k->cfg);

    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    BasicGrid<T> context({nq, c});
    std::vector<BasicGrid<T>> probs;
    for (std::size_t h = 0; h < heads; ++h) {
        BasicGrid<T> qh = detail::head_slice(q, h, d);
        for (auto& x : qh.values()) x *= inv_sqrt_d;
        const BasicGrid<T> kh = detail::head_slice(k, h, d);
        const BasicGrid<T> vh = detail::head_slice(v, h, d);
        BasicGrid<T> p({nq, nk});
        kernels::gemm_nt(qh.data(), kh.data(), p.data(), nq, d, nk, false);
        for (std::size_t i = 0; i < nq; ++i) kernels::softmax_row(p.row(i), nk);
        BasicGrid<T> ch({nq, d});
        kernels::gemm(p.data(), vh.data(), ch.data(), nq, nk, d, false);
        detail::head_store(context, ch, h, d, false);
        if (tape) probs.push_back(std::move(p));
    }
    BasicGrid<T> out = detail::project(context, w.o);
    if (tape) {
        tape->xq = xq;
        if (!self) tape->xkv = xkv;
        tape->q = std::move(q);
        tape->k = std::move(k);
        tape->v = std::move(v);
        tape->probs = std::move(probs);
        tape->context = std::move(context);
        tape->self = self;
    }
    return out;
}

template <typename T>
struct AttentionInputGrads {
    BasicGrid<T> dxq;
    BasicGrid<T> dxkv; // empty for self-attention (folded into dxq)
};

/// Back-propagates through attend(). Projection gradients are accumulated into
/// `grads` unless it is null (frozen weights); input gradients are returned
/// when requested.
template <typename T>
AttentionInputGrads<T> attend_backward(const AttentionTape<T>& tape, const BasicGrid<T>& dout,
                                       const ProjectionSet<T>& w, std::size_t heads, const RopeBinding* rope_q,
                                       const RopeBinding* rope_k, ProjectionSet<T>* grads, bool need_dxq,
                                       bool need_dxkv) {
    const std::size_t c = w.q.rows(), d = c / heads;
    const std::size_t nq = tape.q.rows(), nk = tape.k.rows();
    const BasicGrid<T>& xkv = tape.self ? tape.xq : tape.xkv;
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

    if (grads) kernels::gemm_tn(tape.context.data(), dout.data(), grads->o.data(), nq, c, c, true);
    BasicGrid<T> dcontext({nq, c});
    kernels::gemm_nt(dout.data(), w.o.data(), dcontext.data(), nq, c, c, false);

    BasicGrid<T> dq({nq, c}), dk({nk, c}), dv({nk, c});
    for (std::size_t h = 0; h < heads; ++h) {
        const BasicGrid<T>& p = tape.probs[h];
        const BasicGrid<T> dch = detail::head_slice(dcontext, h, d);
        const BasicGrid<T> vh = detail::head_slice(tape.v, h, d);
        const BasicGrid<T> kh = detail::head_slice(tape.k, h, d);
        BasicGrid<T> qs = detail::head_slice(tape.q, h, d);
        for (auto& x : qs.values()) x *= inv_sqrt_d;

        BasicGrid<T> dvh({nk, d});
        kernels::gemm_tn(p.data(), dch.data(), dvh.data(), nq, nk, d, false);
        BasicGrid<T> ds({nq, nk});
        kernels::gemm_nt(dch.data(), vh.data(), ds.data(), nq, d, nk, false);
        for (std::size_t i = 0; i < nq; ++i) {
            T* dr = ds.row(i);
            const T* pr = p.row(i);
            T acc = 0;
            for (std::size_t j = 0; j < nk; ++j) acc += dr[j] * pr[j];
            for (std::size_t j = 0; j < nk; ++j) dr[j] = pr[j] * (dr[j] - acc);
        }
        BasicGrid<T> dqh({nq, d});
        kernels::gemm(ds.data(), kh.data(), dqh.data(), nq, nk, d, false);
        for (auto& x : dqh.values()) x *= inv_sqrt_d;
        BasicGrid<T> dkh({nk, d});
        kernels::gemm_tn(ds.data(), qs.data(), dkh.data(), nq, nk, d, false);
        detail::head_store(dq, dqh, h, d, false);
        detail::head_store(dk, dkh, h, d, false);
        detail::head_store(dv, dvh, h, d, false);
    }
    // Gradients w.r.t. the unrotated projections: apply the inverse rotation.
    if (rope_q) rotate_tokens_inplace<T>(dq, rope_q->phases, rope_q->valid, heads, rope_q->cfg, true);
    if (rope_k) rotate_tokens_inplace<T>(dk, rope_k->phases, rope_k->valid, heads, rope_k->cfg, true);

    if (grads) {
        kernels::gemm_tn(tape.xq.data(), dq.data(), grads->q.data(), nq, c, c, true);
        kernels::gemm_tn(xkv.data(), dk.data(), grads->k.data(), nk, c, c, true);
        kernels::gemm_tn(xkv.data(), dv.data(), grads->v.data(), nk, c, c, true);
    }
    AttentionInputGrads<T> out;
    if (need_dxq) {
        out.dxq = BasicGrid<T>({nq, c});
        kernels::gemm_nt(dq.data(), w.q.data(), out.dxq.data(), nq, c, c, false);
    }
    if (need_dxkv) {
        BasicGrid<T>& target = tape.self ? out.dxq : out.dxkv;
        if (target.empty()) target = BasicGrid<T>({nk, c});
        kernels::gemm_nt(dk.data(), w.k.data(), target.data(), nk, c, c, true);
        kernels::gemm_nt(dv.data(), w.v.data(), target.data(), nk, c, c, true);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Branch operations on latent grids.

template <typename T>
BasicLatentGrid<T> self_attention(const BasicLatentGrid<T>& z, const BasicAttentionBlockWeights<T>& w) {
    if (z.channels != w.channels) throw ShapeError("self_attention: channel mismatch");
    return {z.view_id, z.height, z.width, attend<T>(z.data, z.data, w.sa, w.heads, nullptr, nullptr, nullptr, true)};
}

template <typename T>
BasicLatentGrid<T> reference_attention(const BasicLatentGrid<T>& z, const BasicLatentGrid<T>& ref_feats,
                                       const BasicAttentionBlockWeights<T>& w) {
    if (z.channels != w.channels || ref_feats.channels != w.channels) {
        throw ShapeError("reference_attention: channel mismatch");
    }
    return {z.view_id, z.height, z.width, attend<T>(z.data, ref_feats.data, w.ref, w.heads, nullptr, nullptr)};
}

/// Concatenates phase grids into one binding aligned with concatenated tokens.
inline RopeBinding bind_phases(const std::vector<PhaseGrid>& phases, const RopeConfig& cfg) {
    RopeBinding b;
    b.cfg = cfg;
    for (const auto& p : phases) {
        b.phases.insert(b.phases.end(), p.phases.begin(), p.phases.end());
        b.valid.insert(b.valid.end(), p.valid.begin(), p.valid.end());
    }
    return b;
}

namespace detail {

template <typename T>
void check_views(const std::vector<BasicLatentGrid<T>>& views, const std::vector<PhaseGrid>& phases,
                 std::size_t channels) {
    if (views.empty()) throw ShapeError("multi-view attention: no views");
    if (phases.size() != views.size()) throw ShapeError("multi-view attention: one phase grid per view required");
    for (std::size_t v = 0; v < views.size(); ++v) {
        if (!views[v].same_shape(views[0]) || views[v].channels != channels) {
            throw ShapeError("multi-view attention: views differ in shape");
        }
        if (phases[v].height != views[v].height || phases[v].width != views[v].width) {
            throw ShapeError("multi-view attention: phase grid level does not match the latent resolution");
        }
    }
}

template <typename T>
std::vector<BasicLatentGrid<T>> split_views(const BasicGrid<T>& joint, const std::vector<BasicLatentGrid<T>>& like) {
    std::vector<BasicLatentGrid<T>> out;
    std::size_t off = 0;
    for (const auto& v : like) {
        out.emplace_back(v.view_id, v.height, v.width, slice_rows(joint, off, v.tokens()));
        off += v.tokens();
    }
    return out;
}

} // namespace detail

template <typename T>
std::vector<BasicLatentGrid<T>> multi_view_attention(const std::vector<BasicLatentGrid<T>>& views,
                                                     const std::vector<PhaseGrid>& phases,
                                                     const BasicAttentionBlockWeights<T>& w, const RopeConfig& cfg) {
    detail::check_views(views, phases, w.channels);
    if (cfg.dim != w.head_dim()) throw ShapeError("multi_view_attention: rope dim must equal the head dim");
    std::vector<const BasicGrid<T>*> parts;
    for (const auto& v : views) parts.push_back(&v.data);
    const BasicGrid<T> joint = concat_rows(parts);
    const RopeBinding rope = bind_phases(phases, cfg);
    return detail::split_views(attend<T>(joint, joint, w.mv, w.heads, &rope, &rope, nullptr, true), views);
}

// ---------------------------------------------------------------------------
// The parallel block, with a tape for training.

template <typename T>
struct ParallelBlockTape {
    std::vector<LayerNormTape<T>> norms;
    std::vector<AttentionTape<T>> sa, ref;
    AttentionTape<T> mv;
    RopeBinding rope;
    bool used_ref = false, used_mv = false;
};

/// ref_feats == nullptr drops the reference branch (equivalent to zero features).
template <typename T>
std::vector<BasicLatentGrid<T>> parallel_block(const std::vector<BasicLatentGrid<T>>& views,
                                               const std::vector<PhaseGrid>& phases,
                                               const BasicLatentGrid<T>* ref_feats,
                                               const BasicAttentionBlockWeights<T>& w, const RopeConfig& cfg,
                                               ParallelBlockTape<T>* tape = nullptr) {
    w.validate();
    detail::check_views(views, phases, w.channels);
    if (cfg.dim != w.head_dim()) throw ShapeError("parallel_block: rope dim must equal the head dim");
    if (ref_feats && ref_feats->channels != w.channels) throw ShapeError("parallel_block: reference channel mismatch");

    const std::size_t nv = views.size();
    std::vector<BasicGrid<T>> normed(nv);
    if (tape) {
        tape->norms.assign(nv, {});
        tape->sa.assign(nv, {});
        tape->ref.assign(nv, {});
    }
    for (std::size_t v = 0; v < nv; ++v) {
        normed[v] = w.pre_norm ? layer_norm(views[v].data, tape ? &tape->norms[v] : nullptr) : views[v].data;
    }

    std::vector<BasicLatentGrid<T>> out = views;
    for (std::size_t v = 0; v < nv; ++v) {
        const BasicGrid<T> sa =
            attend<T>(normed[v], normed[v], w.sa, w.heads, nullptr, nullptr, tape ? &tape->sa[v] : nullptr, true);
        axpy(T(1), sa, out[v].data);
    }
    const bool use_ref = ref_feats != nullptr && w.lambda_ref != T(0);
    if (use_ref) {
        for (std::size_t v = 0; v < nv; ++v) {
            const BasicGrid<T> r =
                attend<T>(normed[v], ref_feats->data, w.ref, w.heads, nullptr, nullptr, tape ? &tape->ref[v] : nullptr);
            axpy(w.lambda_ref, r, out[v].data);
        }
    }
    const bool use_mv = w.lambda_mv != T(0);
    if (use_mv) {
        std::vector<const BasicGrid<T>*> parts;
        for (const auto& n : normed) parts.push_back(&n);
        const BasicGrid<T> joint = concat_rows(parts);
        RopeBinding rope = bind_phases(phases, cfg);
        const BasicGrid<T> m = attend<T>(joint, joint, w.mv, w.heads, &rope, &rope, tape ? &tape->mv : nullptr, true);
        std::size_t off = 0;
        for (std::size_t v = 0; v < nv; ++v) {
            const std::size_t n = views[v].tokens(), c = w.channels;
            T* dst = out[v].data.data();
            const T* src = m.row(off);
            for (std::size_t i = 0; i < n * c; ++i) dst[i] += w.lambda_mv * src[i];
            off += n;
        }
        if (tape) tape->rope = std::move(rope);
    }
    if (tape) {
        tape->used_ref = use_ref;
        tape->used_mv = use_mv;
    }
    return out;
}

/// Gradient of parallel_block w.r.t. its input views; branch weight gradients
/// accumulate into `grads` (SA gradients only when SA is not frozen).
template <typename T>
std::vector<BasicGrid<T>> parallel_block_backward(const ParallelBlockTape<T>& tape,
                                                  const std::vector<BasicGrid<T>>& dout,
                                                  const BasicAttentionBlockWeights<T>& w,
                                                  BasicAttentionBlockWeights<T>& grads) {
    const std::size_t nv = dout.size(), c = w.channels;
    std::vector<BasicGrid<T>> dnorm(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        auto g = attend_backward<T>(tape.sa[v], dout[v], w.sa, w.heads, nullptr, nullptr,
                                    w.sa_frozen ? nullptr : &grads.sa, true, true);
        dnorm[v] = std::move(g.dxq);
    }
    if (tape.used_ref) {
        for (std::size_t v = 0; v < nv; ++v) {
            const BasicGrid<T> d = scale(dout[v], w.lambda_ref);
            auto g = attend_backward<T>(tape.ref[v], d, w.ref, w.heads, nullptr, nullptr, &grads.ref, true, false);
            axpy(T(1), g.dxq, dnorm[v]);
        }
    }
    if (tape.used_mv) {
        std::vector<const BasicGrid<T>*> parts;
        for (const auto& d : dout) parts.push_back(&d);
        BasicGrid<T> joint = concat_rows(parts);
        for (auto& x : joint.values()) x *= w.lambda_mv;
        auto g = attend_backward<T>(tape.mv, joint, w.mv, w.heads, &tape.rope, &tape.rope, &grads.mv, true, true);
        std::size_t off = 0;
        for (std::size_t v = 0; v < nv; ++v) {
            const std::size_t n = dout[v].rows();
            T* dst = dnorm[v].data();
            const T* src = g.dxq.row(off);
            for (std::size_t i = 0; i < n * c; ++i) dst[i] += src[i];
            off += n;
        }
    }
    std::vector<BasicGrid<T>> dz(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        dz[v] = w.pre_norm ? layer_norm_backward(tape.norms[v], dnorm[v]) : std::move(dnorm[v]);
        axpy(T(1), dout[v], dz[v]);
    }
    return dz;
}

} // namespace romantex
