#pragma once

#include "plc2/params.hpp"
#include "plc2/state.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace plc2 {

// Observation hooks for calibration capture and importance scoring. All are
// optional; names passed to linear_input match checkpoint tensor names.
template <typename T>
struct ForwardTaps {
    std::function<void(const std::string&, const TensorT<T>&)> linear_input;
    std::function<void(int, const TensorT<T>&)> mlp_act;      // layer, [seq, d_ff]
    std::function<void(int, const TensorT<T>&)> head_out;     // layer, [seq, n_heads, head_dim]
    std::function<void(int, const TensorT<T>&)> mamba_gated;  // layer, [seq, d_inner]
    std::function<void(int, const TensorT<T>&)> block_out;    // layer, [seq, d_model]
};

namespace detail {

inline std::string blk_name(int layer, const char* suffix) {
    return "blk." + std::to_string(layer) + "." + suffix;
}

}  // namespace detail

// PLaMo-variant Mamba mixer: in_proj -> depthwise causal conv + SiLU ->
// state projection (dt, B, C) -> selective scan -> gate -> out_proj. There
// is no norm after the scan. x is the pre-normed residual input.
template <typename T>
TensorT<T> mamba_forward(const ModelConfig& cfg, const MambaParamsT<T>& p, const TensorT<T>& x,
                         MambaStateT<T>& st, const ForwardTaps<T>* taps = nullptr,
                         int layer = 0) {
    check(x.ndim() == 2 && x.shape[1] == cfg.d_model, ErrKind::Shape,
          "mamba input must be [seq, d_model]");
    const int64_t seq = x.shape[0];
    const int di = cfg.d_inner, dc = cfg.d_conv, ds = cfg.d_state, dtr = cfg.dt_rank;
    check(st.conv_tail.shape == std::vector<int64_t>({di, dc - 1}) &&
              st.h.shape == std::vector<int64_t>({di, ds}),
          ErrKind::State, "mamba state does not match config");

    if (taps && taps->linear_input) taps->linear_input(detail::blk_name(layer, "ssm_in.weight"), x);
    TensorT<T> xz = linear(x, p.in_proj);  // [seq, 2*di]: x branch, then gate z

    // depthwise causal conv + SiLU; the tail holds the previous dc-1 inputs
    TensorT<T> u({seq, di});
    for (int64_t t = 0; t < seq; t++) {
        for (int c = 0; c < di; c++) {
            double acc = double(p.conv_b.data[size_t(c)]);
            for (int k = 0; k < dc; k++) {
                int64_t idx = t - (dc - 1) + k;
                double val = idx >= 0 ? double(xz.at(idx, c))
                                      : double(st.conv_tail.at(c, dc - 1 + idx));
                acc += double(p.conv_w.at(c, k)) * val;
            }
            u.at(t, c) = silu(static_cast<T>(acc));
        }
    }
    // new tail = the last dc-1 raw conv inputs (may straddle the old tail)
    TensorT<T> tail({di, dc - 1});
    for (int c = 0; c < di; c++)
        for (int j = 0; j < dc - 1; j++) {
            int64_t idx = seq - (dc - 1) + j;
            tail.at(c, j) = idx >= 0 ? xz.at(idx, c) : st.conv_tail.at(c, seq + j);
        }
    st.conv_tail = std::move(tail);

    // state parameters are projected from the conv output, not the raw branch
    if (taps && taps->linear_input) taps->linear_input(detail::blk_name(layer, "ssm_x.weight"), u);
    TensorT<T> sp = linear(u, p.state_proj);  // [seq, dtr + 2*ds]
    TensorT<T> dt_pre({seq, dtr});
    for (int64_t t = 0; t < seq; t++)
        for (int r = 0; r < dtr; r++) dt_pre.at(t, r) = sp.at(t, r);
    if (taps && taps->linear_input)
        taps->linear_input(detail::blk_name(layer, "ssm_dt.weight"), dt_pre);
    TensorT<T> dt = softplus(linear(dt_pre, p.dt_proj, &p.dt_bias));  // [seq, di]

    // selective scan: h <- exp(dt*A) h + dt*B*u, y = C h + D u
    TensorT<T> y({seq, di});
    for (int64_t t = 0; t < seq; t++) {
        for (int c = 0; c < di; c++) {
            double dtv = double(dt.at(t, c));
            double uv = double(u.at(t, c));
            double acc = double(p.D.data[size_t(c)]) * uv;
            for (int n = 0; n < ds; n++) {
                double a = -std::exp(double(p.A_log.at(c, n)));
                double b = double(sp.at(t, dtr + n));
                double cc = double(sp.at(t, dtr + ds + n));
                double h = std::exp(dtv * a) * double(st.h.at(c, n)) + dtv * b * uv;
                st.h.at(c, n) = static_cast<T>(h);
                acc += cc * double(st.h.at(c, n));
            }
            y.at(t, c) = static_cast<T>(acc);
        }
    }
    // gate with the z branch
    for (int64_t t = 0; t < seq; t++)
        for (int c = 0; c < di; c++) y.at(t, c) = y.at(t, c) * silu(xz.at(t, di + c));

    if (taps && taps->mamba_gated) taps->mamba_gated(layer, y);
    if (taps && taps->linear_input) taps->linear_input(detail::blk_name(layer, "ssm_out.weight"), y);
    return linear(y, p.out_proj);
}

// Windowed/full causal GQA with RoPE. Appends each token's K/V to the cache
// and then attends over the cache contents, so the sliding window is
// enforced structurally by the ring capacity rather than by a mask.
template <typename T>
TensorT<T> attn_forward(const ModelConfig& cfg, const AttnParamsT<T>& p, const TensorT<T>& x,
                        AttnCacheT<T>& cache, const ForwardTaps<T>* taps = nullptr,
                        int layer = 0) {
    check(x.ndim() == 2 && x.shape[1] == cfg.d_model, ErrKind::Shape,
          "attn input must be [seq, d_model]");
    check(cache.n_kv_heads == cfg.n_kv_heads && cache.head_dim == cfg.head_dim &&
              cache.window == cfg.window,
          ErrKind::State, "attention cache does not match config");
    const int64_t seq = x.shape[0];
    const int nh = cfg.n_heads, nkv = cfg.n_kv_heads, hd = cfg.head_dim;
    const int group = nh / nkv;

    if (taps && taps->linear_input) {
        taps->linear_input(detail::blk_name(layer, "attn_q.weight"), x);
        taps->linear_input(detail::blk_name(layer, "attn_k.weight"), x);
        taps->linear_input(detail::blk_name(layer, "attn_v.weight"), x);
    }
    TensorT<T> q = linear(x, p.wq);  // [seq, nh*hd]
    TensorT<T> k = linear(x, p.wk);  // [seq, nkv*hd]
    TensorT<T> v = linear(x, p.wv);

    TensorT<T> q3({seq, nh, hd}, std::move(q.data));
    TensorT<T> k3({seq, nkv, hd}, std::move(k.data));
    if (cfg.qk_norm) {
        q3 = rmsnorm(q3, p.q_norm, cfg.norm_eps);
        k3 = rmsnorm(k3, p.k_norm, cfg.norm_eps);
    }
    RopeParams rope{hd, cfg.rope_theta};
    const int64_t start = cache.next_pos;
    q3 = rope_apply(q3, start, rope);
    k3 = rope_apply(k3, start, rope);

    const double inv_sqrt = 1.0 / std::sqrt(double(hd));
    TensorT<T> heads({seq, nh, hd});
    TensorT<T> k_row({nkv, hd}), v_row({nkv, hd});
    for (int64_t t = 0; t < seq; t++) {
        for (int h = 0; h < nkv; h++)
            for (int d = 0; d < hd; d++) {
                k_row.at(h, d) = k3.data[size_t((t * nkv + h) * hd + d)];
                v_row.at(h, d) = v.at(t, int64_t(h) * hd + d);
            }
        cache_append(cache, k_row, v_row);
        const int64_t lo = cache.base_pos(), n = cache.count;
        for (int h = 0; h < nh; h++) {
            const int kvh = h / group;
            const T* qv = q3.data.data() + (t * nh + h) * hd;
            TensorT<T> scores({n});
            for (int64_t i = 0; i < n; i++) {
                double dot = 0.0;
                for (int d = 0; d < hd; d++) dot += double(qv[d]) * double(cache.k_at(lo + i, kvh, d));
                scores.data[size_t(i)] = static_cast<T>(dot * inv_sqrt);
            }
            TensorT<T> probs = softmax_lastdim(scores);
            for (int d = 0; d < hd; d++) {
                double acc = 0.0;
                for (int64_t i = 0; i < n; i++)
                    acc += double(probs.data[size_t(i)]) * double(cache.v_at(lo + i, kvh, d));
                heads.data[size_t((t * nh + h) * hd + d)] = static_cast<T>(acc);
            }
        }
    }
    if (taps && taps->head_out) taps->head_out(layer, heads);
    TensorT<T> merged({seq, int64_t(nh) * hd}, std::move(heads.data));
    if (taps && taps->linear_input)
        taps->linear_input(detail::blk_name(layer, "attn_output.weight"), merged);
    return linear(merged, p.wo);
}

template <typename T>
TensorT<T> mlp_forward(const MlpParamsT<T>& p, const TensorT<T>& x,
                       const ForwardTaps<T>* taps = nullptr, int layer = 0) {
    if (taps && taps->linear_input) {
        taps->linear_input(detail::blk_name(layer, "ffn_gate.weight"), x);
        taps->linear_input(detail::blk_name(layer, "ffn_up.weight"), x);
    }
    TensorT<T> g = linear(x, p.gate);
    TensorT<T> u = linear(x, p.up);
    for (size_t i = 0; i < g.data.size(); i++) g.data[i] = silu(g.data[i]) * u.data[i];
    if (taps && taps->mlp_act) taps->mlp_act(layer, g);
    if (taps && taps->linear_input) taps->linear_input(detail::blk_name(layer, "ffn_down.weight"), g);
    return linear(g, p.down);
}

// Pre-norm residual stack over the layer pattern, final norm, untied head.
// Runtime geometry (window, rope_theta) comes from the session config so a
// context-extended session can run unmodified parameters.
template <typename T>
TensorT<T> model_forward(const ModelParamsT<T>& p, SessionT<T>& s, const std::vector<int>& tokens,
                         const ForwardTaps<T>* taps = nullptr) {
    const ModelConfig& cfg = s.cfg;
    check(cfg.layer_pattern == p.cfg.layer_pattern && cfg.d_model == p.cfg.d_model &&
              cfg.d_inner == p.cfg.d_inner && cfg.d_state == p.cfg.d_state &&
              cfg.d_conv == p.cfg.d_conv && cfg.dt_rank == p.cfg.dt_rank &&
              cfg.n_heads == p.cfg.n_heads && cfg.n_kv_heads == p.cfg.n_kv_heads &&
              cfg.head_dim == p.cfg.head_dim && cfg.d_ff == p.cfg.d_ff &&
              cfg.vocab_size == p.cfg.vocab_size && cfg.qk_norm == p.cfg.qk_norm,
          ErrKind::State, "session config does not match parameter shapes");
    const int64_t seq = int64_t(tokens.size());
    TensorT<T> x({seq, cfg.d_model});
    for (int64_t t = 0; t < seq; t++) {
        int id = tokens[size_t(t)];
        check(id >= 0 && id < cfg.vocab_size, ErrKind::Input,
              "token id " + std::to_string(id) + " out of range");
        for (int i = 0; i < cfg.d_model; i++)
            x.at(t, i) = p.tok_embd.at(id, i);
    }
    for (int l = 0; l < cfg.n_layers; l++) {
        const auto& b = p.blocks[size_t(l)];
        TensorT<T> normed = rmsnorm(x, b.mixer_norm, cfg.norm_eps);
        TensorT<T> mixed = b.kind == 'M'
                               ? mamba_forward(cfg, b.mamba, normed, s.mamba[size_t(l)], taps, l)
                               : attn_forward(cfg, b.attn, normed, s.attn[size_t(l)], taps, l);
        for (size_t i = 0; i < x.data.size(); i++) x.data[i] += mixed.data[i];
        TensorT<T> mlp_in = rmsnorm(x, b.mlp_norm, cfg.norm_eps);
        TensorT<T> mlp_out = mlp_forward(b.mlp, mlp_in, taps, l);
        for (size_t i = 0; i < x.data.size(); i++) x.data[i] += mlp_out.data[i];
        if (taps && taps->block_out) taps->block_out(l, x);
    }
    TensorT<T> fin = rmsnorm(x, p.final_norm, cfg.norm_eps);
    if (taps && taps->linear_input) taps->linear_input("output.weight", fin);
    s.pos += seq;
    return linear(fin, p.output);
}

}  // namespace plc2
