#include "plc2/compress.hpp"

#include "plc2/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace plc2 {

namespace {

// source unit for target index j when m units grow to R >= m: originals
// first, then duplicates of the highest-index units
int64_t src_of(int64_t j, int64_t m) {
    if (j < m) return j;
    return m - 1 - (j - m) % m;
}

// grows a 2-D tensor to [R, C] by unit duplication; when divide_cols is set
// the values are divided by the column duplication factor so that sums over
// duplicated inputs are preserved
Tensor grow2(const Tensor& t, int64_t R, int64_t C, bool divide_cols) {
    const int64_t r0 = t.shape[0], c0 = t.shape[1];
    const float f = divide_cols ? float(double(c0) / double(C)) : 1.0f;
    Tensor out({R, C});
    for (int64_t j = 0; j < R; j++) {
        int64_t sr = src_of(j, r0);
        for (int64_t c = 0; c < C; c++) out.at(j, c) = t.at(sr, src_of(c, c0)) * f;
    }
    return out;
}

Tensor grow1(const Tensor& t, int64_t N) {
    Tensor out({N});
    for (int64_t j = 0; j < N; j++) out.data[size_t(j)] = t.data[size_t(src_of(j, t.shape[0]))];
    return out;
}

// in_proj rows are block-structured: x-branch rows then gate rows, each
// following the d_inner duplication map
Tensor grow_in_proj(const Tensor& t, int64_t DI, int64_t D) {
    const int64_t di = t.shape[0] / 2, d = t.shape[1];
    const float f = float(double(d) / double(D));
    Tensor out({2 * DI, D});
    for (int64_t j = 0; j < 2 * DI; j++) {
        int64_t local = j < DI ? j : j - DI;
        int64_t sr = src_of(local, di) + (j < DI ? 0 : di);
        for (int64_t c = 0; c < D; c++) out.at(j, c) = t.at(sr, src_of(c, d)) * f;
    }
    return out;
}

std::string repeat_pattern(const std::string& s, int reps) {
    std::string out;
    for (int i = 0; i < reps; i++) out += s;
    return out;
}

std::vector<int64_t> top_indices(const std::vector<float>& scores, int64_t keep) {
    std::vector<int64_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (scores[size_t(a)] != scores[size_t(b)]) return scores[size_t(a)] > scores[size_t(b)];
        return a < b;
    });
    order.resize(size_t(keep));
    std::sort(order.begin(), order.end());
    return order;
}

Tensor take_rows(const Tensor& t, const std::vector<int64_t>& rows) {
    Tensor out({int64_t(rows.size()), t.shape[1]});
    for (int64_t j = 0; j < out.shape[0]; j++)
        for (int64_t c = 0; c < t.shape[1]; c++) out.at(j, c) = t.at(rows[size_t(j)], c);
    return out;
}

Tensor take_cols(const Tensor& t, const std::vector<int64_t>& cols) {
    Tensor out({t.shape[0], int64_t(cols.size())});
    for (int64_t j = 0; j < t.shape[0]; j++)
        for (int64_t c = 0; c < out.shape[1]; c++) out.at(j, c) = t.at(j, cols[size_t(c)]);
    return out;
}

Tensor take_vec(const Tensor& t, const std::vector<int64_t>& idx) {
    Tensor out({int64_t(idx.size())});
    for (size_t j = 0; j < idx.size(); j++) out.data[j] = t.data[size_t(idx[j])];
    return out;
}

}  // namespace

ModelParams reuse_init(const ModelParams& small, const ModelConfig& big_cfg) {
    ModelConfig big = big_cfg;
    resolve_derived(big);
    validate(big);
    const ModelConfig& s = small.cfg;

    check(big.vocab_size == s.vocab_size && big.d_state == s.d_state && big.d_conv == s.d_conv &&
              big.n_heads == s.n_heads && big.n_kv_heads == s.n_kv_heads &&
              big.head_dim == s.head_dim && big.qk_norm == s.qk_norm && big.dt_rank == s.dt_rank,
          ErrKind::Config,
          "reuse_init keeps vocab, state, conv, head, and dt_rank dimensions fixed");
    check(big.d_model >= s.d_model && big.d_model % s.d_model == 0, ErrKind::Config,
          "d_model must grow by an integer factor");
    check(big.d_ff >= s.d_ff && big.d_ff % s.d_ff == 0, ErrKind::Config,
          "d_ff must grow by an integer factor");
    check(big.d_inner % s.d_inner == 0 && big.d_inner / s.d_inner == big.d_model / s.d_model,
          ErrKind::Config, "d_inner must scale with d_model");
    check(big.n_layers % s.n_layers == 0 &&
              big.layer_pattern == repeat_pattern(s.layer_pattern, big.n_layers / s.n_layers),
          ErrKind::Config, "layer pattern must repeat the source pattern");

    const int64_t D = big.d_model, DI = big.d_inner, FF = big.d_ff, V = big.vocab_size;
    ModelParams out;
    out.cfg = big;
    out.tok_embd = grow2(small.tok_embd, V, D, false);  // produces the stream: plain copies
    out.output = grow2(small.output, V, D, true);
    out.final_norm = grow1(small.final_norm, D);

    out.blocks.resize(size_t(big.n_layers));
    for (int l = 0; l < big.n_layers; l++) {
        const BlockParamsT<float>& src = small.blocks[size_t(l % s.n_layers)];
        BlockParamsT<float>& dst = out.blocks[size_t(l)];
        dst.kind = src.kind;
        dst.mixer_norm = grow1(src.mixer_norm, D);
        dst.mlp_norm = grow1(src.mlp_norm, D);
        if (src.kind == 'M') {
            dst.mamba.in_proj = grow_in_proj(src.mamba.in_proj, DI, D);
            dst.mamba.conv_w = grow2(src.mamba.conv_w, DI, s.d_conv, false);
            dst.mamba.conv_b = grow1(src.mamba.conv_b, DI);
            dst.mamba.state_proj = grow2(src.mamba.state_proj, s.dt_rank + 2 * s.d_state, DI, true);
            dst.mamba.dt_proj = grow2(src.mamba.dt_proj, DI, s.dt_rank, false);
            dst.mamba.dt_bias = grow1(src.mamba.dt_bias, DI);
            dst.mamba.A_log = grow2(src.mamba.A_log, DI, s.d_state, false);
            dst.mamba.D = grow1(src.mamba.D, DI);
            dst.mamba.out_proj = grow2(src.mamba.out_proj, D, DI, true);
        } else {
            dst.attn.wq = grow2(src.attn.wq, int64_t(s.n_heads) * s.head_dim, D, true);
            dst.attn.wk = grow2(src.attn.wk, int64_t(s.n_kv_heads) * s.head_dim, D, true);
            dst.attn.wv = grow2(src.attn.wv, int64_t(s.n_kv_heads) * s.head_dim, D, true);
            dst.attn.wo = grow2(src.attn.wo, D, int64_t(s.n_heads) * s.head_dim, false);
            dst.attn.q_norm = src.attn.q_norm;
            dst.attn.k_norm = src.attn.k_norm;
        }
        dst.mlp.gate = grow2(src.mlp.gate, FF, D, true);
        dst.mlp.up = grow2(src.mlp.up, FF, D, true);
        dst.mlp.down = grow2(src.mlp.down, D, FF, true);
    }
    return out;
}

Checkpoint reuse_init(const Checkpoint& small, const ModelConfig& big_cfg) {
    return params_to_checkpoint(reuse_init(params_from_checkpoint(small), big_cfg));
}

ImportanceReport importance_scores(const ModelParams& p, const std::vector<int>& calib_tokens) {
    check(!calib_tokens.empty(), ErrKind::Input, "importance scoring needs calibration tokens");
    const ModelConfig& cfg = p.cfg;
    const int L = cfg.n_layers;
    const double n_pos = double(calib_tokens.size());

    std::vector<std::vector<double>> mlp(static_cast<size_t>(L));
    std::vector<std::vector<double>> heads(static_cast<size_t>(L));
    std::vector<std::vector<double>> mamba(static_cast<size_t>(L));
    std::vector<double> embed(size_t(cfg.d_model), 0.0);
    for (int l = 0; l < L; l++) {
        mlp[size_t(l)].assign(size_t(cfg.d_ff), 0.0);
        if (cfg.layer_pattern[size_t(l)] == 'A')
            heads[size_t(l)].assign(size_t(cfg.n_heads), 0.0);
        else
            mamba[size_t(l)].assign(size_t(cfg.d_inner), 0.0);
    }

    ForwardTaps<float> taps;
    taps.mlp_act = [&](int l, const Tensor& a) {
        for (int64_t t = 0; t < a.shape[0]; t++)
            for (int64_t f = 0; f < a.shape[1]; f++)
                mlp[size_t(l)][size_t(f)] += std::abs(double(a.at(t, f)));
    };
    taps.head_out = [&](int l, const Tensor& h) {
        const int64_t nh = h.shape[1], hd = h.shape[2];
        for (int64_t t = 0; t < h.shape[0]; t++)
            for (int64_t hh = 0; hh < nh; hh++) {
                double ss = 0;
                for (int64_t d = 0; d < hd; d++) {
                    double v = double(h.data[size_t((t * nh + hh) * hd + d)]);
                    ss += v * v;
                }
                heads[size_t(l)][size_t(hh)] += std::sqrt(ss);
            }
    };
    taps.mamba_gated = [&](int l, const Tensor& y) {
        for (int64_t t = 0; t < y.shape[0]; t++)
            for (int64_t c = 0; c < y.shape[1]; c++)
                mamba[size_t(l)][size_t(c)] += std::abs(double(y.at(t, c)));
    };
    taps.block_out = [&](int, const Tensor& x) {
        for (int64_t t = 0; t < x.shape[0]; t++)
            for (int64_t c = 0; c < x.shape[1]; c++) embed[size_t(c)] += std::abs(double(x.at(t, c)));
    };

    SessionT<float> s = make_session<float>(cfg);
    model_forward(p, s, calib_tokens, &taps);

    ImportanceReport rep;
    rep.mlp_neurons.resize(size_t(L));
    rep.heads.resize(size_t(L));
    rep.mamba_channels.resize(size_t(L));
    for (int l = 0; l < L; l++) {
        for (double v : mlp[size_t(l)]) rep.mlp_neurons[size_t(l)].push_back(float(v / n_pos));
        for (double v : heads[size_t(l)]) rep.heads[size_t(l)].push_back(float(v / n_pos));
        for (double v : mamba[size_t(l)]) rep.mamba_channels[size_t(l)].push_back(float(v / n_pos));
    }
    for (double v : embed) rep.embed_channels.push_back(float(v / (n_pos * L)));
    return rep;
}

ModelParams prune_structured(const ModelParams& p, const ImportanceReport& rep,
                             const PruneSpec& spec) {
    const ModelConfig& cfg = p.cfg;
    const int group = cfg.n_heads / cfg.n_kv_heads;
    const int keep_ff = spec.keep_d_ff ? spec.keep_d_ff : cfg.d_ff;
    const int keep_heads = spec.keep_heads ? spec.keep_heads : cfg.n_heads;
    const int keep_inner = spec.keep_d_inner ? spec.keep_d_inner : cfg.d_inner;
    const int keep_dm = spec.keep_d_model ? spec.keep_d_model : cfg.d_model;

    check(keep_ff >= 1 && keep_ff <= cfg.d_ff, ErrKind::Config, "keep_d_ff out of range");
    check(keep_heads >= 1 && keep_heads <= cfg.n_heads, ErrKind::Config, "keep_heads out of range");
    check(keep_heads % group == 0, ErrKind::Config,
          "keep_heads must be a multiple of the GQA group size");
    check(keep_inner >= 1 && keep_inner <= cfg.d_inner, ErrKind::Config,
          "keep_d_inner out of range");
    check(keep_dm >= 1 && keep_dm <= cfg.d_model, ErrKind::Config, "keep_d_model out of range");
    check(int(rep.mlp_neurons.size()) == cfg.n_layers && int(rep.heads.size()) == cfg.n_layers &&
              int(rep.mamba_channels.size()) == cfg.n_layers &&
              int(rep.embed_channels.size()) == cfg.d_model,
          ErrKind::Input, "importance report does not match the model config");

    auto dm_keep = top_indices(rep.embed_channels, keep_dm);

    ModelParams out;
    out.cfg = cfg;
    out.cfg.d_ff = keep_ff;
    out.cfg.n_heads = keep_heads;
    out.cfg.n_kv_heads = keep_heads / group;
    out.cfg.d_inner = keep_inner;
    out.cfg.d_model = keep_dm;
    out.cfg.dt_rank = cfg.dt_rank;  // pin: no longer derivable from the sliced width
    validate(out.cfg);

    out.tok_embd = take_cols(p.tok_embd, dm_keep);
    out.output = take_cols(p.output, dm_keep);
    out.final_norm = take_vec(p.final_norm, dm_keep);

    out.blocks.resize(size_t(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; l++) {
        const BlockParamsT<float>& src = p.blocks[size_t(l)];
        BlockParamsT<float>& dst = out.blocks[size_t(l)];
        dst.kind = src.kind;
        dst.mixer_norm = take_vec(src.mixer_norm, dm_keep);
        dst.mlp_norm = take_vec(src.mlp_norm, dm_keep);
        if (src.kind == 'M') {
            check(int(rep.mamba_channels[size_t(l)].size()) == cfg.d_inner, ErrKind::Input,
                  "mamba channel scores missing for a mamba layer");
            auto ch = top_indices(rep.mamba_channels[size_t(l)], keep_inner);
            std::vector<int64_t> in_rows = ch;
            for (int64_t c : ch) in_rows.push_back(cfg.d_inner + c);
            dst.mamba.in_proj = take_cols(take_rows(src.mamba.in_proj, in_rows), dm_keep);
            dst.mamba.conv_w = take_rows(src.mamba.conv_w, ch);
            dst.mamba.conv_b = take_vec(src.mamba.conv_b, ch);
            dst.mamba.state_proj = take_cols(src.mamba.state_proj, ch);
            dst.mamba.dt_proj = take_rows(src.mamba.dt_proj, ch);
            dst.mamba.dt_bias = take_vec(src.mamba.dt_bias, ch);
            dst.mamba.A_log = take_rows(src.mamba.A_log, ch);
            dst.mamba.D = take_vec(src.mamba.D, ch);
            dst.mamba.out_proj = take_rows(take_cols(src.mamba.out_proj, ch), dm_keep);
        } else {
            check(int(rep.heads[size_t(l)].size()) == cfg.n_heads, ErrKind::Input,
                  "head scores missing for an attention layer");
            // score and keep whole GQA groups so every query head keeps its kv head
            std::vector<float> group_scores(size_t(cfg.n_kv_heads), 0.0f);
            for (int h = 0; h < cfg.n_heads; h++)
                group_scores[size_t(h / group)] += rep.heads[size_t(l)][size_t(h)];
            auto kv_keep = top_indices(group_scores, keep_heads / group);
            std::vector<int64_t> q_rows, kv_rows, o_cols;
            for (int64_t kv : kv_keep) {
                for (int64_t d = 0; d < cfg.head_dim; d++)
                    kv_rows.push_back(kv * cfg.head_dim + d);
                for (int64_t h = kv * group; h < (kv + 1) * group; h++)
                    for (int64_t d = 0; d < cfg.head_dim; d++) {
                        q_rows.push_back(h * cfg.head_dim + d);
                        o_cols.push_back(h * cfg.head_dim + d);
                    }
            }
            dst.attn.wq = take_cols(take_rows(src.attn.wq, q_rows), dm_keep);
            dst.attn.wk = take_cols(take_rows(src.attn.wk, kv_rows), dm_keep);
            dst.attn.wv = take_cols(take_rows(src.attn.wv, kv_rows), dm_keep);
            dst.attn.wo = take_cols(take_rows(src.attn.wo, dm_keep), o_cols);
            dst.attn.q_norm = src.attn.q_norm;
            dst.attn.k_norm = src.attn.k_norm;
        }
        auto ff = top_indices(rep.mlp_neurons[size_t(l)], keep_ff);
        dst.mlp.gate = take_cols(take_rows(src.mlp.gate, ff), dm_keep);
        dst.mlp.up = take_cols(take_rows(src.mlp.up, ff), dm_keep);
        dst.mlp.down = take_cols(take_rows(src.mlp.down, dm_keep), ff);
    }
    return out;
}

DistillResult distill_topk_loss(const TensorD& student_logits, const TensorD& teacher_logits,
                                int k) {
    check(student_logits.ndim() == 2 && student_logits.shape == teacher_logits.shape,
          ErrKind::Shape, "student and teacher logits must share a [seq, vocab] shape");
    const int64_t seq = student_logits.shape[0], V = student_logits.shape[1];
    check(seq >= 1, ErrKind::Input, "need at least one position");
    check(k >= 1 && k <= V, ErrKind::Config, "top-k must be in [1, vocab]");

    DistillResult r;
    r.grad = TensorD({seq, V});
    std::vector<int64_t> order(static_cast<size_t>(V));
    for (int64_t t = 0; t < seq; t++) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            double ta = teacher_logits.at(t, a), tb = teacher_logits.at(t, b);
            if (ta != tb) return ta > tb;
            return a < b;
        });

        // teacher probabilities renormalized over the top-k support
        double mt = teacher_logits.at(t, order[0]);
        double zt = 0;
        for (int i = 0; i < k; i++) zt += std::exp(teacher_logits.at(t, order[size_t(i)]) - mt);

        // student full-vocab log-softmax
        double ms = student_logits.at(t, 0);
        for (int64_t j = 1; j < V; j++) ms = std::max(ms, student_logits.at(t, j));
        double zs = 0;
        for (int64_t j = 0; j < V; j++) zs += std::exp(student_logits.at(t, j) - ms);
        double lse = ms + std::log(zs);

        for (int64_t j = 0; j < V; j++)
            r.grad.at(t, j) = std::exp(student_logits.at(t, j) - lse) / double(seq);
        double loss_t = 0;
        for (int i = 0; i < k; i++) {
            int64_t idx = order[size_t(i)];
            double pt = std::exp(teacher_logits.at(t, idx) - mt) / zt;
            double log_pt = teacher_logits.at(t, idx) - mt - std::log(zt);
            double log_ps = student_logits.at(t, idx) - lse;
            loss_t += pt * (log_pt - log_ps);
            r.grad.at(t, idx) -= pt / double(seq);
        }
        r.loss += loss_t / double(seq);
    }
    return r;
}

}  // namespace plc2
