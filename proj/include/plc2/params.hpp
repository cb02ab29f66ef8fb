#pragma once

#include "plc2/checkpoint.hpp"
#include "plc2/config.hpp"
#include "plc2/tensor.hpp"

#include <string>
#include <vector>

namespace plc2 {

// Weight layouts follow the linear() convention: W is [out, in].
// The state projection runs on the conv output (not on the raw x branch),
// and there is no norm between the selective scan and out_proj.
template <typename T>
struct MambaParamsT {
    TensorT<T> in_proj;     // [2*d_inner, d_model]: x branch rows first, then gate z
    TensorT<T> conv_w;      // [d_inner, d_conv] depthwise
    TensorT<T> conv_b;      // [d_inner]
    TensorT<T> state_proj;  // [dt_rank + 2*d_state, d_inner]: dt, B, C
    TensorT<T> dt_proj;     // [d_inner, dt_rank]
    TensorT<T> dt_bias;     // [d_inner]
    TensorT<T> A_log;       // [d_inner, d_state], A = -exp(A_log)
    TensorT<T> D;           // [d_inner]
    TensorT<T> out_proj;    // [d_model, d_inner]
};

template <typename T>
struct AttnParamsT {
    TensorT<T> wq;      // [n_heads*head_dim, d_model]
    TensorT<T> wk;      // [n_kv_heads*head_dim, d_model]
    TensorT<T> wv;      // [n_kv_heads*head_dim, d_model]
    TensorT<T> wo;      // [d_model, n_heads*head_dim]
    TensorT<T> q_norm;  // [head_dim], shared across heads (empty when qk_norm off)
    TensorT<T> k_norm;  // [head_dim]
};

template <typename T>
struct MlpParamsT {
    TensorT<T> gate;  // [d_ff, d_model]
    TensorT<T> up;    // [d_ff, d_model]
    TensorT<T> down;  // [d_model, d_ff]
};

template <typename T>
struct BlockParamsT {
    char kind = 'M';  // 'M' or 'A'
    TensorT<T> mixer_norm;  // [d_model]
    MambaParamsT<T> mamba;
    AttnParamsT<T> attn;
    TensorT<T> mlp_norm;  // [d_model]
    MlpParamsT<T> mlp;
};

template <typename T>
struct ModelParamsT {
    ModelConfig cfg;
    TensorT<T> tok_embd;    // [vocab, d_model]
    std::vector<BlockParamsT<T>> blocks;
    TensorT<T> final_norm;  // [d_model]
    TensorT<T> output;      // [vocab, d_model], untied from tok_embd
};

using ModelParams = ModelParamsT<float>;

// Seeded random initialization: normal(0, 0.02) projections, unit norms,
// zero biases, A rows log(1..d_state), dt_bias the softplus preimage of
// log-spaced timesteps in [1e-3, 1e-1].
ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

Checkpoint params_to_checkpoint(const ModelParams& p);
// Requires an all-f32 tensor table (dequantize first if needed); verifies
// that names and shapes match the embedded config exactly.
ModelParams params_from_checkpoint(const Checkpoint& ckpt);

template <typename U, typename T>
ModelParamsT<U> convert_params(const ModelParamsT<T>& p) {
    ModelParamsT<U> out;
    out.cfg = p.cfg;
    out.tok_embd = p.tok_embd.template cast<U>();
    out.final_norm = p.final_norm.template cast<U>();
    out.output = p.output.template cast<U>();
    out.blocks.resize(p.blocks.size());
    for (size_t i = 0; i < p.blocks.size(); i++) {
        const auto& b = p.blocks[i];
        auto& o = out.blocks[i];
        o.kind = b.kind;
        o.mixer_norm = b.mixer_norm.template cast<U>();
        o.mlp_norm = b.mlp_norm.template cast<U>();
        o.mamba.in_proj = b.mamba.in_proj.template cast<U>();
        o.mamba.conv_w = b.mamba.conv_w.template cast<U>();
        o.mamba.conv_b = b.mamba.conv_b.template cast<U>();
        o.mamba.state_proj = b.mamba.state_proj.template cast<U>();
        o.mamba.dt_proj = b.mamba.dt_proj.template cast<U>();
        o.mamba.dt_bias = b.mamba.dt_bias.template cast<U>();
        o.mamba.A_log = b.mamba.A_log.template cast<U>();
        o.mamba.D = b.mamba.D.template cast<U>();
        o.mamba.out_proj = b.mamba.out_proj.template cast<U>();
        o.attn.wq = b.attn.wq.template cast<U>();
        o.attn.wk = b.attn.wk.template cast<U>();
        o.attn.wv = b.attn.wv.template cast<U>();
        o.attn.wo = b.attn.wo.template cast<U>();
        o.attn.q_norm = b.attn.q_norm.template cast<U>();
        o.attn.k_norm = b.attn.k_norm.template cast<U>();
        o.mlp.gate = b.mlp.gate.template cast<U>();
        o.mlp.up = b.mlp.up.template cast<U>();
        o.mlp.down = b.mlp.down.template cast<U>();
    }
    return out;
}

}  // namespace plc2
