#include "plc2/params.hpp"

#include <cmath>

namespace plc2 {

namespace {

std::string blk(int i, const char* suffix) {
    return "blk." + std::to_string(i) + "." + suffix;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
    validate(cfg);
    Rng rng(seed);
    const double ws = 0.02;
    ModelParams p;
    p.cfg = cfg;
    p.tok_embd = randn<float>(rng, {cfg.vocab_size, cfg.d_model}, ws);
    p.blocks.resize(static_cast<size_t>(cfg.n_layers));
    int qk = cfg.n_heads * cfg.head_dim;
    int kv = cfg.n_kv_heads * cfg.head_dim;
    for (int i = 0; i < cfg.n_layers; i++) {
        auto& b = p.blocks[static_cast<size_t>(i)];
        b.kind = cfg.layer_pattern[static_cast<size_t>(i)];
        b.mixer_norm = ones<float>({cfg.d_model});
        b.mlp_norm = ones<float>({cfg.d_model});
        if (b.kind == 'M') {
            auto& m = b.mamba;
            m.in_proj = randn<float>(rng, {2 * cfg.d_inner, cfg.d_model}, ws);
            m.conv_w = randn<float>(rng, {cfg.d_inner, cfg.d_conv}, ws);
            m.conv_b = zeros<float>({cfg.d_inner});
            m.state_proj = randn<float>(rng, {cfg.dt_rank + 2 * cfg.d_state, cfg.d_inner}, ws);
            m.dt_proj = randn<float>(rng, {cfg.d_inner, cfg.dt_rank}, ws);
            // dt = softplus(dt_bias) log-spaced in [1e-3, 1e-1] across channels
            m.dt_bias = Tensor({cfg.d_inner});
            for (int c = 0; c < cfg.d_inner; c++) {
                double f = cfg.d_inner == 1 ? 0.0 : double(c) / double(cfg.d_inner - 1);
                double dt = std::exp(std::log(1e-3) + f * (std::log(1e-1) - std::log(1e-3)));
                m.dt_bias.data[static_cast<size_t>(c)] = float(std::log(std::expm1(dt)));
            }
            m.A_log = Tensor({cfg.d_inner, cfg.d_state});
            for (int c = 0; c < cfg.d_inner; c++)
                for (int n = 0; n < cfg.d_state; n++)
                    m.A_log.at(c, n) = float(std::log(double(n + 1)));
            m.D = ones<float>({cfg.d_inner});
            m.out_proj = randn<float>(rng, {cfg.d_model, cfg.d_inner}, ws);
        } else {
            auto& a = b.attn;
            a.wq = randn<float>(rng, {qk, cfg.d_model}, ws);
            a.wk = randn<float>(rng, {kv, cfg.d_model}, ws);
            a.wv = randn<float>(rng, {kv, cfg.d_model}, ws);
            a.wo = randn<float>(rng, {cfg.d_model, qk}, ws);
            if (cfg.qk_norm) {
                a.q_norm = ones<float>({cfg.head_dim});
                a.k_norm = ones<float>({cfg.head_dim});
            }
        }
        b.mlp.gate = randn<float>(rng, {cfg.d_ff, cfg.d_model}, ws);
        b.mlp.up = randn<float>(rng, {cfg.d_ff, cfg.d_model}, ws);
        b.mlp.down = randn<float>(rng, {cfg.d_model, cfg.d_ff}, ws);
    }
    p.final_norm = ones<float>({cfg.d_model});
    p.output = randn<float>(rng, {cfg.vocab_size, cfg.d_model}, ws);
    return p;
}

Checkpoint params_to_checkpoint(const ModelParams& p) {
    Checkpoint ck;
    ck.config = p.cfg;
    auto put = [&](const std::string& name, const Tensor& t) {
        ck.tensors[name] = TensorEntry::from_f32(t);
    };
    put("tok_embd.weight", p.tok_embd);
    for (int i = 0; i < p.cfg.n_layers; i++) {
        const auto& b = p.blocks[static_cast<size_t>(i)];
        put(blk(i, "attn_norm.weight"), b.mixer_norm);
        if (b.kind == 'M') {
            put(blk(i, "ssm_in.weight"), b.mamba.in_proj);
            put(blk(i, "ssm_conv1d.weight"), b.mamba.conv_w);
            put(blk(i, "ssm_conv1d.bias"), b.mamba.conv_b);
            put(blk(i, "ssm_x.weight"), b.mamba.state_proj);
            put(blk(i, "ssm_dt.weight"), b.mamba.dt_proj);
            put(blk(i, "ssm_dt.bias"), b.mamba.dt_bias);
            put(blk(i, "ssm_a"), b.mamba.A_log);
            put(blk(i, "ssm_d"), b.mamba.D);
            put(blk(i, "ssm_out.weight"), b.mamba.out_proj);
        } else {
            put(blk(i, "attn_q.weight"), b.attn.wq);
            put(blk(i, "attn_k.weight"), b.attn.wk);
            put(blk(i, "attn_v.weight"), b.attn.wv);
            put(blk(i, "attn_output.weight"), b.attn.wo);
            if (p.cfg.qk_norm) {
                put(blk(i, "attn_q_norm.weight"), b.attn.q_norm);
                put(blk(i, "attn_k_norm.weight"), b.attn.k_norm);
            }
        }
        put(blk(i, "ffn_norm.weight"), b.mlp_norm);
        put(blk(i, "ffn_gate.weight"), b.mlp.gate);
        put(blk(i, "ffn_up.weight"), b.mlp.up);
        put(blk(i, "ffn_down.weight"), b.mlp.down);
    }
    put("output_norm.weight", p.final_norm);
    put("output.weight", p.output);
    return ck;
}

ModelParams params_from_checkpoint(const Checkpoint& ckpt) {
    validate(ckpt.config);
    const ModelConfig& cfg = ckpt.config;
    size_t used = 0;
    auto take = [&](const std::string& name, std::vector<int64_t> want) {
        auto it = ckpt.tensors.find(name);
        check(it != ckpt.tensors.end(), ErrKind::Schema, "missing tensor '" + name + "'");
        check(it->second.dtype == Dtype::F32, ErrKind::Schema,
              "tensor '" + name + "' is quantized; dequantize before loading params");
        Tensor t = it->second.as_f32();
        check(t.shape == want, ErrKind::Schema,
              "tensor '" + name + "' has shape " + shape_str(t.shape) + ", want " +
                  shape_str(want));
        used++;
        return t;
    };
    ModelParams p;
    p.cfg = cfg;
    p.tok_embd = take("tok_embd.weight", {cfg.vocab_size, cfg.d_model});
    p.blocks.resize(static_cast<size_t>(cfg.n_layers));
    int qk = cfg.n_heads * cfg.head_dim;
    int kv = cfg.n_kv_heads * cfg.head_dim;
    for (int i = 0; i < cfg.n_layers; i++) {
        auto& b = p.blocks[static_cast<size_t>(i)];
        b.kind = cfg.layer_pattern[static_cast<size_t>(i)];
        b.mixer_norm = take(blk(i, "attn_norm.weight"), {cfg.d_model});
        if (b.kind == 'M') {
            auto& m = b.mamba;
            m.in_proj = take(blk(i, "ssm_in.weight"), {2 * cfg.d_inner, cfg.d_model});
            m.conv_w = take(blk(i, "ssm_conv1d.weight"), {cfg.d_inner, cfg.d_conv});
            m.conv_b = take(blk(i, "ssm_conv1d.bias"), {cfg.d_inner});
            m.state_proj = take(blk(i, "ssm_x.weight"), {cfg.dt_rank + 2 * cfg.d_state, cfg.d_inner});
            m.dt_proj = take(blk(i, "ssm_dt.weight"), {cfg.d_inner, cfg.dt_rank});
            m.dt_bias = take(blk(i, "ssm_dt.bias"), {cfg.d_inner});
            m.A_log = take(blk(i, "ssm_a"), {cfg.d_inner, cfg.d_state});
            m.D = take(blk(i, "ssm_d"), {cfg.d_inner});
            m.out_proj = take(blk(i, "ssm_out.weight"), {cfg.d_model, cfg.d_inner});
        } else {
            auto& a = b.attn;
            a.wq = take(blk(i, "attn_q.weight"), {qk, cfg.d_model});
            a.wk = take(blk(i, "attn_k.weight"), {kv, cfg.d_model});
            a.wv = take(blk(i, "attn_v.weight"), {kv, cfg.d_model});
            a.wo = take(blk(i, "attn_output.weight"), {cfg.d_model, qk});
            if (cfg.qk_norm) {
                a.q_norm = take(blk(i, "attn_q_norm.weight"), {cfg.head_dim});
                a.k_norm = take(blk(i, "attn_k_norm.weight"), {cfg.head_dim});
            }
        }
        b.mlp_norm = take(blk(i, "ffn_norm.weight"), {cfg.d_model});
        b.mlp.gate = take(blk(i, "ffn_gate.weight"), {cfg.d_ff, cfg.d_model});
        b.mlp.up = take(blk(i, "ffn_up.weight"), {cfg.d_ff, cfg.d_model});
        b.mlp.down = take(blk(i, "ffn_down.weight"), {cfg.d_model, cfg.d_ff});
    }
    p.final_norm = take("output_norm.weight", {cfg.d_model});
    p.output = take("output.weight", {cfg.vocab_size, cfg.d_model});
    check(used == ckpt.tensors.size(), ErrKind::Schema,
          "checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, expected " +
              std::to_string(used));
    return p;
}

}  // namespace plc2
