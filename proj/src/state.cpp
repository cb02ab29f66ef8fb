#include "plc2/state.hpp"

#include <algorithm>

namespace plc2 {

int64_t param_count(const ModelConfig& cfg) {
    const int64_t d = cfg.d_model, di = cfg.d_inner, ds = cfg.d_state, dc = cfg.d_conv;
    const int64_t dtr = cfg.dt_rank, dff = cfg.d_ff, hd = cfg.head_dim;
    const int64_t qk = int64_t(cfg.n_heads) * hd, kv = int64_t(cfg.n_kv_heads) * hd;
    int64_t total = int64_t(cfg.vocab_size) * d;  // tok_embd
    for (char kind : cfg.layer_pattern) {
        total += 2 * d;  // mixer + mlp norms
        if (kind == 'M') {
            total += 2 * di * d;        // in_proj
            total += di * dc + di;      // conv weight + bias
            total += (dtr + 2 * ds) * di;
            total += di * dtr + di;     // dt_proj + bias
            total += di * ds + di;      // A_log + D
            total += d * di;            // out_proj
        } else {
            total += qk * d + 2 * kv * d + d * qk;
            if (cfg.qk_norm) total += 2 * hd;
        }
        total += 2 * dff * d + d * dff;  // gate, up, down
    }
    total += d;                           // final norm
    total += int64_t(cfg.vocab_size) * d; // output head
    return total;
}

MemoryReport memory_footprint(const ModelConfig& cfg, int64_t context_len, KvAccounting kv) {
    check(context_len >= 0, ErrKind::Input, "context_len must be nonnegative");
    MemoryReport r;
    r.weight_bytes = param_count(cfg) * 2;  // bf16-equivalent
    int64_t kv_elems = int64_t(cfg.n_attn_layers()) * 2 * cfg.n_kv_heads * cfg.head_dim;
    r.kv_bytes_per_token = kv_elems * int64_t(kv);
    int64_t resident = cfg.full_window() ? context_len : std::min<int64_t>(context_len, cfg.window);
    r.kv_bytes_total = r.kv_bytes_per_token * resident;
    r.mamba_state_bytes = int64_t(cfg.n_mamba_layers()) *
                          (int64_t(cfg.d_inner) * (cfg.d_conv - 1) +
                           int64_t(cfg.d_inner) * cfg.d_state) *
                          4;
    return r;
}

}  // namespace plc2
