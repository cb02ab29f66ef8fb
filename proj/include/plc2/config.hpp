#pragma once

#include "plc2/common.hpp"

#include <string>
#include <vector>

namespace plc2 {

// Sentinel for full (unwindowed) causal attention.
inline constexpr int kFullWindow = -1;

// Full architectural description. d_inner and dt_rank are stored explicitly
// (0 means "derive the default") so pruning and surgery can set them freely.
// Presets keep n_heads*head_dim == d_model, but pruned models may not; the
// projections are shaped from (n_heads, head_dim) and d_model independently.
struct ModelConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;
    std::string layer_pattern;  // one char per layer, 'M' (mamba) or 'A' (attention)
    int d_state = 0;            // SSM state size
    int d_conv = 0;             // causal conv kernel width
    int expand = 0;             // mamba inner-width multiplier
    int n_heads = 0;
    int n_kv_heads = 0;
    int head_dim = 0;
    int window = kFullWindow;   // sliding window size, or kFullWindow
    double rope_theta = 10000.0;
    int d_ff = 0;               // gated MLP hidden size
    int max_train_len = 0;
    int d_inner = 0;            // 0 -> expand * d_model
    int dt_rank = 0;            // 0 -> ceil(d_model / 16)
    bool qk_norm = true;
    double norm_eps = 1e-5;

    bool full_window() const { return window == kFullWindow; }
    int n_attn_layers() const;
    int n_mamba_layers() const;
};

// Fills d_inner and dt_rank when left at 0.
void resolve_derived(ModelConfig& cfg);

// Throws ErrKind::Config on any structural inconsistency.
void validate(const ModelConfig& cfg);

// Built-in configs: tiny-m, tiny-a, tiny-mama, prod-shape, phonebook-demo.
ModelConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

// Context surgery: widens the attention window and/or raises rope theta.
// Config-only; parameters are untouched. Shrinking either value is refused.
ModelConfig extend_context(const ModelConfig& cfg, int new_window, double new_theta);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

}  // namespace plc2
