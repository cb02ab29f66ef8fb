#include "plc2/config.hpp"

#include <json.hpp>

namespace plc2 {

int ModelConfig::n_attn_layers() const {
    int n = 0;
    for (char c : layer_pattern)
        if (c == 'A') n++;
    return n;
}

int ModelConfig::n_mamba_layers() const {
    int n = 0;
    for (char c : layer_pattern)
        if (c == 'M') n++;
    return n;
}

void resolve_derived(ModelConfig& cfg) {
    if (cfg.d_inner == 0) cfg.d_inner = cfg.expand * cfg.d_model;
    if (cfg.dt_rank == 0) cfg.dt_rank = (cfg.d_model + 15) / 16;
}

void validate(const ModelConfig& cfg) {
    auto pos = [](int v, const char* name) {
        check(v >= 1, ErrKind::Config, std::string(name) + " must be positive");
    };
    pos(cfg.vocab_size, "vocab_size");
    pos(cfg.d_model, "d_model");
    pos(cfg.n_layers, "n_layers");
    pos(cfg.d_state, "d_state");
    pos(cfg.d_conv, "d_conv");
    pos(cfg.expand, "expand");
    pos(cfg.n_heads, "n_heads");
    pos(cfg.n_kv_heads, "n_kv_heads");
    pos(cfg.head_dim, "head_dim");
    pos(cfg.d_ff, "d_ff");
    pos(cfg.max_train_len, "max_train_len");
    pos(cfg.d_inner, "d_inner");
    pos(cfg.dt_rank, "dt_rank");
    check(cfg.head_dim % 2 == 0, ErrKind::Config, "head_dim must be even");
    check(cfg.n_heads % cfg.n_kv_heads == 0, ErrKind::Config,
          "n_heads must be a multiple of n_kv_heads");
    check(static_cast<int>(cfg.layer_pattern.size()) == cfg.n_layers, ErrKind::Config,
          "layer_pattern length " + std::to_string(cfg.layer_pattern.size()) +
              " does not match n_layers " + std::to_string(cfg.n_layers));
    for (char c : cfg.layer_pattern)
        check(c == 'M' || c == 'A', ErrKind::Config,
              std::string("layer_pattern may only contain M and A, got '") + c + "'");
    check(cfg.window == kFullWindow || cfg.window >= 1, ErrKind::Config,
          "window must be positive or FULL");
    check(cfg.rope_theta > 0, ErrKind::Config, "rope_theta must be positive");
    check(cfg.norm_eps > 0, ErrKind::Config, "norm_eps must be positive");
}

ModelConfig preset_config(const std::string& name) {
    ModelConfig c;
    c.d_conv = 4;
    c.expand = 2;
    c.rope_theta = 10000.0;
    if (name == "tiny-m" || name == "tiny-a") {
        c.vocab_size = 64;
        c.d_model = 32;
        c.n_layers = 1;
        c.layer_pattern = name == "tiny-m" ? "M" : "A";
        c.d_state = 8;
        c.n_heads = 2;
        c.n_kv_heads = 1;
        c.head_dim = 16;
        c.window = name == "tiny-m" ? 16 : 8;
        c.d_ff = 64;
        c.max_train_len = 32;
    } else if (name == "tiny-mama") {
        c.vocab_size = 256;
        c.d_model = 128;
        c.n_layers = 4;
        c.layer_pattern = "MAMA";
        c.d_state = 32;
        c.n_heads = 8;
        c.n_kv_heads = 4;
        c.head_dim = 16;
        c.window = 32;
        c.d_ff = 512;
        c.max_train_len = 64;
    } else if (name == "prod-shape") {
        // production-scale shape: 27 attention layers x 2*8*128 = 55,296 KV
        // elements per token
        c.vocab_size = 100000;
        c.d_model = 4096;
        c.n_layers = 54;
        for (int i = 0; i < 27; i++) c.layer_pattern += "MA";
        c.d_state = 128;
        c.n_heads = 32;
        c.n_kv_heads = 8;
        c.head_dim = 128;
        c.window = 2048;
        c.d_ff = 16384;
        c.max_train_len = 4096;
    } else if (name == "phonebook-demo") {
        c.vocab_size = 128;
        c.d_model = 64;
        c.n_layers = 4;
        c.layer_pattern = "MAMA";
        c.d_state = 16;
        c.n_heads = 4;
        c.n_kv_heads = 2;
        c.head_dim = 16;
        c.window = 64;
        c.d_ff = 256;
        c.max_train_len = 256;
    } else {
        fail(ErrKind::Config, "unknown preset '" + name + "'");
    }
    resolve_derived(c);
    validate(c);
    return c;
}

std::vector<std::string> preset_names() {
    return {"tiny-m", "tiny-a", "tiny-mama", "prod-shape", "phonebook-demo"};
}

ModelConfig extend_context(const ModelConfig& cfg, int new_window, double new_theta) {
    check(new_window == kFullWindow || new_window >= 1, ErrKind::Config,
          "new window must be positive or FULL");
    check(new_theta > 0, ErrKind::Config, "new rope theta must be positive");
    bool old_full = cfg.window == kFullWindow;
    bool new_full = new_window == kFullWindow;
    // FULL counts as wider than any finite window
    if (old_full && !new_full)
        fail(ErrKind::Config, "refusing to shrink window from FULL to " +
                                  std::to_string(new_window) + "; surgery only ever expands");
    if (!old_full && !new_full && new_window < cfg.window)
        fail(ErrKind::Config, "refusing to shrink window from " + std::to_string(cfg.window) +
                                  " to " + std::to_string(new_window) +
                                  "; surgery only ever expands");
    check(new_theta >= cfg.rope_theta, ErrKind::Config,
          "refusing to lower rope_theta from " + std::to_string(cfg.rope_theta) + " to " +
              std::to_string(new_theta) + "; surgery only ever expands");
    ModelConfig out = cfg;
    out.window = new_window;
    out.rope_theta = new_theta;
    return out;
}

std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["vocab_size"] = cfg.vocab_size;
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["layer_pattern"] = cfg.layer_pattern;
    j["d_state"] = cfg.d_state;
    j["d_conv"] = cfg.d_conv;
    j["expand"] = cfg.expand;
    j["n_heads"] = cfg.n_heads;
    j["n_kv_heads"] = cfg.n_kv_heads;
    j["head_dim"] = cfg.head_dim;
    j["window"] = cfg.window;
    j["rope_theta"] = cfg.rope_theta;
    j["d_ff"] = cfg.d_ff;
    j["max_train_len"] = cfg.max_train_len;
    j["d_inner"] = cfg.d_inner;
    j["dt_rank"] = cfg.dt_rank;
    j["qk_norm"] = cfg.qk_norm;
    j["norm_eps"] = cfg.norm_eps;
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::Format, std::string("bad config json: ") + e.what());
    }
    ModelConfig cfg;
    try {
        j.at("vocab_size").get_to(cfg.vocab_size);
        j.at("d_model").get_to(cfg.d_model);
        j.at("n_layers").get_to(cfg.n_layers);
        j.at("layer_pattern").get_to(cfg.layer_pattern);
        j.at("d_state").get_to(cfg.d_state);
        j.at("d_conv").get_to(cfg.d_conv);
        j.at("expand").get_to(cfg.expand);
        j.at("n_heads").get_to(cfg.n_heads);
        j.at("n_kv_heads").get_to(cfg.n_kv_heads);
        j.at("head_dim").get_to(cfg.head_dim);
        j.at("window").get_to(cfg.window);
        j.at("rope_theta").get_to(cfg.rope_theta);
        j.at("d_ff").get_to(cfg.d_ff);
        j.at("max_train_len").get_to(cfg.max_train_len);
        if (j.contains("d_inner")) j.at("d_inner").get_to(cfg.d_inner);
        if (j.contains("dt_rank")) j.at("dt_rank").get_to(cfg.dt_rank);
        if (j.contains("qk_norm")) j.at("qk_norm").get_to(cfg.qk_norm);
        if (j.contains("norm_eps")) j.at("norm_eps").get_to(cfg.norm_eps);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::Format, std::string("bad config json: ") + e.what());
    }
    resolve_derived(cfg);
    validate(cfg);
    return cfg;
}

}  // namespace plc2
