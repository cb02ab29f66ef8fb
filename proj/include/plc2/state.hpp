#pragma once

#include "plc2/config.hpp"
#include "plc2/fp8.hpp"
#include "plc2/tensor.hpp"

#include <cstdint>
#include <vector>

namespace plc2 {

// Storage dtype for cached K/V. The engine computes in T regardless; FP8
// stores quantize at append time and dequantize at attention time.
enum class KvStore { F32, Fp8e4m3, Fp8e5m2 };

template <typename T>
struct MambaStateT {
    TensorT<T> conv_tail;  // [d_inner, d_conv-1], last inputs seen by the conv
    TensorT<T> h;          // [d_inner, d_state]
};

// Sliding-window KV cache as a ring buffer of capacity `window` (slot of
// absolute position p is p % window), or a growable array when FULL.
// Entries are appended one token at a time; after appending position p the
// buffer holds exactly positions [max(0, p-window+1), p], so windowed
// attention can simply iterate the whole buffer in logical order.
template <typename T>
struct AttnCacheT {
    int window = kFullWindow;
    int n_kv_heads = 0;
    int head_dim = 0;
    KvStore store = KvStore::F32;
    Fp8Spec k_spec, v_spec;  // used when store is FP8
    int64_t count = 0;       // entries currently held
    int64_t next_pos = 0;    // absolute position of the next append
    std::vector<T> k, v;     // [slot, kv_head, head_dim] when store == F32
    std::vector<uint8_t> k8, v8;  // same layout when store is FP8

    int64_t base_pos() const { return next_pos - count; }
    int64_t row_elems() const { return int64_t(n_kv_heads) * head_dim; }

    int64_t slot_of(int64_t pos) const {
        return window == kFullWindow ? pos : pos % window;
    }

    T k_at(int64_t pos, int kv_head, int d) const {
        int64_t i = slot_of(pos) * row_elems() + int64_t(kv_head) * head_dim + d;
        if (store == KvStore::F32) return k[size_t(i)];
        return T(fp8_decode_one(k8[size_t(i)], k_spec.format) * k_spec.scale);
    }
    T v_at(int64_t pos, int kv_head, int d) const {
        int64_t i = slot_of(pos) * row_elems() + int64_t(kv_head) * head_dim + d;
        if (store == KvStore::F32) return v[size_t(i)];
        return T(fp8_decode_one(v8[size_t(i)], v_spec.format) * v_spec.scale);
    }
};

template <typename T>
MambaStateT<T> make_mamba_state(const ModelConfig& cfg) {
    MambaStateT<T> st;
    st.conv_tail = TensorT<T>({cfg.d_inner, cfg.d_conv - 1});
    st.h = TensorT<T>({cfg.d_inner, cfg.d_state});
    return st;
}

template <typename T>
AttnCacheT<T> make_attn_cache(const ModelConfig& cfg, KvStore store = KvStore::F32,
                              Fp8Spec k_spec = {}, Fp8Spec v_spec = {}) {
    AttnCacheT<T> c;
    c.window = cfg.window;
    c.n_kv_heads = cfg.n_kv_heads;
    c.head_dim = cfg.head_dim;
    c.store = store;
    c.k_spec = k_spec;
    c.v_spec = v_spec;
    if (cfg.window != kFullWindow) {
        int64_t n = int64_t(cfg.window) * c.row_elems();
        if (store == KvStore::F32) {
            c.k.assign(size_t(n), T(0));
            c.v.assign(size_t(n), T(0));
        } else {
            c.k8.assign(size_t(n), 0);
            c.v8.assign(size_t(n), 0);
        }
    }
    return c;
}

// Appends one token's keys/values ([n_kv_heads, head_dim] each). In SLIDING
// mode the slot of the evicted position is overwritten in place.
template <typename T>
void cache_append(AttnCacheT<T>& cache, const TensorT<T>& k_row, const TensorT<T>& v_row) {
    std::vector<int64_t> want{cache.n_kv_heads, cache.head_dim};
    check(k_row.shape == want && v_row.shape == want, ErrKind::State,
          "cache_append row shape mismatch");
    int64_t n = cache.row_elems();
    if (cache.window == kFullWindow) {
        size_t need = size_t((cache.next_pos + 1) * n);
        if (cache.store == KvStore::F32) {
            cache.k.resize(need);
            cache.v.resize(need);
        } else {
            cache.k8.resize(need);
            cache.v8.resize(need);
        }
    }
    int64_t base = cache.slot_of(cache.next_pos) * n;
    if (cache.store == KvStore::F32) {
        for (int64_t i = 0; i < n; i++) {
            cache.k[size_t(base + i)] = k_row.data[size_t(i)];
            cache.v[size_t(base + i)] = v_row.data[size_t(i)];
        }
    } else {
        for (int64_t i = 0; i < n; i++) {
            cache.k8[size_t(base + i)] =
                fp8_encode_one(float(double(k_row.data[size_t(i)]) / cache.k_spec.scale),
                               cache.k_spec.format);
            cache.v8[size_t(base + i)] =
                fp8_encode_one(float(double(v_row.data[size_t(i)]) / cache.v_spec.scale),
                               cache.v_spec.format);
        }
    }
    cache.next_pos++;
    if (cache.window == kFullWindow || cache.count < cache.window) cache.count++;
}

struct MemoryReport {
    int64_t weight_bytes = 0;
    int64_t kv_bytes_per_token = 0;
    int64_t kv_bytes_total = 0;
    int64_t mamba_state_bytes = 0;
};

// Accounting dtype for cached K/V: 2 bytes ("bf16-equivalent") or 1 (FP8).
enum class KvAccounting { Bf16 = 2, Fp8 = 1 };

int64_t param_count(const ModelConfig& cfg);

// Exact integer arithmetic; weights are counted at 2 bytes per parameter
// (bf16-equivalent), mamba state at 4 (f32). kv_bytes_total assumes the
// window caps residency when finite.
MemoryReport memory_footprint(const ModelConfig& cfg, int64_t context_len, KvAccounting kv);

template <typename T>
struct SessionT {
    ModelConfig cfg;  // runtime geometry; may differ from params in window/theta
    std::vector<MambaStateT<T>> mamba;  // indexed by layer, M layers only
    std::vector<AttnCacheT<T>> attn;    // indexed by layer, A layers only
    int64_t pos = 0;
};

using Session = SessionT<float>;

template <typename T>
SessionT<T> make_session(const ModelConfig& cfg, KvStore store = KvStore::F32,
                         Fp8Spec k_spec = {}, Fp8Spec v_spec = {}) {
    validate(cfg);
    SessionT<T> s;
    s.cfg = cfg;
    s.mamba.resize(size_t(cfg.n_layers));
    s.attn.resize(size_t(cfg.n_layers));
    for (int i = 0; i < cfg.n_layers; i++) {
        if (cfg.layer_pattern[size_t(i)] == 'M')
            s.mamba[size_t(i)] = make_mamba_state<T>(cfg);
        else
            s.attn[size_t(i)] = make_attn_cache<T>(cfg, store, k_spec, v_spec);
    }
    return s;
}

// Current per-session state bytes under the accounting dtypes (mamba f32,
// cached K/V bf16-equivalent or fp8); reflects logical contents, so FULL
// caches grow and sliding caches plateau at their window.
template <typename T>
int64_t session_memory_bytes(const SessionT<T>& s) {
    int64_t total = 0;
    for (int i = 0; i < s.cfg.n_layers; i++) {
        if (s.cfg.layer_pattern[size_t(i)] == 'M') {
            const auto& m = s.mamba[size_t(i)];
            total += (m.conv_tail.numel() + m.h.numel()) * 4;
        } else {
            const auto& c = s.attn[size_t(i)];
            int bytes_per_elem = c.store == KvStore::F32 ? 2 : 1;
            total += 2 * c.count * c.row_elems() * bytes_per_elem;
        }
    }
    return total;
}

}  // namespace plc2
