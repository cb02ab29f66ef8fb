#pragma once

#include "plc2/model.hpp"

#include <string>
#include <utility>
#include <vector>

namespace plc2 {

struct SamplerParams {
    double temperature = 0.0;  // 0 -> greedy argmax (lowest id on ties)
    double top_p = 1.0;        // nucleus mass; smallest prefix >= top_p, renormalized
    uint64_t seed = 0;
};

// Samples one token from raw logits. Pure given the rng state.
int sample_token(const std::vector<double>& logits, const SamplerParams& sp, Rng& rng);

// Chat transcript rendering: every message is "<|plamo:op|>" + role + "\n" +
// text, and the assistant-start marker is appended for generation. Roles:
// system, user, assistant, input, output.
std::string render_chat(const std::vector<std::pair<std::string, std::string>>& messages);

template <typename T>
TensorT<T> last_row(const TensorT<T>& logits) {
    check(logits.ndim() == 2 && logits.shape[0] >= 1, ErrKind::Shape, "empty logits");
    TensorT<T> out({logits.shape[1]});
    for (int64_t i = 0; i < logits.shape[1]; i++)
        out.data[size_t(i)] = logits.at(logits.shape[0] - 1, i);
    return out;
}

// Sequence-parallel path: one scan over the whole span.
template <typename T>
TensorT<T> prefill(const ModelParamsT<T>& p, SessionT<T>& s, const std::vector<int>& tokens) {
    check(!tokens.empty(), ErrKind::Input, "prefill needs at least one token");
    return last_row(model_forward(p, s, tokens));
}

// Single-step recurrent path.
template <typename T>
TensorT<T> decode(const ModelParamsT<T>& p, SessionT<T>& s, int token) {
    return last_row(model_forward(p, s, std::vector<int>{token}));
}

// Scheduler over prefill spans and decode steps: chunks of size one take the
// decode path, larger chunks the prefill path, with all state carried across.
template <typename T>
TensorT<T> chunked_prefill(const ModelParamsT<T>& p, SessionT<T>& s,
                           const std::vector<int>& tokens, int64_t chunk_size) {
    check(chunk_size >= 1, ErrKind::Config, "chunk_size must be at least 1");
    check(!tokens.empty(), ErrKind::Input, "chunked_prefill needs at least one token");
    TensorT<T> last;
    for (size_t off = 0; off < tokens.size(); off += size_t(chunk_size)) {
        size_t end = std::min(tokens.size(), off + size_t(chunk_size));
        if (end - off == 1) {
            last = decode(p, s, tokens[off]);
        } else {
            last = prefill(p, s, std::vector<int>(tokens.begin() + long(off),
                                                  tokens.begin() + long(end)));
        }
    }
    return last;
}

// Prefills the prompt, then samples max_new tokens. Returns only the newly
// generated ids.
template <typename T>
std::vector<int> generate(const ModelParamsT<T>& p, SessionT<T>& s,
                          const std::vector<int>& prompt, int64_t max_new,
                          const SamplerParams& sp) {
    check(max_new >= 0, ErrKind::Input, "max_new must be nonnegative");
    Rng rng(sp.seed);
    TensorT<T> logits = prefill(p, s, prompt);
    std::vector<int> out;
    out.reserve(size_t(max_new));
    for (int64_t i = 0; i < max_new; i++) {
        std::vector<double> l(logits.data.size());
        for (size_t j = 0; j < l.size(); j++) l[j] = double(logits.data[j]);
        int tok = sample_token(l, sp, rng);
        out.push_back(tok);
        logits = decode(p, s, tok);
    }
    return out;
}

// Runs independent sessions in parallel; results are ordered by prompt
// index and are identical for any worker count (each session draws from its
// own seed stream).
template <typename T>
std::vector<std::vector<int>> run_batch(const ModelParamsT<T>& p, const ModelConfig& cfg,
                                        const std::vector<std::vector<int>>& prompts,
                                        int64_t max_new, const SamplerParams& sp,
                                        KvStore store = KvStore::F32) {
    std::vector<std::vector<int>> results(prompts.size());
    parallel_for(int64_t(prompts.size()), [&](int64_t i) {
        SessionT<T> s = make_session<T>(cfg, store);
        SamplerParams local = sp;
        local.seed = sp.seed + uint64_t(i);
        results[size_t(i)] = generate(p, s, prompts[size_t(i)], max_new, local);
    });
    return results;
}

}  // namespace plc2
