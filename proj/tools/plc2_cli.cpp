// plc2 command line: lifecycle tooling around the checkpoint container.
// Subcommands cover initialization, generation, long-context evaluation,
// quantization, pruning, distillation measurement, preference tuning,
// merging, corpus dedup, and inspection. All outputs are deterministic
// given --seed, and files are written atomically.

#include "CLI11.hpp"
#include "plc2/compress.hpp"
#include "plc2/dedup.hpp"
#include "plc2/engine.hpp"
#include "plc2/longeval.hpp"
#include "plc2/prefkit.hpp"
#include "plc2/quant.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace plc2;

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(bool(in), ErrKind::Io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// token and numeric list files/flags: decimal values separated by
// whitespace or commas
std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(cur);
    return parts;
}

std::vector<int> parse_ids(const std::string& text, const std::string& what) {
    std::vector<int> out;
    for (const std::string& s : split_list(text)) {
        size_t pos = 0;
        long v = 0;
        try {
            v = std::stol(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        check(pos == s.size(), ErrKind::Format, what + ": bad token id '" + s + "'");
        out.push_back(int(v));
    }
    return out;
}

std::vector<double> parse_reals(const std::string& text, const std::string& what) {
    std::vector<double> out;
    for (const std::string& s : split_list(text)) {
        size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        check(pos == s.size(), ErrKind::Format, what + ": bad number '" + s + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<int> read_token_file(const std::string& path) {
    return parse_ids(read_text_file(path), path);
}

ModelParams load_params(const std::string& path) {
    return params_from_checkpoint(dequantize_checkpoint(load_checkpoint(path)));
}

int64_t entry_bytes(const TensorEntry& e) {
    return int64_t(e.data.size() + 4 * e.scales.size() + 4 * e.zeros.size());
}

void write_text_atomic(const std::string& path, const std::string& text) {
    atomic_write_file(path, text.data(), text.size());
}

KvStore kv_store_from_name(const std::string& name) {
    if (name == "f32") return KvStore::F32;
    if (name == "fp8e4m3") return KvStore::Fp8e4m3;
    if (name == "fp8e5m2") return KvStore::Fp8e5m2;
    fail(ErrKind::Usage, "unknown kv store '" + name + "' (f32, fp8e4m3, fp8e5m2)");
}

// ---------------------------------------------------------------- init

struct InitOpts {
    std::string preset, out;
    uint64_t seed = 0;
};

void cmd_init(const InitOpts& o) {
    ModelConfig cfg = preset_config(o.preset);
    ModelParams p = init_params(cfg, o.seed);
    save_checkpoint(params_to_checkpoint(p), o.out);
    std::printf("wrote %s: pattern %s, %lld params\n", o.out.c_str(),
                cfg.layer_pattern.c_str(), (long long)param_count(cfg));
}

// ----------------------------------------------------------------- run

struct RunOpts {
    std::string model, prompt_tokens, prompt_file, kv = "f32";
    int64_t max_new = 16, chunk = 0;
    double temperature = 0.0, top_p = 1.0;
    uint64_t seed = 0;
    int window = 0;
    double rope_theta = 0.0;
};

void cmd_run(const RunOpts& o) {
    check(o.prompt_tokens.empty() != o.prompt_file.empty(), ErrKind::Usage,
          "provide exactly one of --prompt-tokens or --prompt-file");
    std::vector<int> prompt = o.prompt_tokens.empty()
                                  ? read_token_file(o.prompt_file)
                                  : parse_ids(o.prompt_tokens, "--prompt-tokens");
    check(!prompt.empty(), ErrKind::Input, "empty prompt");

    ModelParams p = load_params(o.model);
    ModelConfig run_cfg = p.cfg;
    if (o.window != 0 || o.rope_theta != 0.0) {
        int w = o.window != 0 ? o.window : run_cfg.window;
        double t = o.rope_theta != 0.0 ? o.rope_theta : run_cfg.rope_theta;
        run_cfg = extend_context(run_cfg, w, t);
    }
    Session s = make_session<float>(run_cfg, kv_store_from_name(o.kv));

    int64_t chunk = o.chunk > 0 ? o.chunk : int64_t(prompt.size());
    Tensor logits = chunked_prefill(p, s, prompt, chunk);
    SamplerParams sp{o.temperature, o.top_p, o.seed};
    Rng rng(sp.seed);
    std::string line;
    for (int64_t i = 0; i < o.max_new; i++) {
        std::vector<double> l(logits.data.begin(), logits.data.end());
        int tok = sample_token(l, sp, rng);
        if (!line.empty()) line += " ";
        line += std::to_string(tok);
        if (i + 1 < o.max_new) logits = decode(p, s, tok);
    }
    std::printf("%s\n", line.c_str());
}

// -------------------------------------------------------- eval-longctx

struct EvalOpts {
    std::string model, task = "phonebook", lengths, depths, csv;
    int64_t trials = 1, max_new = 64;
    uint64_t seed = 0;
    int vocab = 0;
};

void cmd_eval(const EvalOpts& o) {
    ModelParams p = load_params(o.model);
    GridSpec spec;
    if (o.task == "phonebook") {
        spec.task = RetrievalTask::Phonebook;
    } else if (o.task == "passkey") {
        spec.task = RetrievalTask::Passkey;
    } else {
        fail(ErrKind::Usage, "unknown task '" + o.task + "' (phonebook, passkey)");
    }
    for (double v : parse_reals(o.lengths, "--lengths")) spec.lengths.push_back(int64_t(v));
    spec.depths = parse_reals(o.depths, "--depths");
    spec.n_trials = o.trials;
    spec.seed = o.seed;
    spec.vocab = o.vocab != 0 ? o.vocab : p.cfg.vocab_size;

    AccuracyGrid grid = run_grid(model_runner(p, o.max_new), spec);
    std::printf("%s", grid_table(grid).c_str());
    std::printf("mean accuracy: %s\n", fmt("%.6g", grid_mean(grid)).c_str());
    if (!o.csv.empty()) write_text_atomic(o.csv, grid_csv(grid));
}

// ------------------------------------------------------------ quantize

struct QuantOpts {
    std::string model, scheme = "gptq", calib, out;
    int group_size = 128;
    double damp = 0.01;
};

void cmd_quantize(const QuantOpts& o) {
    Checkpoint ck = load_checkpoint(o.model);
    std::vector<int> calib;
    if (o.scheme == "gptq") {
        check(!o.calib.empty(), ErrKind::Usage, "gptq needs --calib token file");
        calib = read_token_file(o.calib);
    } else {
        check(o.scheme == "rtn", ErrKind::Usage,
              "unknown scheme '" + o.scheme + "' (gptq, rtn)");
    }
    Checkpoint q = quantize_checkpoint(ck, calib, o.group_size, o.damp);
    save_checkpoint(q, o.out);

    int64_t quantized = 0, total = 0, n_quant = 0;
    for (const auto& [name, e] : q.tensors) {
        total += entry_bytes(e);
        if (e.dtype != Dtype::F32) {
            quantized += entry_bytes(e);
            n_quant++;
        }
    }
    int64_t baseline = param_count(q.config) * 2;
    std::printf("wrote %s: %lld of %zu tensors quantized\n", o.out.c_str(),
                (long long)n_quant, q.tensors.size());
    std::printf("weight bytes: %lld (quantized %lld), ratio %s vs 2-byte baseline\n",
                (long long)total, (long long)quantized,
                fmt("%.4f", double(total) / double(baseline)).c_str());
}

// --------------------------------------------------------------- prune

struct PruneOpts {
    std::string model, calib, out, report;
    int keep_d_ff = 0, keep_heads = 0, keep_d_inner = 0, keep_d_model = 0;
};

std::string importance_table(const ImportanceReport& rep) {
    std::string out;
    auto row = [&](const std::string& label, const std::vector<float>& v) {
        if (v.empty()) return;
        out += label;
        for (float x : v) out += " " + fmt("%.6g", double(x));
        out += "\n";
    };
    row("embed_channels:", rep.embed_channels);
    for (size_t l = 0; l < rep.mlp_neurons.size(); l++) {
        std::string tag = "layer " + std::to_string(l) + " ";
        row(tag + "mlp_neurons:", rep.mlp_neurons[l]);
        row(tag + "heads:", rep.heads[l]);
        row(tag + "mamba_channels:", rep.mamba_channels[l]);
    }
    return out;
}

void cmd_prune(const PruneOpts& o) {
    ModelParams p = load_params(o.model);
    std::vector<int> calib = read_token_file(o.calib);
    ImportanceReport rep = importance_scores(p, calib);
    if (!o.report.empty()) write_text_atomic(o.report, importance_table(rep));

    PruneSpec spec;
    spec.keep_d_ff = o.keep_d_ff;
    spec.keep_heads = o.keep_heads;
    spec.keep_d_inner = o.keep_d_inner;
    spec.keep_d_model = o.keep_d_model;
    ModelParams pruned = prune_structured(p, rep, spec);
    save_checkpoint(params_to_checkpoint(pruned), o.out);
    std::printf("wrote %s: d_ff %d -> %d, heads %d -> %d, d_inner %d -> %d, d_model %d -> %d\n",
                o.out.c_str(), p.cfg.d_ff, pruned.cfg.d_ff, p.cfg.n_heads, pruned.cfg.n_heads,
                p.cfg.d_inner, pruned.cfg.d_inner, p.cfg.d_model, pruned.cfg.d_model);
}

// ------------------------------------------------------------- distill

struct DistillOpts {
    std::string teacher, student, tokens;
    int k = 128;
};

void cmd_distill(const DistillOpts& o) {
    ModelParams teacher = load_params(o.teacher);
    ModelParams student = load_params(o.student);
    std::vector<int> tokens = read_token_file(o.tokens);
    check(!tokens.empty(), ErrKind::Input, "empty token file");

    Session ts = make_session<float>(teacher.cfg);
    Session ss = make_session<float>(student.cfg);
    TensorD tl = model_forward(teacher, ts, tokens).cast<double>();
    TensorD sl = model_forward(student, ss, tokens).cast<double>();
    DistillResult r = distill_topk_loss(sl, tl, o.k);
    std::printf("positions: %zu, k: %d\n", tokens.size(), o.k);
    std::printf("distill loss: %s\n", fmt("%.9g", r.loss).c_str());
}

// ----------------------------------------------------------------- dpo

struct DpoOpts {
    std::string pairs, out;
    double beta = 0.0, alpha_len = 0.0, gamma_sft = 0.0, min_gap = -1.0;
};

void cmd_dpo(const DpoOpts& o) {
    std::vector<PreferencePair> pairs = load_pairs(o.pairs);
    size_t before = pairs.size();
    if (o.min_gap >= 0.0) pairs = filter_by_reward_gap(pairs, o.min_gap);
    check(!pairs.empty(), ErrKind::Input, "no pairs left to score");

    DpoHyper hp;
    hp.beta = o.beta;
    hp.alpha_len = o.alpha_len;
    hp.gamma_sft = o.gamma_sft;
    double loss = 0.0, dpc = 0.0, dpr = 0.0, drc = 0.0, drr = 0.0;
    for (const PreferencePair& pair : pairs) {
        DpoResult r = dpo_loss(pair, hp);
        loss += r.loss;
        dpc += r.d_policy_chosen;
        dpr += r.d_policy_rejected;
        drc += r.d_ref_chosen;
        drr += r.d_ref_rejected;
    }
    double n = double(pairs.size());
    std::printf("pairs: %zu (from %zu)\n", pairs.size(), before);
    std::printf("mean loss: %s\n", fmt("%.9g", loss / n).c_str());
    std::printf("mean grads: policy_chosen=%s policy_rejected=%s ref_chosen=%s ref_rejected=%s\n",
                fmt("%.9g", dpc / n).c_str(), fmt("%.9g", dpr / n).c_str(),
                fmt("%.9g", drc / n).c_str(), fmt("%.9g", drr / n).c_str());
    if (!o.out.empty()) {
        save_pairs(pairs, o.out);
        std::printf("wrote %s\n", o.out.c_str());
    }
}

// --------------------------------------------------------------- merge

struct MergeOpts {
    std::string inputs, weights, out;
};

void cmd_merge(const MergeOpts& o) {
    std::vector<Checkpoint> ckpts;
    for (const std::string& path : split_list(o.inputs)) ckpts.push_back(load_checkpoint(path));
    std::vector<double> lambdas = parse_reals(o.weights, "--weights");
    Checkpoint merged = merge_weighted(ckpts, lambdas);
    save_checkpoint(merged, o.out);
    std::printf("merged %zu checkpoints -> %s\n", ckpts.size(), o.out.c_str());
}

// --------------------------------------------------------------- dedup

struct DedupOpts {
    std::string in, out;
    int ngram = 13, perms = 128;
    double threshold = 0.8;
    uint64_t seed = 0;
};

void cmd_dedup(const DedupOpts& o) {
    std::string text = read_text_file(o.in);
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) lines.push_back(cur);

    // documents are newline-escaped one per line; dedup sees the unescaped
    // text, the output keeps the original escaped form
    std::vector<std::string> docs;
    for (const std::string& line : lines) {
        std::string doc;
        for (size_t i = 0; i < line.size(); i++) {
            if (line[i] == '\\' && i + 1 < line.size() && line[i + 1] == 'n') {
                doc.push_back('\n');
                i++;
            } else if (line[i] == '\\' && i + 1 < line.size() && line[i + 1] == '\\') {
                doc.push_back('\\');
                i++;
            } else {
                doc.push_back(line[i]);
            }
        }
        docs.push_back(doc);
    }

    DedupConfig cfg;
    cfg.ngram = o.ngram;
    cfg.num_perms = o.perms;
    cfg.threshold = o.threshold;
    cfg.seed = o.seed;
    std::vector<int64_t> kept = dedup_corpus(docs, cfg);

    std::string report;
    for (int64_t k : kept)
        report += std::to_string(k + 1) + "\t" + lines[size_t(k)] + "\n";
    write_text_atomic(o.out, report);
    std::printf("kept %zu of %zu documents -> %s\n", kept.size(), docs.size(), o.out.c_str());
}

// ------------------------------------------------------------- inspect

struct InspectOpts {
    std::string model, kv = "bf16";
    int64_t context = 32768;
};

void cmd_inspect(const InspectOpts& o) {
    Checkpoint ck = load_checkpoint(o.model);
    const ModelConfig& cfg = ck.config;
    KvAccounting kv;
    if (o.kv == "bf16") {
        kv = KvAccounting::Bf16;
    } else if (o.kv == "fp8") {
        kv = KvAccounting::Fp8;
    } else {
        fail(ErrKind::Usage, "unknown kv accounting '" + o.kv + "' (bf16, fp8)");
    }

    std::printf("config: %s\n", config_to_json(cfg).c_str());
    int64_t params = param_count(cfg);
    std::printf("params: %lld (2-byte baseline %lld bytes)\n", (long long)params,
                (long long)(params * 2));

    int64_t total = 0;
    std::printf("tensors: %zu\n", ck.tensors.size());
    for (const auto& [name, e] : ck.tensors) {
        int64_t bytes = entry_bytes(e);
        total += bytes;
        std::printf("  %s %s %s %lld bytes\n", name.c_str(), dtype_name(e.dtype),
                    shape_str(e.shape).c_str(), (long long)bytes);
    }
    std::printf("weight payload: %lld bytes, ratio %s vs 2-byte baseline\n", (long long)total,
                fmt("%.4f", double(total) / double(params * 2)).c_str());

    MemoryReport mem = memory_footprint(cfg, o.context, kv);
    std::printf("memory at context %lld (kv %s):\n", (long long)o.context, o.kv.c_str());
    std::printf("  weight_bytes: %lld\n", (long long)mem.weight_bytes);
    std::printf("  kv_bytes_per_token: %lld\n", (long long)mem.kv_bytes_per_token);
    std::printf("  kv_bytes_total: %lld\n", (long long)mem.kv_bytes_total);
    std::printf("  mamba_state_bytes: %lld\n", (long long)mem.mamba_state_bytes);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"plc2: hybrid mamba/attention model lifecycle tool"};
    app.require_subcommand(1);

    InitOpts init_o;
    auto* init_c = app.add_subcommand("init", "create a seeded random checkpoint from a preset");
    init_c->add_option("--preset", init_o.preset, "preset name")->required();
    init_c->add_option("--out", init_o.out, "output checkpoint path")->required();
    init_c->add_option("--seed", init_o.seed, "rng seed");
    init_c->callback([&] { cmd_init(init_o); });

    RunOpts run_o;
    auto* run_c = app.add_subcommand("run", "generate tokens from a prompt");
    run_c->add_option("--model", run_o.model, "checkpoint path")->required();
    run_c->add_option("--prompt-tokens", run_o.prompt_tokens, "comma/space separated token ids");
    run_c->add_option("--prompt-file", run_o.prompt_file, "token id file");
    run_c->add_option("--max-new", run_o.max_new, "tokens to generate");
    run_c->add_option("--temperature", run_o.temperature, "0 = greedy");
    run_c->add_option("--top-p", run_o.top_p, "nucleus mass");
    run_c->add_option("--seed", run_o.seed, "sampler seed");
    run_c->add_option("--window", run_o.window, "extend attention window");
    run_c->add_option("--rope-theta", run_o.rope_theta, "extend rope base frequency");
    run_c->add_option("--chunk", run_o.chunk, "prefill chunk size (0 = whole prompt)");
    run_c->add_option("--kv", run_o.kv, "kv cache store: f32, fp8e4m3, fp8e5m2");
    run_c->callback([&] { cmd_run(run_o); });

    EvalOpts eval_o;
    auto* eval_c = app.add_subcommand("eval-longctx", "retrieval accuracy grid");
    eval_c->add_option("--model", eval_o.model, "checkpoint path")->required();
    eval_c->add_option("--task", eval_o.task, "phonebook or passkey");
    eval_c->add_option("--lengths", eval_o.lengths, "comma separated context lengths")->required();
    eval_c->add_option("--depths", eval_o.depths, "comma separated depths in [0,1]")->required();
    eval_c->add_option("--trials", eval_o.trials, "cases per cell");
    eval_c->add_option("--seed", eval_o.seed, "case seed");
    eval_c->add_option("--vocab", eval_o.vocab, "case vocabulary (0 = model's)");
    eval_c->add_option("--max-new", eval_o.max_new, "decode budget per case");
    eval_c->add_option("--csv", eval_o.csv, "also write the grid as csv");
    eval_c->callback([&] { cmd_eval(eval_o); });

    QuantOpts quant_o;
    auto* quant_c = app.add_subcommand("quantize", "int4 weight quantization");
    quant_c->add_option("--model", quant_o.model, "checkpoint path")->required();
    quant_c->add_option("--scheme", quant_o.scheme, "gptq or rtn");
    quant_c->add_option("--calib", quant_o.calib, "calibration token file (gptq)");
    quant_c->add_option("--out", quant_o.out, "output checkpoint path")->required();
    quant_c->add_option("--group-size", quant_o.group_size, "quantization group width");
    quant_c->add_option("--damp", quant_o.damp, "hessian damping fraction");
    quant_c->callback([&] { cmd_quantize(quant_o); });

    PruneOpts prune_o;
    auto* prune_c = app.add_subcommand("prune", "structured importance pruning");
    prune_c->add_option("--model", prune_o.model, "checkpoint path")->required();
    prune_c->add_option("--calib", prune_o.calib, "calibration token file")->required();
    prune_c->add_option("--out", prune_o.out, "output checkpoint path")->required();
    prune_c->add_option("--report", prune_o.report, "write importance table here");
    prune_c->add_option("--keep-d-ff", prune_o.keep_d_ff, "mlp neurons to keep (0 = all)");
    prune_c->add_option("--keep-heads", prune_o.keep_heads, "query heads to keep (0 = all)");
    prune_c->add_option("--keep-d-inner", prune_o.keep_d_inner, "mamba channels to keep (0 = all)");
    prune_c->add_option("--keep-d-model", prune_o.keep_d_model, "embed channels to keep (0 = all)");
    prune_c->callback([&] { cmd_prune(prune_o); });

    DistillOpts dist_o;
    auto* dist_c = app.add_subcommand("distill", "top-k distillation loss between two models");
    dist_c->add_option("--teacher", dist_o.teacher, "teacher checkpoint")->required();
    dist_c->add_option("--student", dist_o.student, "student checkpoint")->required();
    dist_c->add_option("--tokens", dist_o.tokens, "evaluation token file")->required();
    dist_c->add_option("--k", dist_o.k, "teacher support size");
    dist_c->callback([&] { cmd_distill(dist_o); });

    DpoOpts dpo_o;
    auto* dpo_c = app.add_subcommand("dpo", "preference loss over a pair file");
    dpo_c->add_option("--pairs", dpo_o.pairs, "jsonl preference pairs")->required();
    dpo_c->add_option("--beta", dpo_o.beta, "preference temperature")->required();
    dpo_c->add_option("--alpha-len", dpo_o.alpha_len, "length penalty")->required();
    dpo_c->add_option("--gamma-sft", dpo_o.gamma_sft, "sft anchor weight")->required();
    dpo_c->add_option("--min-gap", dpo_o.min_gap, "reward gap filter (negative = off)");
    dpo_c->add_option("--out", dpo_o.out, "write the filtered pairs here");
    dpo_c->callback([&] { cmd_dpo(dpo_o); });

    MergeOpts merge_o;
    auto* merge_c = app.add_subcommand("merge", "weighted checkpoint average");
    merge_c->add_option("--inputs", merge_o.inputs, "comma separated checkpoints")->required();
    merge_c->add_option("--weights", merge_o.weights, "comma separated simplex weights")->required();
    merge_c->add_option("--out", merge_o.out, "output checkpoint path")->required();
    merge_c->callback([&] { cmd_merge(merge_o); });

    DedupOpts dedup_o;
    auto* dedup_c = app.add_subcommand("dedup", "minhash near-duplicate removal");
    dedup_c->add_option("--in", dedup_o.in, "one document per line, newline-escaped")->required();
    dedup_c->add_option("--out", dedup_o.out, "kept line numbers and text")->required();
    dedup_c->add_option("--ngram", dedup_o.ngram, "shingle width in characters");
    dedup_c->add_option("--perms", dedup_o.perms, "signature permutations");
    dedup_c->add_option("--threshold", dedup_o.threshold, "jaccard similarity threshold");
    dedup_c->add_option("--seed", dedup_o.seed, "hash seed");
    dedup_c->callback([&] { cmd_dedup(dedup_o); });

    InspectOpts ins_o;
    auto* ins_c = app.add_subcommand("inspect", "config, tensor table, memory accounting");
    ins_c->add_option("model", ins_o.model, "checkpoint path")->required();
    ins_c->add_option("--context", ins_o.context, "context length for kv accounting");
    ins_c->add_option("--kv", ins_o.kv, "kv accounting dtype: bf16 or fp8");
    ins_c->callback([&] { cmd_inspect(ins_o); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.kind() == ErrKind::Usage ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
