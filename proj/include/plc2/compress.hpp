#pragma once

#include "plc2/checkpoint.hpp"
#include "plc2/params.hpp"
#include "plc2/tensor.hpp"

#include <vector>

namespace plc2 {

// Activation-importance report. Per-layer vectors are empty for layers of
// the other kind; embed channel scores aggregate the residual stream over
// every block output.
struct ImportanceReport {
    std::vector<std::vector<float>> mlp_neurons;     // [layer][d_ff]
    std::vector<std::vector<float>> heads;           // [layer][n_heads], attn layers only
    std::vector<std::vector<float>> mamba_channels;  // [layer][d_inner], mamba layers only
    std::vector<float> embed_channels;               // [d_model]
};

struct PruneSpec {
    int keep_d_ff = 0;     // 0 keeps the original count
    int keep_heads = 0;    // must stay a multiple of the GQA group size
    int keep_d_inner = 0;
    int keep_d_model = 0;
};

// Function-preserving initialization of a wider/deeper model from a smaller
// one: depth grows by repeating the block sequence; width grows by an
// integer factor, duplicating units (highest index first) and dividing the
// consuming columns by the duplication count so every sum is unchanged.
ModelParams reuse_init(const ModelParams& small, const ModelConfig& big_cfg);
Checkpoint reuse_init(const Checkpoint& small, const ModelConfig& big_cfg);

// Mean L2 norm of each unit's activation over the calibration positions:
// mlp neurons after the gated activation, attention heads at the mixer
// output (pre-merge), mamba channels after gating, embed channels over the
// residual stream.
ImportanceReport importance_scores(const ModelParams& p, const std::vector<int>& calib_tokens);

// Keeps the top-scoring units per structural group (ties to the lower
// index) and slices every affected tensor. Head pruning drops whole GQA
// groups so the query/kv ratio is preserved.
ModelParams prune_structured(const ModelParams& p, const ImportanceReport& rep,
                             const PruneSpec& spec);

struct DistillResult {
    double loss = 0.0;
    TensorD grad;  // d loss / d student_logits, [seq, vocab]
};

// Top-k logit distillation: per position, the teacher's k most probable
// tokens form the support; teacher probabilities are renormalized over it
// and compared against the student's full-vocab log-softmax gathered there.
// Loss is the mean over positions; the gradient is returned in closed form.
DistillResult distill_topk_loss(const TensorD& student_logits, const TensorD& teacher_logits,
                                int k);

}  // namespace plc2
