#pragma once

#include "plc2/checkpoint.hpp"

#include <string>
#include <vector>

namespace plc2 {

// One preference comparison with precomputed sequence log-probs (f64
// accumulation happens where the logits are produced; the loss kernel is
// model-agnostic).
struct PreferencePair {
    int prompt_len = 0;
    int chosen_len = 0;
    int rejected_len = 0;
    double policy_logp_chosen = 0.0;
    double policy_logp_rejected = 0.0;
    double ref_logp_chosen = 0.0;
    double ref_logp_rejected = 0.0;
    double reward_chosen = 0.0;
    double reward_rejected = 0.0;
};

struct DpoHyper {
    double beta = 0.1;       // preference-margin scale
    double alpha_len = 0.0;  // length-regularization weight, inside the sigmoid
    double gamma_sft = 0.0;  // chosen-response SFT (NLL) weight
};

struct DpoResult {
    double loss = 0.0;
    double d_policy_chosen = 0.0;  // partials wrt the four log-prob inputs
    double d_policy_rejected = 0.0;
    double d_ref_chosen = 0.0;
    double d_ref_rejected = 0.0;
};

// Length-regularized DPO with an added SFT term:
//   m = beta*[(lp_w - ref_w) - (lp_l - ref_l)] - alpha_len*(|y_w| - |y_l|)
//   loss = -log sigmoid(m) + gamma_sft * (-lp_w / |y_w|)
DpoResult dpo_loss(const PreferencePair& pair, const DpoHyper& hp);

// Keeps pairs with reward_chosen - reward_rejected >= min_gap, stable order.
std::vector<PreferencePair> filter_by_reward_gap(const std::vector<PreferencePair>& pairs,
                                                 double min_gap);

// Elementwise weighted mean of f32 checkpoints (f64 accumulation). Tensor
// tables must match exactly and the lambdas must sum to 1 within 1e-9.
Checkpoint merge_weighted(const std::vector<Checkpoint>& ckpts,
                          const std::vector<double>& lambdas);

// One JSON object per line, fields named as in PreferencePair.
std::vector<PreferencePair> load_pairs(const std::string& path);
void save_pairs(const std::vector<PreferencePair>& pairs, const std::string& path);

}  // namespace plc2
