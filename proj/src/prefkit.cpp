#include "plc2/prefkit.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace plc2 {

namespace {

void validate_pair(const PreferencePair& p) {
    check(p.prompt_len > 0 && p.chosen_len > 0 && p.rejected_len > 0, ErrKind::Input,
          "sequence lengths must be positive");
    check(p.policy_logp_chosen <= 0 && p.policy_logp_rejected <= 0 && p.ref_logp_chosen <= 0 &&
              p.ref_logp_rejected <= 0,
          ErrKind::Input, "sequence log-probs must be <= 0");
}

void validate_hyper(const DpoHyper& hp) {
    check(hp.beta > 0, ErrKind::Config, "beta must be positive");
    check(hp.alpha_len >= 0, ErrKind::Config, "alpha_len must be nonnegative");
    check(hp.gamma_sft >= 0, ErrKind::Config, "gamma_sft must be nonnegative");
}

// -log sigmoid(m), stable on both tails
double softplus_neg(double m) {
    if (m >= 0) return std::log1p(std::exp(-m));
    return -m + std::log1p(std::exp(m));
}

// sigmoid(-m) without overflow
double sigmoid_neg(double m) {
    if (m >= 0) {
        double e = std::exp(-m);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(m));
}

}  // namespace

DpoResult dpo_loss(const PreferencePair& pair, const DpoHyper& hp) {
    validate_pair(pair);
    validate_hyper(hp);

    const double ratio_w = pair.policy_logp_chosen - pair.ref_logp_chosen;
    const double ratio_l = pair.policy_logp_rejected - pair.ref_logp_rejected;
    const double m = hp.beta * (ratio_w - ratio_l) -
                     hp.alpha_len * double(pair.chosen_len - pair.rejected_len);

    DpoResult r;
    r.loss = softplus_neg(m) + hp.gamma_sft * (-pair.policy_logp_chosen / pair.chosen_len);

    // d(-log sigmoid(m))/dm = -sigmoid(-m)
    const double dm = -sigmoid_neg(m);
    r.d_policy_chosen = dm * hp.beta - hp.gamma_sft / pair.chosen_len;
    r.d_policy_rejected = -dm * hp.beta;
    r.d_ref_chosen = -dm * hp.beta;
    r.d_ref_rejected = dm * hp.beta;
    return r;
}

std::vector<PreferencePair> filter_by_reward_gap(const std::vector<PreferencePair>& pairs,
                                                 double min_gap) {
    check(min_gap >= 0, ErrKind::Input, "min_gap must be nonnegative");
    std::vector<PreferencePair> out;
    for (const PreferencePair& p : pairs)
        if (p.reward_chosen - p.reward_rejected >= min_gap) out.push_back(p);
    return out;
}

Checkpoint merge_weighted(const std::vector<Checkpoint>& ckpts,
                          const std::vector<double>& lambdas) {
    check(!ckpts.empty(), ErrKind::Input, "merge needs at least one checkpoint");
    check(lambdas.size() == ckpts.size(), ErrKind::Input, "one lambda per checkpoint");
    double sum = 0;
    for (double l : lambdas) sum += l;
    check(std::abs(sum - 1.0) <= 1e-9, ErrKind::Input, "lambdas must sum to 1");

    const Checkpoint& first = ckpts[0];
    for (const Checkpoint& ck : ckpts) {
        check(ck.tensors.size() == first.tensors.size(), ErrKind::Schema,
              "checkpoints have different tensor tables");
        for (const auto& [name, e] : first.tensors) {
            auto it = ck.tensors.find(name);
            check(it != ck.tensors.end(), ErrKind::Schema, "tensor '" + name + "' missing");
            check(it->second.dtype == Dtype::F32, ErrKind::Schema,
                  "merge requires f32 tensors, got " +
                      std::string(dtype_name(it->second.dtype)) + " for '" + name + "'");
            check(it->second.shape == e.shape, ErrKind::Schema,
                  "shape mismatch for '" + name + "'");
        }
    }

    Checkpoint out;
    out.config = first.config;
    for (const auto& [name, e] : first.tensors) {
        std::vector<double> acc(size_t(e.numel()), 0.0);
        for (size_t i = 0; i < ckpts.size(); i++) {
            Tensor t = ckpts[i].tensors.at(name).as_f32();
            for (size_t j = 0; j < acc.size(); j++) acc[j] += lambdas[i] * double(t.data[j]);
        }
        Tensor merged(e.shape);
        for (size_t j = 0; j < acc.size(); j++) merged.data[j] = float(acc[j]);
        out.tensors[name] = TensorEntry::from_f32(merged);
    }
    return out;
}

std::vector<PreferencePair> load_pairs(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), ErrKind::Io, "cannot open '" + path + "'");
    std::vector<PreferencePair> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrKind::Format, "line " + std::to_string(lineno) + ": " + e.what());
        }
        PreferencePair p;
        try {
            p.prompt_len = j.at("prompt_len").get<int>();
            p.chosen_len = j.at("chosen_len").get<int>();
            p.rejected_len = j.at("rejected_len").get<int>();
            p.policy_logp_chosen = j.at("policy_logp_chosen").get<double>();
            p.policy_logp_rejected = j.at("policy_logp_rejected").get<double>();
            p.ref_logp_chosen = j.at("ref_logp_chosen").get<double>();
            p.ref_logp_rejected = j.at("ref_logp_rejected").get<double>();
            p.reward_chosen = j.at("reward_chosen").get<double>();
            p.reward_rejected = j.at("reward_rejected").get<double>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrKind::Format, "line " + std::to_string(lineno) + ": " + e.what());
        }
        check(p.prompt_len > 0 && p.chosen_len > 0 && p.rejected_len > 0, ErrKind::Format,
              "line " + std::to_string(lineno) + ": sequence lengths must be positive");
        check(p.policy_logp_chosen <= 0 && p.policy_logp_rejected <= 0 &&
                  p.ref_logp_chosen <= 0 && p.ref_logp_rejected <= 0,
              ErrKind::Format, "line " + std::to_string(lineno) + ": log-probs must be <= 0");
        out.push_back(p);
    }
    return out;
}

void save_pairs(const std::vector<PreferencePair>& pairs, const std::string& path) {
    std::ostringstream os;
    for (const PreferencePair& p : pairs) {
        nlohmann::json j;
        j["prompt_len"] = p.prompt_len;
        j["chosen_len"] = p.chosen_len;
        j["rejected_len"] = p.rejected_len;
        j["policy_logp_chosen"] = p.policy_logp_chosen;
        j["policy_logp_rejected"] = p.policy_logp_rejected;
        j["ref_logp_chosen"] = p.ref_logp_chosen;
        j["ref_logp_rejected"] = p.ref_logp_rejected;
        j["reward_chosen"] = p.reward_chosen;
        j["reward_rejected"] = p.reward_rejected;
        os << j.dump() << "\n";
    }
    std::string s = os.str();
    atomic_write_file(path, s.data(), s.size());
}

}  // namespace plc2
