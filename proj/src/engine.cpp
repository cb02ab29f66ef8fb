#include "plc2/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace plc2 {

int sample_token(const std::vector<double>& logits, const SamplerParams& sp, Rng& rng) {
    check(!logits.empty(), ErrKind::Input, "sample_token on empty logits");
    check(sp.temperature >= 0, ErrKind::Config, "temperature must be nonnegative");
    check(sp.top_p > 0 && sp.top_p <= 1.0, ErrKind::Config, "top_p must be in (0, 1]");

    if (sp.temperature == 0.0) {
        int best = 0;
        for (int i = 1; i < int(logits.size()); i++)
            if (logits[size_t(i)] > logits[size_t(best)]) best = i;  // ties keep the lowest id
        return best;
    }

    // softmax of logits / temperature
    std::vector<double> probs(logits.size());
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); i++) {
        probs[i] = std::exp((logits[i] - mx) / sp.temperature);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;

    // nucleus: smallest prefix of descending probs with mass >= top_p
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs[size_t(a)] != probs[size_t(b)]) return probs[size_t(a)] > probs[size_t(b)];
        return a < b;
    });
    double mass = 0.0;
    size_t keep = 0;
    while (keep < order.size()) {
        mass += probs[size_t(order[keep])];
        keep++;
        if (mass >= sp.top_p) break;
    }
    double u = rng.next_double() * mass;
    double acc = 0.0;
    for (size_t i = 0; i < keep; i++) {
        acc += probs[size_t(order[i])];
        if (u < acc) return order[i];
    }
    return order[keep - 1];  // numeric spill: take the last kept token
}

std::string render_chat(const std::vector<std::pair<std::string, std::string>>& messages) {
    static const char* kSep = "<|plamo:op|>";
    auto role_ok = [](const std::string& r) {
        return r == "system" || r == "user" || r == "assistant" || r == "input" || r == "output";
    };
    std::string out;
    for (const auto& [role, text] : messages) {
        check(role_ok(role), ErrKind::Input, "unknown chat role '" + role + "'");
        out += kSep;
        out += role;
        out += "\n";
        out += text;
    }
    out += kSep;
    out += "assistant\n";
    return out;
}

}  // namespace plc2
