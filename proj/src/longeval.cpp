#include "plc2/longeval.hpp"

#include "plc2/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <set>

namespace plc2 {

namespace {

// the non-marker vocabulary is split into digits (answers) and names
// (everything else), so planted digit runs are the only digit runs
struct Alphabet {
    int digit_lo, digit_n;
    int name_lo, name_n;
};

Alphabet split_vocab(int vocab) {
    check(vocab >= kCaseAlphabet + 4, ErrKind::Config,
          "vocab too small for retrieval cases (need at least 8 ids)");
    Alphabet a;
    a.digit_lo = kCaseAlphabet;
    a.digit_n = (vocab - kCaseAlphabet) / 2;
    a.name_lo = a.digit_lo + a.digit_n;
    a.name_n = vocab - a.name_lo;
    return a;
}

int draw(Rng& rng, int lo, int n) { return lo + int(rng.next_below(uint64_t(n))); }

std::vector<int> draw_digits(Rng& rng, const Alphabet& a, int len) {
    std::vector<int> out(static_cast<size_t>(len));
    for (int& t : out) t = draw(rng, a.digit_lo, a.digit_n);
    return out;
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

}  // namespace

RetrievalCase gen_phonebook(int64_t n_entries, int64_t query_index, uint64_t seed, int vocab) {
    Alphabet a = split_vocab(vocab);
    check(n_entries >= 1, ErrKind::Input, "phonebook needs at least one entry");
    check(query_index >= 0 && query_index < n_entries, ErrKind::Input,
          "query_index out of range");
    double name_space = std::pow(double(a.name_n), double(kPhonebookNameLen));
    check(double(n_entries) * 2.0 <= name_space, ErrKind::Config,
          "vocab too small for distinct names");

    Rng rng(seed);
    std::set<std::vector<int>> seen_names, seen_numbers;
    RetrievalCase rc;
    rc.task = RetrievalTask::Phonebook;
    for (int64_t e = 0; e < n_entries; e++) {
        std::vector<int> name(kPhonebookNameLen);
        do {
            for (int& t : name) t = draw(rng, a.name_lo, a.name_n);
        } while (!seen_names.insert(name).second);
        std::vector<int> number;
        do {
            number = draw_digits(rng, a, kPhonebookNumberLen);
        } while (!seen_numbers.insert(number).second);

        rc.prompt_tokens.push_back(kNameMark);
        rc.prompt_tokens.insert(rc.prompt_tokens.end(), name.begin(), name.end());
        rc.prompt_tokens.push_back(kNumMark);
        rc.prompt_tokens.insert(rc.prompt_tokens.end(), number.begin(), number.end());
        if (e == query_index) rc.answer_tokens = number;
    }
    int64_t query_at = query_index * kPhonebookEntryLen;
    rc.prompt_tokens.push_back(kQueryMark);
    for (int i = 0; i < kPhonebookNameLen; i++)
        rc.prompt_tokens.push_back(rc.prompt_tokens[size_t(query_at + 1 + i)]);
    rc.prompt_tokens.push_back(kNumMark);

    rc.context_len = int64_t(rc.prompt_tokens.size());
    int64_t answer_at = query_at + 1 + kPhonebookNameLen + 1;
    rc.depth = double(answer_at) / double(rc.context_len);
    return rc;
}

RetrievalCase gen_passkey(int64_t target_len, double depth, uint64_t seed, int vocab) {
    Alphabet a = split_vocab(vocab);
    check(a.digit_n >= kPasskeyLen, ErrKind::Config,
          "vocab too small for a distinct-digit key");
    check(depth >= 0.0 && depth <= 1.0, ErrKind::Config, "depth must be in [0,1]");
    check(target_len >= kPasskeyMinLen, ErrKind::Config,
          "target_len too short for key and instruction");

    // feasible key starts: after the instruction token and the key mark,
    // ending no later than the two-token question suffix
    const int64_t lo = 2;
    const int64_t hi = target_len - 2 - kPasskeyLen;
    const int64_t start = lo + int64_t(std::llround(depth * double(hi - lo)));

    Rng rng(seed);
    RetrievalCase rc;
    rc.task = RetrievalTask::Passkey;
    // all-distinct key digits keep each key token's predecessor unique, so
    // copy-style retrieval of the key is never ambiguous
    std::vector<int> pool(size_t(a.digit_n));
    for (int i = 0; i < a.digit_n; i++) pool[size_t(i)] = a.digit_lo + i;
    for (int i = 0; i < kPasskeyLen; i++) {
        int j = i + int(rng.next_below(uint64_t(a.digit_n - i)));
        std::swap(pool[size_t(i)], pool[size_t(j)]);
        rc.answer_tokens.push_back(pool[size_t(i)]);
    }
    rc.prompt_tokens.assign(size_t(target_len), 0);
    for (int64_t i = 0; i < target_len; i++)
        rc.prompt_tokens[size_t(i)] = draw(rng, a.name_lo, a.name_n);
    rc.prompt_tokens[0] = kNameMark;
    rc.prompt_tokens[size_t(start - 1)] = kNumMark;
    for (int i = 0; i < kPasskeyLen; i++)
        rc.prompt_tokens[size_t(start + i)] = rc.answer_tokens[size_t(i)];
    rc.prompt_tokens[size_t(target_len - 2)] = kQueryMark;
    rc.prompt_tokens[size_t(target_len - 1)] = kNumMark;

    rc.context_len = target_len;
    rc.depth = depth;
    return rc;
}

int score_exact(const std::vector<int>& output_tokens, const RetrievalCase& rc) {
    const int64_t ans = int64_t(rc.answer_tokens.size());
    if (ans == 0) return 0;
    const int64_t limit = std::min<int64_t>(64, int64_t(output_tokens.size()));
    for (int64_t i = 0; i + ans <= limit; i++) {
        bool hit = true;
        for (int64_t j = 0; j < ans && hit; j++)
            hit = output_tokens[size_t(i + j)] == rc.answer_tokens[size_t(j)];
        if (hit) return 1;
    }
    return 0;
}

AccuracyGrid run_grid(const CaseRunner& run, const GridSpec& spec) {
    check(bool(run), ErrKind::Input, "run_grid needs a case runner");
    check(!spec.lengths.empty() && !spec.depths.empty(), ErrKind::Input,
          "run_grid needs at least one length and depth");
    for (int64_t len : spec.lengths)
        check(len >= 1, ErrKind::Input, "lengths must be positive");
    for (double d : spec.depths)
        check(d >= 0.0 && d <= 1.0, ErrKind::Config, "depths must be in [0,1]");
    check(spec.n_trials >= 1, ErrKind::Input, "n_trials must be positive");
    split_vocab(spec.vocab);

    const int64_t nl = int64_t(spec.lengths.size());
    const int64_t nd = int64_t(spec.depths.size());
    const int64_t jobs = nl * nd * spec.n_trials;
    std::vector<int> scores(size_t(jobs), 0);
    parallel_for(jobs, [&](int64_t j) {
        const int64_t li = j / (nd * spec.n_trials);
        const int64_t di = (j / spec.n_trials) % nd;
        const int64_t trial = j % spec.n_trials;
        const int64_t length = spec.lengths[size_t(li)];
        const double depth = spec.depths[size_t(di)];
        uint64_t coords[3] = {uint64_t(li), uint64_t(di), uint64_t(trial)};
        uint64_t case_seed = hash64(coords, sizeof coords, spec.seed ^ 0x5851f42d4c957f2dull);
        try {
            RetrievalCase rc;
            if (spec.task == RetrievalTask::Phonebook) {
                int64_t n_entries =
                    std::max<int64_t>(1, (length - kPhonebookQueryLen) / kPhonebookEntryLen);
                int64_t qi = int64_t(std::llround(depth * double(n_entries - 1)));
                rc = gen_phonebook(n_entries, qi, case_seed, spec.vocab);
            } else {
                rc = gen_passkey(length, depth, case_seed, spec.vocab);
            }
            scores[size_t(j)] = score_exact(run(rc), rc);
        } catch (const Error& e) {
            fail(e.kind(), std::string(e.what()) + " (cell length=" + std::to_string(length) +
                               " depth=" + fmt("%g", depth) +
                               " trial=" + std::to_string(trial) + ")");
        }
    });

    AccuracyGrid grid;
    grid.lengths = spec.lengths;
    grid.depths = spec.depths;
    grid.n_trials = spec.n_trials;
    grid.acc.assign(size_t(nl), std::vector<double>(size_t(nd), 0.0));
    for (int64_t li = 0; li < nl; li++)
        for (int64_t di = 0; di < nd; di++) {
            double sum = 0.0;
            for (int64_t t = 0; t < spec.n_trials; t++)
                sum += scores[size_t((li * nd + di) * spec.n_trials + t)];
            grid.acc[size_t(li)][size_t(di)] = sum / double(spec.n_trials);
        }
    return grid;
}

CaseRunner model_runner(const ModelParams& p, int64_t max_new) {
    check(max_new >= 1, ErrKind::Config, "max_new must be positive");
    auto params = std::make_shared<ModelParams>(p);
    return [params, max_new](const RetrievalCase& rc) {
        Session s = make_session<float>(params->cfg);
        SamplerParams sp;  // temperature 0: greedy
        return generate(*params, s, rc.prompt_tokens, max_new, sp);
    };
}

double grid_mean(const AccuracyGrid& grid) {
    check(!grid.acc.empty(), ErrKind::Input, "empty grid");
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& row : grid.acc)
        for (double v : row) {
            sum += v;
            n++;
        }
    return sum / double(n);
}

std::string grid_table(const AccuracyGrid& grid) {
    std::string out = "length\\depth";
    for (double d : grid.depths) out += "  " + fmt("%6.3f", d);
    out += "\n";
    for (size_t li = 0; li < grid.lengths.size(); li++) {
        std::string row = std::to_string(grid.lengths[li]);
        row.resize(12, ' ');
        for (double v : grid.acc[li]) row += "  " + fmt("%6.3f", v);
        out += row + "\n";
    }
    return out;
}

std::string grid_csv(const AccuracyGrid& grid) {
    std::string out = "length,depth,accuracy,n\n";
    for (size_t li = 0; li < grid.lengths.size(); li++)
        for (size_t di = 0; di < grid.depths.size(); di++)
            out += std::to_string(grid.lengths[li]) + "," + fmt("%g", grid.depths[di]) + "," +
                   fmt("%g", grid.acc[li][di]) + "," + std::to_string(grid.n_trials) + "\n";
    return out;
}

double fluency_neg_logppl(const ModelParams& p, const std::vector<int>& tokens) {
    check(tokens.size() >= 2, ErrKind::Input, "fluency needs at least two tokens");
    Session s = make_session<float>(p.cfg);
    Tensor logits = model_forward(p, s, tokens);
    const int64_t v = logits.shape[1];
    double sum = 0.0;
    for (int64_t t = 0; t + 1 < int64_t(tokens.size()); t++) {
        double mx = -1e300;
        for (int64_t i = 0; i < v; i++) mx = std::max(mx, double(logits.at(t, i)));
        double lse = 0.0;
        for (int64_t i = 0; i < v; i++) lse += std::exp(double(logits.at(t, i)) - mx);
        lse = mx + std::log(lse);
        sum += double(logits.at(t, tokens[size_t(t + 1)])) - lse;
    }
    return sum / double(tokens.size() - 1);
}

int64_t select_checkpoint(const std::vector<SweepScore>& scores) {
    const int64_t n = int64_t(scores.size());
    check(n >= 1, ErrKind::Input, "no checkpoints to select from");
    double rmin = scores[0].retrieval, rmax = scores[0].retrieval;
    double fmin = scores[0].fluency, fmax = scores[0].fluency;
    for (const SweepScore& s : scores) {
        rmin = std::min(rmin, s.retrieval);
        rmax = std::max(rmax, s.retrieval);
        fmin = std::min(fmin, s.fluency);
        fmax = std::max(fmax, s.fluency);
    }
    auto norm = [](double x, double lo, double hi) {
        return hi == lo ? 0.5 : (x - lo) / (hi - lo);
    };
    int64_t best = 0;
    double best_sum = -1.0, best_min = -1.0;
    for (int64_t i = 0; i < n; i++) {
        double nr = norm(scores[size_t(i)].retrieval, rmin, rmax);
        double nf = norm(scores[size_t(i)].fluency, fmin, fmax);
        double sum = nr + nf, mn = std::min(nr, nf);
        const double eps = 1e-12;
        if (sum > best_sum + eps || (sum > best_sum - eps && mn > best_min + eps)) {
            best = i;
            best_sum = std::max(sum, best_sum);
            best_min = mn;
        }
    }
    return best;
}

SweepReport checkpoint_sweep(const std::vector<std::string>& paths, const GridSpec& spec,
                             const FluencyProxy& fluency) {
    check(!paths.empty(), ErrKind::Input, "checkpoint_sweep needs at least one checkpoint");
    check(bool(fluency), ErrKind::Input, "checkpoint_sweep needs a fluency proxy");
    SweepReport report;
    std::vector<SweepScore> scores;
    for (const std::string& path : paths) {
        ModelParams params;
        try {
            params = params_from_checkpoint(load_checkpoint(path));
        } catch (const Error& e) {
            fail(e.kind(), "checkpoint '" + path + "': " + e.what());
        }
        GridSpec local = spec;
        if (local.vocab == 0) local.vocab = params.cfg.vocab_size;
        SweepScore score;
        score.retrieval = grid_mean(run_grid(model_runner(params), local));
        score.fluency = fluency(params);
        scores.push_back(score);
        report.entries.push_back({path, score});
    }
    report.selected = select_checkpoint(scores);
    return report;
}

}  // namespace plc2
