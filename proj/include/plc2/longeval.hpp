#pragma once

#include "plc2/engine.hpp"

#include <functional>
#include <string>
#include <vector>

namespace plc2 {

// Long-context retrieval harness. Prompts are token-level synthetic: ids
// below kCaseAlphabet are structural markers, the rest of the vocabulary is
// split into a digit alphabet (answers, keys) and a disjoint name/filler
// alphabet, so an answer can only ever occur where it was planted.

enum class RetrievalTask { Phonebook, Passkey };

inline constexpr int kNameMark = 1;   // starts a directory entry / instruction
inline constexpr int kNumMark = 2;    // announces a number or key
inline constexpr int kQueryMark = 3;  // starts the retrieval question
inline constexpr int kCaseAlphabet = 4;

inline constexpr int kPhonebookNameLen = 3;
inline constexpr int kPhonebookNumberLen = 4;
inline constexpr int kPhonebookEntryLen = 9;  // mark + name + mark + number
inline constexpr int kPhonebookQueryLen = 5;  // mark + name + mark
inline constexpr int kPasskeyLen = 5;
inline constexpr int kPasskeyMinLen = 9;  // instruction + marked key + question

struct RetrievalCase {
    std::vector<int> prompt_tokens;
    std::vector<int> answer_tokens;
    int64_t context_len = 0;
    double depth = 0.0;  // relative answer position
    RetrievalTask task = RetrievalTask::Phonebook;
};

// Synthetic name -> number directory with all names distinct; the question
// asks for entry query_index's number.
RetrievalCase gen_phonebook(int64_t n_entries, int64_t query_index, uint64_t seed, int vocab);

// Filler with one marked key; the key starts at the depth-proportional
// offset of the feasible span and the prompt is exactly target_len tokens.
RetrievalCase gen_passkey(int64_t target_len, double depth, uint64_t seed, int vocab);

// 1 iff the answer appears contiguously within the first 64 output tokens.
int score_exact(const std::vector<int>& output_tokens, const RetrievalCase& rc);

struct AccuracyGrid {
    std::vector<int64_t> lengths;
    std::vector<double> depths;
    std::vector<std::vector<double>> acc;  // [lengths][depths]
    int64_t n_trials = 0;
};

struct GridSpec {
    RetrievalTask task = RetrievalTask::Phonebook;
    int vocab = 0;
    std::vector<int64_t> lengths;  // prompt token budget per cell
    std::vector<double> depths;
    int64_t n_trials = 1;
    uint64_t seed = 0;
};

using CaseRunner = std::function<std::vector<int>(const RetrievalCase&)>;

// Evaluates n_trials cases per (length, depth) cell in parallel. Case seeds
// are derived from the cell coordinates, so the grid is invariant to
// evaluation order and worker count.
AccuracyGrid run_grid(const CaseRunner& run, const GridSpec& spec);

// Greedy engine adapter: fresh session per case, prompt prefill, then up to
// max_new greedy tokens.
CaseRunner model_runner(const ModelParams& p, int64_t max_new = 64);

double grid_mean(const AccuracyGrid& grid);
std::string grid_table(const AccuracyGrid& grid);
std::string grid_csv(const AccuracyGrid& grid);  // length,depth,accuracy,n

// Mean log-probability of each next token under the model (negative
// log-perplexity; higher is better).
double fluency_neg_logppl(const ModelParams& p, const std::vector<int>& tokens);

struct SweepScore {
    double retrieval = 0.0;
    double fluency = 0.0;
};

// Equal-weight sum of min-max normalized scores; a constant metric
// contributes equally to every candidate. Ties prefer the higher minimum
// normalized score, then the lower index.
int64_t select_checkpoint(const std::vector<SweepScore>& scores);

struct SweepEntry {
    std::string path;
    SweepScore score;
};

struct SweepReport {
    std::vector<SweepEntry> entries;  // input order
    int64_t selected = -1;
};

using FluencyProxy = std::function<double(const ModelParams&)>;

// Scores every checkpoint on the grid (mean cell accuracy) and the fluency
// proxy, then picks the best balanced one.
SweepReport checkpoint_sweep(const std::vector<std::string>& paths, const GridSpec& spec,
                             const FluencyProxy& fluency);

}  // namespace plc2
