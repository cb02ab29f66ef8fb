#pragma once

#include "plc2/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace plc2 {

struct DedupConfig {
    int ngram = 13;          // character n-gram width (code points)
    int num_perms = 128;     // minhash permutation count
    double threshold = 0.8;  // signature-similarity edge threshold
    uint64_t seed = 0;
};

struct Signature {
    std::vector<uint64_t> values;  // one min-hash per permutation
};

// NFKC, lowercase, whitespace runs collapsed to one space, trimmed.
std::string normalize_text(const std::string& text);

// All contiguous ngram-codepoint substrings of the normalized text, as a
// sorted unique set. Texts shorter than ngram yield one shingle: the whole
// normalized text.
std::vector<std::string> shingle(const std::string& text, int ngram);

// Permutation i is a seeded universal hash a_i*x + b_i mod (2^61 - 1) over
// a 64-bit base hash of the shingle; values[i] is the min over shingles.
Signature minhash_signature(const std::vector<std::string>& shingles, const DedupConfig& cfg);

// Fraction of matching signature positions (estimates Jaccard similarity).
double signature_similarity(const Signature& a, const Signature& b);

// Signatures for every text, LSH-banded candidate pairs verified at the
// threshold, union-find components, one seeded survivor per component.
// Returns kept indices sorted ascending.
std::vector<int64_t> dedup_corpus(const std::vector<std::string>& texts, const DedupConfig& cfg);

}  // namespace plc2
