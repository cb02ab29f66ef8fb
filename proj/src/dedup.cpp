#include "plc2/dedup.hpp"

#include "plc2/unicode.hpp"

#include <algorithm>
#include <unordered_map>

namespace plc2 {

namespace {

constexpr uint64_t kMersenne61 = (1ull << 61) - 1;

void validate_cfg(const DedupConfig& cfg) {
    check(cfg.ngram >= 1, ErrKind::Config, "ngram must be at least 1");
    check(cfg.num_perms >= 1, ErrKind::Config, "num_perms must be at least 1");
    check(cfg.threshold > 0.0 && cfg.threshold <= 1.0, ErrKind::Config,
          "threshold must be in (0, 1]");
}

uint64_t mod61(uint64_t x) { return x % kMersenne61; }

// (a*x + b) mod 2^61-1 with a 128-bit intermediate
uint64_t perm_hash(uint64_t a, uint64_t b, uint64_t x) {
    unsigned __int128 v = (unsigned __int128)a * x + b;
    return uint64_t(v % kMersenne61);
}

struct UnionFind {
    std::vector<int64_t> parent;
    explicit UnionFind(size_t n) : parent(n) {
        for (size_t i = 0; i < n; i++) parent[i] = int64_t(i);
    }
    int64_t find(int64_t x) {
        while (parent[size_t(x)] != x) {
            parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
            x = parent[size_t(x)];
        }
        return x;
    }
    void unite(int64_t a, int64_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a > b) std::swap(a, b);  // smaller index becomes the root
        parent[size_t(b)] = a;
    }
};

}  // namespace

std::string normalize_text(const std::string& text) {
    std::vector<uint32_t> cps = to_lower(nfkc(utf8_decode(text)));
    std::vector<uint32_t> out;
    out.reserve(cps.size());
    bool pending_space = false;
    for (uint32_t cp : cps) {
        if (is_space(cp)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(0x20);
            pending_space = false;
        }
        out.push_back(cp);
    }
    return utf8_encode(out);
}

std::vector<std::string> shingle(const std::string& text, int ngram) {
    check(ngram >= 1, ErrKind::Config, "ngram must be at least 1");
    std::vector<uint32_t> cps = utf8_decode(normalize_text(text));
    std::vector<std::string> out;
    if (int64_t(cps.size()) < ngram) {
        out.push_back(utf8_encode(cps));
        return out;
    }
    for (size_t i = 0; i + size_t(ngram) <= cps.size(); i++)
        out.push_back(utf8_encode({cps.begin() + long(i), cps.begin() + long(i) + ngram}));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Signature minhash_signature(const std::vector<std::string>& shingles, const DedupConfig& cfg) {
    validate_cfg(cfg);
    check(!shingles.empty(), ErrKind::Input, "minhash needs a nonempty shingle set");

    Rng rng(cfg.seed);
    Signature sig;
    sig.values.assign(size_t(cfg.num_perms), UINT64_MAX);
    std::vector<uint64_t> a(size_t(cfg.num_perms)), b(size_t(cfg.num_perms));
    for (int i = 0; i < cfg.num_perms; i++) {
        a[size_t(i)] = 1 + rng.next_below(kMersenne61 - 1);
        b[size_t(i)] = rng.next_below(kMersenne61);
    }
    for (const std::string& s : shingles) {
        uint64_t x = mod61(hash64(s.data(), s.size()));
        for (int i = 0; i < cfg.num_perms; i++) {
            uint64_t h = perm_hash(a[size_t(i)], b[size_t(i)], x);
            if (h < sig.values[size_t(i)]) sig.values[size_t(i)] = h;
        }
    }
    return sig;
}

double signature_similarity(const Signature& a, const Signature& b) {
    check(a.values.size() == b.values.size() && !a.values.empty(), ErrKind::Input,
          "signatures must have the same nonzero length");
    int64_t match = 0;
    for (size_t i = 0; i < a.values.size(); i++)
        if (a.values[i] == b.values[i]) match++;
    return double(match) / double(a.values.size());
}

std::vector<int64_t> dedup_corpus(const std::vector<std::string>& texts, const DedupConfig& cfg) {
    validate_cfg(cfg);
    const int64_t n = int64_t(texts.size());
    if (n == 0) return {};

    std::vector<Signature> sigs(static_cast<size_t>(n));
    parallel_for(n, [&](int64_t i) {
        sigs[size_t(i)] = minhash_signature(shingle(texts[size_t(i)], cfg.ngram), cfg);
    });

    // LSH banding: 8 rows per band; a shared band bucket makes a candidate
    // pair, verified against the full signatures before linking
    const int rows = 8;
    const int bands = (cfg.num_perms + rows - 1) / rows;
    UnionFind uf(static_cast<size_t>(n));
    for (int band = 0; band < bands; band++) {
        const int lo = band * rows;
        const int hi = std::min(cfg.num_perms, lo + rows);
        std::unordered_map<uint64_t, std::vector<int64_t>> buckets;
        for (int64_t i = 0; i < n; i++) {
            uint64_t key = hash64(&sigs[size_t(i)].values[size_t(lo)],
                                  size_t(hi - lo) * sizeof(uint64_t), 0x9e3779b97f4a7c15ull + uint64_t(band));
            buckets[key].push_back(i);
        }
        for (const auto& [key, members] : buckets) {
            for (size_t x = 0; x < members.size(); x++)
                for (size_t y = x + 1; y < members.size(); y++) {
                    int64_t i = members[x], j = members[y];
                    if (uf.find(i) == uf.find(j)) continue;
                    if (signature_similarity(sigs[size_t(i)], sigs[size_t(j)]) >= cfg.threshold)
                        uf.unite(i, j);
                }
        }
    }

    // group components in ascending root order, then one seeded draw each
    std::vector<std::vector<int64_t>> comps;
    std::unordered_map<int64_t, size_t> comp_of;
    for (int64_t i = 0; i < n; i++) {
        int64_t r = uf.find(i);
        auto it = comp_of.find(r);
        if (it == comp_of.end()) {
            comp_of.emplace(r, comps.size());
            comps.push_back({i});
        } else {
            comps[it->second].push_back(i);
        }
    }
    Rng rng(cfg.seed ^ 0xd6e8feb86659fd93ull);
    std::vector<int64_t> kept;
    kept.reserve(comps.size());
    for (const std::vector<int64_t>& members : comps)
        kept.push_back(members[rng.next_below(members.size())]);
    std::sort(kept.begin(), kept.end());
    return kept;
}

}  // namespace plc2
