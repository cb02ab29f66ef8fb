#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace plc2 {

// Error taxonomy shared by every module. The CLI maps Usage to exit code 2
// and everything else to exit code 1.
enum class ErrKind {
    Shape,      // tensor dimension mismatch
    Config,     // invalid or inconsistent configuration
    Input,      // bad user-supplied value (token id, role, ...)
    State,      // session/cache inconsistent with config
    Format,     // bad magic/version/structure in a file
    Integrity,  // checksum mismatch, truncated payload
    Numeric,    // singular matrix, non-finite intermediate
    Schema,     // mismatched tensor tables across checkpoints
    Io,         // filesystem failure
    Usage,      // bad command line
};

class Error : public std::runtime_error {
  public:
    Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrKind kind() const { return kind_; }

  private:
    ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void check(bool cond, ErrKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

// Deterministic RNG built on splitmix64. Generator and distributions are
// both hand-rolled because the std:: distribution objects are
// implementation-defined and would break seeded golden tests.
class Rng {
  public:
    explicit Rng(uint64_t seed) : s_(seed) {
        // splitmix64 warmup so nearby seeds decorrelate
        for (int i = 0; i < 4; i++) next_u64();
    }

    uint64_t next_u64() {
        uint64_t z = (s_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() { return double(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

    // uniform integer in [0, n)
    uint64_t next_below(uint64_t n) {
        // modulo bias is negligible for the desk-scale n used here, but
        // rejection keeps draws exactly uniform
        uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= lim);
        return x % n;
    }

    // standard normal via Box-Muller on explicit uniforms
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 1e-300);
        u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    uint64_t s_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Worker cap: min(PLC2_THREADS, hardware_concurrency), at least 1.
int worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks across
// workers; any exception is rethrown on the calling thread. Results must be
// written by index so the merge order is deterministic.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// 64-bit FNV-1a, the base hash for minhash and bucketing.
inline uint64_t hash64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; i++) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t hash64(const std::string& s, uint64_t seed = 0xcbf29ce484222325ull) {
    return hash64(s.data(), s.size(), seed);
}

}  // namespace plc2
