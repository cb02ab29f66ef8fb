#include "plc2/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <thread>

namespace plc2 {

int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* env = std::getenv("PLC2_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0 && v < n) n = static_cast<int>(v);
    }
    return n < 1 ? 1 : n;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    int64_t workers = std::min<int64_t>(worker_count(), n);
    if (workers <= 1) {
        for (int64_t i = 0; i < n; i++) fn(i);
        return;
    }
    int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(static_cast<size_t>(workers));
    for (int64_t w = 0; w < workers; w++) {
        int64_t lo = w * chunk;
        int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi, w] {
            try {
                for (int64_t i = lo; i < hi; i++) fn(i);
            } catch (...) {
                errs[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace plc2
