#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hclff {

// Error taxonomy. CLI exit codes: config_error -> 2, data_error -> 3,
// argument_error / numeric_error -> 4.
struct argument_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace rng {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix(uint64_t a, uint64_t b) { return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b)); }
inline uint64_t mix(uint64_t a, uint64_t b, uint64_t c) { return mix(mix(a, b), c); }

// xoshiro256++ with portable, implementation-independent draw functions.
// std::uniform_real_distribution is avoided on purpose: its output is not
// pinned by the standard, and checkpoints must replay identically.
class Stream {
  public:
    explicit Stream(uint64_t seed = 0) {
        uint64_t x = seed;
        for (auto& w : s_) {
            x = splitmix64(x);
            w = x;
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // standard normal via Box-Muller (one value per call; cached pair unused to
    // keep draw count predictable)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

}  // namespace rng

// Deterministic task-parallel helper. Tasks are independent; any cross-task
// reduction is done by the caller in task order, so the result never depends
// on the thread count.
inline void parallel_for(std::size_t num_tasks, const std::function<void(std::size_t)>& fn, int num_threads) {
    if (num_tasks == 0) return;
    if (num_threads <= 1 || num_tasks == 1) {
        for (std::size_t i = 0; i < num_tasks; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(num_threads), num_tasks);
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    std::exception_ptr err;
    std::mutex err_mu;
    auto run = [&](std::size_t first) {
        try {
            for (std::size_t i = first; i < num_tasks; i += workers) fn(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!err) err = std::current_exception();
        }
    };
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
    run(0);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

inline int default_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Batch gradients are accumulated into a fixed number of chunk buffers
// (chunk c owns samples i with i % kReductionChunks == c, summed in sample
// order) and the chunks are then summed in index order. The reduction order
// is therefore independent of the thread count.
inline constexpr std::size_t kReductionChunks = 16;

}  // namespace hclff
