#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sdebayes {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Key for an independent substream. Used to give every trajectory / chain /
// sampler its own generator so threaded and serial runs produce identical
// output.
inline std::uint64_t derive_stream(std::uint64_t master_seed, std::uint64_t stream_id) {
    return splitmix64(splitmix64(master_seed) ^ splitmix64(stream_id + 0x517cc1b727220a95ULL));
}

// Deterministic standard-normal stream. Box-Muller on top of mt19937_64 so
// draws do not depend on the standard library's distribution implementation.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t key) : eng_(key) {}

    NormalStream(std::uint64_t master_seed, std::uint64_t stream_id)
        : eng_(derive_stream(master_seed, stream_id)) {}

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform in (0,1].
    double uniform_pos() { return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53; }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sdebayes
