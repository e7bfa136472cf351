#include "kvlock/rng.hpp"

#include <cstring>

namespace kvlock {

uint64_t fnv1a64(const void* data, std::size_t len, uint64_t state) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        state ^= p[i];
        state *= 0x100000001b3ull;
    }
    return state;
}

uint64_t fnv1a64(std::string_view s, uint64_t state) {
    return fnv1a64(s.data(), s.size(), state);
}

uint64_t stream_seed(uint64_t master, std::string_view name) {
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(master >> (8 * i));
    uint64_t h = fnv1a64(le, 8);
    return fnv1a64(name, h);
}

std::vector<double> normal_vector(std::mt19937_64& rng, std::size_t n, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> out(n);
    for (auto& x : out) x = dist(rng);
    return out;
}

} // namespace kvlock
