#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace kvlock {

// FNV-1a 64-bit, the project-wide stable hash for seeds and file metadata.
uint64_t fnv1a64(const void* data, std::size_t len, uint64_t state = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s, uint64_t state = 0xcbf29ce484222325ull);

// Master-seed fan-out: every consumer draws from a named sub-stream so that
// runs sharing a master seed (e.g. ablation arms) see identical noise.
// stream_seed(seed, name) = fnv1a64(LE64(seed) || name).
uint64_t stream_seed(uint64_t master, std::string_view name);

inline std::mt19937_64 stream_rng(uint64_t master, std::string_view name) {
    return std::mt19937_64(stream_seed(master, name));
}

std::vector<double> normal_vector(std::mt19937_64& rng, std::size_t n, double stddev = 1.0);

} // namespace kvlock
