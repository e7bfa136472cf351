#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kvlock/mask_pipeline.hpp"
#include "kvlock/scheduler.hpp"
#include "kvlock/tensor.hpp"

namespace kvlock {

class DenoiserModel;

// Cached per-(step, layer) key/value matrices, f32 like the on-disk format
// so save/load round-trips bit-exactly.
struct KvEntry {
    int tokens = 0, dim = 0;
    std::vector<float> k, v; // row-major tokens x dim

    float kat(int r, int c) const { return k[static_cast<std::size_t>(r) * dim + c]; }
    float vat(int r, int c) const { return v[static_cast<std::size_t>(r) * dim + c]; }
};

struct KvBankMeta {
    uint64_t model_hash = 0;
    uint64_t schedule_hash = 0;
    uint32_t steps = 0;  // K
    uint32_t layers = 0; // L
    uint32_t tokens = 0; // N
    uint32_t dim = 0;    // d (full per-layer width; heads are split at injection)
};

// Background memory bank: complete over (k, l) after a caching pass,
// immutable afterwards and safe to share across sampling workers.
struct KvBank {
    KvBankMeta meta;
    std::vector<KvEntry> entries; // k-major, l-minor

    bool empty() const { return entries.empty(); }
    const KvEntry& at(int step_index, int layer) const; // both 1-based
};

// Optional sink filled during the caching pass; used by tests and the
// lock-determinism audit.
struct CachingRecord {
    std::vector<Latent> noised_inputs;           // z_src at each t_k
    std::vector<Latent> eps_hat;                 // model output per step
    std::vector<Latent> x0_hat;                  // predicted clean latent per step
    std::vector<std::vector<Matrix>> attn_out;   // [step][layer], N x d
    std::vector<std::vector<Matrix>> hidden;     // [step][layer] pre-attention state
};

// Runs the caching pass: z_src(t_k) = forward_noise(z0, t_k, eps_shared) with
// the shared eps, one conditional forward per sampling step, K/V stored for
// every layer. Raises IntegrityError on missing layer output, NumericError on
// NaN entries.
KvBank build_bank(const Latent& z0_src, const NoiseSchedule& schedule,
                  const DenoiserModel& model, const std::vector<double>& cond_src,
                  const Latent& eps_shared, CachingRecord* record = nullptr);

// KVLBANK1 container: magic(8), version u32, K, L, N, d u32, model/schedule
// hashes u64, then entries k-major l-minor, K then V, f32 row-major.
void save_bank(const KvBank& bank, const std::filesystem::path& path);
KvBank load_bank(const std::filesystem::path& path);

// Hash contract between a bank file and the consuming run.
void ensure_compatible(const KvBank& bank, uint64_t model_hash, uint64_t schedule_hash);

// Exact payload bytes per sampling step: 2 * N * d * L * sizeof(f32).
std::vector<std::pair<int, uint64_t>> bank_memory_report(const KvBank& bank);

} // namespace kvlock
