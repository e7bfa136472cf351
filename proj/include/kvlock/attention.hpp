#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "kvlock/kv_bank.hpp"
#include "kvlock/mask_pipeline.hpp"
#include "kvlock/tensor.hpp"

namespace kvlock {

// Per-step injection parameters, passed by value per forward call.
// active is set only inside the final kappa sampling steps and implies a bank
// is present; alpha_k is the fusion rate in [0, 1]; step_index keys the bank.
struct InjectionPlan {
    TokenMask token_mask;
    double alpha_k = 0.0;
    bool active = false;
    int step_index = 0; // 1-based sampling step, bank lookup key
};

// softmax(Q K^T / sqrt(d)) V with row-max-stabilized softmax.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v);

// Token-wise fusion: foreground rows (mask=1) keep the fresh K/V, background
// rows blend alpha * cached + (1 - alpha) * fresh.
std::pair<Matrix, Matrix> mix_kv(const Matrix& k_new, const Matrix& v_new,
                                 const KvEntry& entry, const InjectionPlan& plan);

struct DitConfig {
    int layers = 4;
    int heads = 2;
    int head_dim = 16;
    int channels = kLatentChannels;
    Triple patch = kPatchSize;

    int hidden() const { return heads * head_dim; }
    int patch_values() const { return channels * patch[0] * patch[1] * patch[2]; }
};

struct DitBlock {
    Matrix wq, wk, wv, wo;  // hidden x hidden, no bias
    Matrix mlp_w1, mlp_w2;  // hidden x 4*hidden, 4*hidden x hidden
    std::vector<double> mlp_b1, mlp_b2;
};

// Recording taps for one forward pass (sized L when requested).
struct LayerTap {
    Matrix hidden;   // pre-attention state the K/V projections consume
    Matrix k, v;     // fresh projections before mixing
    Matrix attn_out; // multi-head attention output, N x hidden
};

struct ForwardHooks {
    const KvBank* bank = nullptr;
    const InjectionPlan* plan = nullptr;
    std::vector<LayerTap>* taps = nullptr;
};

// Miniature diffusion transformer. Weights are immutable after construction
// (tests may edit the public fields before use); forward is deterministic in
// (input, t, cond, hooks) and re-entrant.
class DenoiserModel {
public:
    DitConfig cfg;
    Matrix patch_embed_w;  // patch_values x hidden
    std::vector<double> patch_embed_b;
    Matrix unembed_w;      // hidden x patch_values
    std::vector<double> unembed_b;
    std::vector<DitBlock> blocks;

    DenoiserModel() = default;

    // Seeded init, weights quantized to f32 so save/load reproduces the model.
    static DenoiserModel seeded(const DitConfig& cfg, uint64_t seed);

    int token_count(const Latent& x) const;

    // Full forward pass: predicted noise for x at train timestep t under the
    // additive conditioning vector. With an active plan every self-attention
    // layer mixes cached K/V per the plan; with hooks empty this is the plain
    // model (bit-identical to an inactive plan).
    Latent forward(const Latent& x, int t, const std::vector<double>& cond,
                   const ForwardHooks& hooks = {}) const;

    uint64_t weights_hash() const;

    void save(const std::filesystem::path& path) const;
    static DenoiserModel load(const std::filesystem::path& path);
};

// Spec-named wrapper: forward with bank + plan.
Latent controlled_forward(const DenoiserModel& model, const Latent& x_t, int t,
                          const std::vector<double>& cond, const KvBank* bank,
                          const InjectionPlan& plan);

std::vector<double> timestep_embedding(int t, int dim);

} // namespace kvlock
