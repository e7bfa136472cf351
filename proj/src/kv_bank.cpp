#include "kvlock/kv_bank.hpp"

#include <cmath>
#include <string>

#include "kvlock/attention.hpp"
#include "kvlock/binio.hpp"
#include "kvlock/rng.hpp"

namespace kvlock {

namespace {

constexpr uint32_t kBankVersion = 1;
constexpr std::size_t kBankHeaderBytes = 8 + 4 + 4 * 4 + 2 * 8;

KvEntry quantize_entry(const Matrix& k, const Matrix& v) {
    KvEntry e;
    e.tokens = k.rows;
    e.dim = k.cols;
    e.k.resize(k.v.size());
    e.v.resize(v.v.size());
    for (std::size_t i = 0; i < k.v.size(); ++i) e.k[i] = static_cast<float>(k.v[i]);
    for (std::size_t i = 0; i < v.v.size(); ++i) e.v[i] = static_cast<float>(v.v[i]);
    return e;
}

} // namespace

const KvEntry& KvBank::at(int step_index, int layer) const {
    if (step_index < 1 || step_index > static_cast<int>(meta.steps) || layer < 1 ||
        layer > static_cast<int>(meta.layers)) {
        throw IntegrityError("bank has no entry for step " + std::to_string(step_index) +
                             ", layer " + std::to_string(layer));
    }
    return entries[static_cast<std::size_t>(step_index - 1) * meta.layers + (layer - 1)];
}

KvBank build_bank(const Latent& z0_src, const NoiseSchedule& schedule,
                  const DenoiserModel& model, const std::vector<double>& cond_src,
                  const Latent& eps_shared, CachingRecord* record) {
    require_same_shape(z0_src, eps_shared, "build_bank");
    const int k_steps = schedule.num_steps();
    const int layers = model.cfg.layers;
    const int tokens = model.token_count(z0_src);

    KvBank bank;
    bank.meta.model_hash = model.weights_hash();
    bank.meta.schedule_hash = schedule.hash();
    bank.meta.steps = static_cast<uint32_t>(k_steps);
    bank.meta.layers = static_cast<uint32_t>(layers);
    bank.meta.tokens = static_cast<uint32_t>(tokens);
    bank.meta.dim = static_cast<uint32_t>(model.cfg.hidden());
    bank.entries.reserve(static_cast<std::size_t>(k_steps) * layers);

    if (record) *record = CachingRecord{};

    std::vector<LayerTap> taps;
    ForwardHooks hooks;
    hooks.taps = &taps;

    for (int k = 1; k <= k_steps; ++k) {
        const int t = schedule.step_timestep(k);
        const Latent z_t = schedule.forward_noise(z0_src, t, eps_shared);
        const Latent eps_hat = model.forward(z_t, t, cond_src, hooks);

        if (static_cast<int>(taps.size()) != layers) {
            throw IntegrityError("caching pass: layer " + std::to_string(taps.size() + 1) +
                                 " yielded no state at step " + std::to_string(k));
        }
        for (int l = 0; l < layers; ++l) {
            KvEntry e = quantize_entry(taps[l].k, taps[l].v);
            for (float f : e.k) {
                if (!std::isfinite(f)) {
                    throw NumericError("NaN in cached K at step " + std::to_string(k) +
                                       ", layer " + std::to_string(l + 1));
                }
            }
            for (float f : e.v) {
                if (!std::isfinite(f)) {
                    throw NumericError("NaN in cached V at step " + std::to_string(k) +
                                       ", layer " + std::to_string(l + 1));
                }
            }
            bank.entries.push_back(std::move(e));
        }

        if (record) {
            record->noised_inputs.push_back(z_t);
            record->eps_hat.push_back(eps_hat);
            record->x0_hat.push_back(schedule.predict_x0(z_t, t, eps_hat));
            std::vector<Matrix> attn(layers), hid(layers);
            for (int l = 0; l < layers; ++l) {
                attn[l] = taps[l].attn_out;
                hid[l] = taps[l].hidden;
            }
            record->attn_out.push_back(std::move(attn));
            record->hidden.push_back(std::move(hid));
        }
    }
    return bank;
}

void save_bank(const KvBank& bank, const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic("KVLBANK1");
    w.u32(kBankVersion);
    w.u32(bank.meta.steps);
    w.u32(bank.meta.layers);
    w.u32(bank.meta.tokens);
    w.u32(bank.meta.dim);
    w.u64(bank.meta.model_hash);
    w.u64(bank.meta.schedule_hash);
    for (const auto& e : bank.entries) {
        w.f32s(e.k.data(), e.k.size());
        w.f32s(e.v.data(), e.v.size());
    }
    w.close();
}

KvBank load_bank(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("KVLBANK1");
    if (r.u32() != kBankVersion) throw IntegrityError("unsupported bank version");
    KvBank bank;
    bank.meta.steps = r.u32();
    bank.meta.layers = r.u32();
    bank.meta.tokens = r.u32();
    bank.meta.dim = r.u32();
    bank.meta.model_hash = r.u64();
    bank.meta.schedule_hash = r.u64();
    const std::size_t count = static_cast<std::size_t>(bank.meta.steps) * bank.meta.layers;
    const std::size_t per = static_cast<std::size_t>(bank.meta.tokens) * bank.meta.dim;
    bank.entries.resize(count);
    for (auto& e : bank.entries) {
        e.tokens = static_cast<int>(bank.meta.tokens);
        e.dim = static_cast<int>(bank.meta.dim);
        e.k.resize(per);
        e.v.resize(per);
        r.f32s(e.k.data(), per);
        r.f32s(e.v.data(), per);
    }
    r.expect_eof();
    return bank;
}

void ensure_compatible(const KvBank& bank, uint64_t model_hash, uint64_t schedule_hash) {
    if (bank.meta.model_hash != model_hash) {
        throw IntegrityError("bank was built against a different model (hash mismatch)");
    }
    if (bank.meta.schedule_hash != schedule_hash) {
        throw IntegrityError("bank was built against a different schedule (hash mismatch)");
    }
}

std::vector<std::pair<int, uint64_t>> bank_memory_report(const KvBank& bank) {
    std::vector<std::pair<int, uint64_t>> rows;
    const uint64_t per_step =
        2ull * bank.meta.tokens * bank.meta.dim * bank.meta.layers * sizeof(float);
    for (uint32_t k = 1; k <= bank.meta.steps; ++k) {
        rows.emplace_back(static_cast<int>(k), per_step);
    }
    return rows;
}

} // namespace kvlock
