#include "kvlock/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvlock/binio.hpp"
#include "kvlock/rng.hpp"

namespace kvlock {

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Matrix head_slice(const Matrix& m, int head, int head_dim) {
    Matrix out(m.rows, head_dim);
    const int off = head * head_dim;
    for (int r = 0; r < m.rows; ++r) {
        const double* src = m.row(r) + off;
        std::copy(src, src + head_dim, out.row(r));
    }
    return out;
}

Matrix seeded_matrix(std::mt19937_64& rng, int rows, int cols, double scale) {
    Matrix m(rows, cols);
    std::normal_distribution<double> dist(0.0, scale);
    // Quantize to f32 so the weight file reproduces the model exactly.
    for (auto& x : m.v) x = static_cast<float>(dist(rng));
    return m;
}

std::vector<double> zeros(int n) { return std::vector<double>(static_cast<std::size_t>(n), 0.0); }

} // namespace

std::vector<double> timestep_embedding(int t, int dim) {
    std::vector<double> emb(static_cast<std::size_t>(dim), 0.0);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        emb[i] = std::sin(t * freq);
        emb[half + i] = std::cos(t * freq);
    }
    return emb;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    if (q.cols != k.cols || k.rows != v.rows || q.cols <= 0) {
        throw ConfigError("attention: inconsistent Q/K/V shapes");
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols));
    Matrix out(q.rows, v.cols);
    std::vector<double> logits(static_cast<std::size_t>(k.rows));
    for (int i = 0; i < q.rows; ++i) {
        const double* qi = q.row(i);
        double maxl = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k.rows; ++j) {
            double dot = 0.0;
            const double* kj = k.row(j);
            for (int c = 0; c < q.cols; ++c) dot += qi[c] * kj[c];
            logits[j] = dot * inv_sqrt_d;
            maxl = std::max(maxl, logits[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < k.rows; ++j) {
            logits[j] = std::exp(logits[j] - maxl);
            denom += logits[j];
        }
        double* orow = out.row(i);
        for (int j = 0; j < k.rows; ++j) {
            const double wgt = logits[j] / denom;
            const double* vj = v.row(j);
            for (int c = 0; c < v.cols; ++c) orow[c] += wgt * vj[c];
        }
    }
    return out;
}

std::pair<Matrix, Matrix> mix_kv(const Matrix& k_new, const Matrix& v_new, const KvEntry& entry,
                                 const InjectionPlan& plan) {
    if (entry.tokens != k_new.rows || entry.dim != k_new.cols) {
        throw IntegrityError("mix_kv: bank entry " + std::to_string(entry.tokens) + "x" +
                             std::to_string(entry.dim) + " incompatible with model " +
                             std::to_string(k_new.rows) + "x" + std::to_string(k_new.cols));
    }
    if (plan.token_mask.size() != static_cast<std::size_t>(k_new.rows)) {
        throw IntegrityError("mix_kv: token mask length " +
                             std::to_string(plan.token_mask.size()) + " vs N=" +
                             std::to_string(k_new.rows));
    }
    if (plan.alpha_k < 0.0 || plan.alpha_k > 1.0) {
        throw ConfigError("mix_kv: alpha_k outside [0, 1]");
    }
    Matrix k_mix = k_new;
    Matrix v_mix = v_new;
    const double a = plan.alpha_k;
    for (int r = 0; r < k_new.rows; ++r) {
        if (plan.token_mask.v[r]) continue; // foreground keeps fresh K/V
        double* km = k_mix.row(r);
        double* vm = v_mix.row(r);
        for (int c = 0; c < k_new.cols; ++c) {
            km[c] = a * entry.kat(r, c) + (1.0 - a) * km[c];
            vm[c] = a * entry.vat(r, c) + (1.0 - a) * vm[c];
        }
    }
    return {std::move(k_mix), std::move(v_mix)};
}

DenoiserModel DenoiserModel::seeded(const DitConfig& cfg, uint64_t seed) {
    DenoiserModel m;
    m.cfg = cfg;
    const int hidden = cfg.hidden();
    const int pv = cfg.patch_values();
    auto rng = stream_rng(seed, "weights");
    m.patch_embed_w = seeded_matrix(rng, pv, hidden, 1.0 / std::sqrt(pv));
    m.patch_embed_b = zeros(hidden);
    m.blocks.resize(cfg.layers);
    for (auto& b : m.blocks) {
        const double s = 1.0 / std::sqrt(hidden);
        b.wq = seeded_matrix(rng, hidden, hidden, s);
        b.wk = seeded_matrix(rng, hidden, hidden, s);
        b.wv = seeded_matrix(rng, hidden, hidden, s);
        b.wo = seeded_matrix(rng, hidden, hidden, s);
        b.mlp_w1 = seeded_matrix(rng, hidden, 4 * hidden, s);
        b.mlp_b1 = zeros(4 * hidden);
        b.mlp_w2 = seeded_matrix(rng, 4 * hidden, hidden, 1.0 / std::sqrt(4.0 * hidden));
        b.mlp_b2 = zeros(hidden);
    }
    m.unembed_w = seeded_matrix(rng, hidden, pv, 1.0 / std::sqrt(hidden));
    m.unembed_b = zeros(pv);
    return m;
}

int DenoiserModel::token_count(const Latent& x) const {
    const auto& p = cfg.patch;
    if (x.c != cfg.channels || x.t % p[0] != 0 || x.h % p[1] != 0 || x.w % p[2] != 0) {
        throw ConfigError("model input (" + std::to_string(x.c) + "," + std::to_string(x.t) +
                          "," + std::to_string(x.h) + "," + std::to_string(x.w) +
                          ") incompatible with patch size");
    }
    return (x.t / p[0]) * (x.h / p[1]) * (x.w / p[2]);
}

Latent DenoiserModel::forward(const Latent& x, int t, const std::vector<double>& cond,
                              const ForwardHooks& hooks) const {
    const int hidden = cfg.hidden();
    if (cond.size() != static_cast<std::size_t>(hidden)) {
        throw ConfigError("conditioning vector length " + std::to_string(cond.size()) +
                          " != hidden " + std::to_string(hidden));
    }
    const auto& p = cfg.patch;
    const int n = token_count(x);
    const int gt = x.t / p[0], gh = x.h / p[1], gw = x.w / p[2];
    const int pv = cfg.patch_values();

    // Patchify: temporal-major, then row-major spatial (same order as the
    // token mask); patch values laid out (c, dt, dy, dx).
    Matrix patches(n, pv);
    {
        int tok = 0;
        for (int ti = 0; ti < gt; ++ti) {
            for (int yi = 0; yi < gh; ++yi) {
                for (int xi = 0; xi < gw; ++xi, ++tok) {
                    double* row = patches.row(tok);
                    int idx = 0;
                    for (int c = 0; c < x.c; ++c) {
                        for (int dt = 0; dt < p[0]; ++dt) {
                            for (int dy = 0; dy < p[1]; ++dy) {
                                for (int dx = 0; dx < p[2]; ++dx, ++idx) {
                                    row[idx] = x.at(c, ti * p[0] + dt, yi * p[1] + dy,
                                                    xi * p[2] + dx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Matrix tokens = matmul(patches, patch_embed_w);
    for (int r = 0; r < n; ++r) {
        double* row = tokens.row(r);
        for (int c = 0; c < hidden; ++c) row[c] += patch_embed_b[c];
    }

    const std::vector<double> temb = timestep_embedding(t, hidden);
    std::vector<double> add(static_cast<std::size_t>(hidden));
    for (int c = 0; c < hidden; ++c) add[c] = temb[c] + cond[c];

    if (hooks.taps) {
        hooks.taps->clear();
        hooks.taps->resize(blocks.size());
    }

    const bool inject = hooks.plan && hooks.plan->active;
    if (inject && !hooks.bank) {
        throw IntegrityError("active injection plan without a bank");
    }

    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const DitBlock& blk = blocks[l];

        // Pre-attention state: normed tokens plus timestep/conditioning shift.
        Matrix a = layer_norm(tokens);
        for (int r = 0; r < n; ++r) {
            double* row = a.row(r);
            for (int c = 0; c < hidden; ++c) row[c] += add[c];
        }

        Matrix q = matmul(a, blk.wq);
        Matrix k = matmul(a, blk.wk);
        Matrix v = matmul(a, blk.wv);

        if (hooks.taps) {
            (*hooks.taps)[l].hidden = a;
            (*hooks.taps)[l].k = k;
            (*hooks.taps)[l].v = v;
        }

        if (inject) {
            const KvEntry& entry = hooks.bank->at(hooks.plan->step_index, static_cast<int>(l) + 1);
            auto [km, vm] = mix_kv(k, v, entry, *hooks.plan);
            k = std::move(km);
            v = std::move(vm);
        }

        Matrix attn_out(n, hidden);
        for (int head = 0; head < cfg.heads; ++head) {
            const Matrix qh = head_slice(q, head, cfg.head_dim);
            const Matrix kh = head_slice(k, head, cfg.head_dim);
            const Matrix vh = head_slice(v, head, cfg.head_dim);
            const Matrix oh = attention(qh, kh, vh);
            const int off = head * cfg.head_dim;
            for (int r = 0; r < n; ++r) {
                std::copy(oh.row(r), oh.row(r) + cfg.head_dim, attn_out.row(r) + off);
            }
        }
        for (double d : attn_out.v) {
            if (!std::isfinite(d)) {
                throw NumericError("NaN in attention output at layer " + std::to_string(l + 1) +
                                   ", t=" + std::to_string(t));
            }
        }
        if (hooks.taps) (*hooks.taps)[l].attn_out = attn_out;

        const Matrix proj = matmul(attn_out, blk.wo);
        for (std::size_t i = 0; i < tokens.v.size(); ++i) tokens.v[i] += proj.v[i];

        Matrix mlp_in = layer_norm(tokens);
        Matrix hid = matmul(mlp_in, blk.mlp_w1);
        for (int r = 0; r < n; ++r) {
            double* row = hid.row(r);
            for (int c = 0; c < 4 * hidden; ++c) row[c] = gelu(row[c] + blk.mlp_b1[c]);
        }
        Matrix mlp_out = matmul(hid, blk.mlp_w2);
        for (int r = 0; r < n; ++r) {
            double* row = mlp_out.row(r);
            for (int c = 0; c < hidden; ++c) tokens.at(r, c) += row[c] + blk.mlp_b2[c];
        }
    }

    Matrix out_tokens = matmul(layer_norm(tokens), unembed_w);
    for (int r = 0; r < n; ++r) {
        double* row = out_tokens.row(r);
        for (int c = 0; c < pv; ++c) row[c] += unembed_b[c];
    }

    // Un-patchify back to (C, T, h, w).
    Latent eps(x.c, x.t, x.h, x.w);
    {
        int tok = 0;
        for (int ti = 0; ti < gt; ++ti) {
            for (int yi = 0; yi < gh; ++yi) {
                for (int xi = 0; xi < gw; ++xi, ++tok) {
                    const double* row = out_tokens.row(tok);
                    int idx = 0;
                    for (int c = 0; c < x.c; ++c) {
                        for (int dt = 0; dt < p[0]; ++dt) {
                            for (int dy = 0; dy < p[1]; ++dy) {
                                for (int dx = 0; dx < p[2]; ++dx, ++idx) {
                                    eps.at(c, ti * p[0] + dt, yi * p[1] + dy, xi * p[2] + dx) =
                                        row[idx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return eps;
}

Latent controlled_forward(const DenoiserModel& model, const Latent& x_t, int t,
                          const std::vector<double>& cond, const KvBank* bank,
                          const InjectionPlan& plan) {
    ForwardHooks hooks;
    hooks.bank = bank;
    hooks.plan = &plan;
    return model.forward(x_t, t, cond, hooks);
}

namespace {

void hash_matrix(uint64_t& h, const Matrix& m) {
    h = fnv1a64(&m.rows, sizeof(m.rows), h);
    h = fnv1a64(&m.cols, sizeof(m.cols), h);
    for (double d : m.v) {
        const float f = static_cast<float>(d);
        h = fnv1a64(&f, sizeof(f), h);
    }
}

void hash_vec(uint64_t& h, const std::vector<double>& v) {
    for (double d : v) {
        const float f = static_cast<float>(d);
        h = fnv1a64(&f, sizeof(f), h);
    }
}

} // namespace

uint64_t DenoiserModel::weights_hash() const {
    uint64_t h = fnv1a64("KVLMODEL");
    const int dims[] = {cfg.layers, cfg.heads, cfg.head_dim, cfg.channels,
                        cfg.patch[0], cfg.patch[1], cfg.patch[2]};
    h = fnv1a64(dims, sizeof(dims), h);
    hash_matrix(h, patch_embed_w);
    hash_vec(h, patch_embed_b);
    for (const auto& b : blocks) {
        hash_matrix(h, b.wq);
        hash_matrix(h, b.wk);
        hash_matrix(h, b.wv);
        hash_matrix(h, b.wo);
        hash_matrix(h, b.mlp_w1);
        hash_vec(h, b.mlp_b1);
        hash_matrix(h, b.mlp_w2);
        hash_vec(h, b.mlp_b2);
    }
    hash_matrix(h, unembed_w);
    hash_vec(h, unembed_b);
    return h;
}

namespace {

constexpr uint32_t kWeightsVersion = 1;
constexpr uint32_t kKindDit = 1;

void write_matrix(binio::Writer& w, const Matrix& m) {
    w.u32(static_cast<uint32_t>(m.rows));
    w.u32(static_cast<uint32_t>(m.cols));
    w.f32s(m.v.data(), m.v.size());
}

Matrix read_matrix(binio::Reader& r) {
    Matrix m;
    m.rows = static_cast<int>(r.u32());
    m.cols = static_cast<int>(r.u32());
    if (m.rows < 0 || m.cols < 0) throw IntegrityError("negative matrix dims in weights file");
    m.v.resize(static_cast<std::size_t>(m.rows) * m.cols);
    r.f32s(m.v.data(), m.v.size());
    return m;
}

void write_vec(binio::Writer& w, const std::vector<double>& v) {
    w.u32(static_cast<uint32_t>(v.size()));
    w.u32(1);
    w.f32s(v.data(), v.size());
}

std::vector<double> read_vec(binio::Reader& r) {
    const uint32_t n = r.u32();
    if (r.u32() != 1) throw IntegrityError("expected vector block in weights file");
    std::vector<double> v(n);
    r.f32s(v.data(), v.size());
    return v;
}

} // namespace

void DenoiserModel::save(const std::filesystem::path& path) const {
    binio::Writer w(path);
    w.magic("KVLWGT1f");
    w.u32(kWeightsVersion);
    w.u32(kKindDit);
    w.u32(7);
    for (int d : {cfg.layers, cfg.heads, cfg.head_dim, cfg.channels, cfg.patch[0], cfg.patch[1],
                  cfg.patch[2]}) {
        w.u32(static_cast<uint32_t>(d));
    }
    write_matrix(w, patch_embed_w);
    write_vec(w, patch_embed_b);
    for (const auto& b : blocks) {
        write_matrix(w, b.wq);
        write_matrix(w, b.wk);
        write_matrix(w, b.wv);
        write_matrix(w, b.wo);
        write_matrix(w, b.mlp_w1);
        write_vec(w, b.mlp_b1);
        write_matrix(w, b.mlp_w2);
        write_vec(w, b.mlp_b2);
    }
    write_matrix(w, unembed_w);
    write_vec(w, unembed_b);
    w.close();
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("KVLWGT1f");
    if (r.u32() != kWeightsVersion) throw IntegrityError("unsupported weights version");
    if (r.u32() != kKindDit) throw IntegrityError("weights file is not a denoiser model");
    if (r.u32() != 7) throw IntegrityError("bad meta block in weights file");
    DenoiserModel m;
    m.cfg.layers = static_cast<int>(r.u32());
    m.cfg.heads = static_cast<int>(r.u32());
    m.cfg.head_dim = static_cast<int>(r.u32());
    m.cfg.channels = static_cast<int>(r.u32());
    for (int i = 0; i < 3; ++i) m.cfg.patch[i] = static_cast<int>(r.u32());
    m.patch_embed_w = read_matrix(r);
    m.patch_embed_b = read_vec(r);
    m.blocks.resize(m.cfg.layers);
    for (auto& b : m.blocks) {
        b.wq = read_matrix(r);
        b.wk = read_matrix(r);
        b.wv = read_matrix(r);
        b.wo = read_matrix(r);
        b.mlp_w1 = read_matrix(r);
        b.mlp_b1 = read_vec(r);
        b.mlp_w2 = read_matrix(r);
        b.mlp_b2 = read_vec(r);
    }
    m.unembed_w = read_matrix(r);
    m.unembed_b = read_vec(r);
    r.expect_eof();
    return m;
}

} // namespace kvlock
