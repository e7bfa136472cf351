#include "kvlock/toy_models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "kvlock/binio.hpp"
#include "kvlock/parallel.hpp"
#include "kvlock/rng.hpp"

namespace kvlock {

namespace {

double normal_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

} // namespace

double MixtureSpec::density(double x) const {
    double q = 0.0;
    const double var = stddev * stddev;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        q += weights[i] * normal_pdf(x, centers[i], var);
    }
    return q;
}

double MixtureSpec::max_density() const {
    double best = 0.0;
    for (double c : centers) best = std::max(best, density(c));
    return best;
}

bool MixtureSpec::in_support(double x, double rel_eps) const {
    return density(x) > rel_eps * max_density();
}

double MixtureSpec::sample(std::mt19937_64& rng) const {
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    std::normal_distribution<double> noise(0.0, stddev);
    return centers[pick(rng)] + noise(rng);
}

double analytic_eps(double x, int t, const MixtureSpec& spec, const NoiseSchedule& schedule) {
    const double ab = schedule.alpha_bar(t);
    const double var = ab * spec.stddev * spec.stddev + (1.0 - ab);
    const double sab = std::sqrt(ab);

    // Posterior mode responsibilities via log-sum-exp.
    std::vector<double> logp(spec.centers.size());
    double maxlog = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < spec.centers.size(); ++i) {
        const double d = x - sab * spec.centers[i];
        logp[i] = std::log(spec.weights[i]) - 0.5 * d * d / var;
        maxlog = std::max(maxlog, logp[i]);
    }
    double denom = 0.0;
    for (double& lp : logp) {
        lp = std::exp(lp - maxlog);
        denom += lp;
    }
    double score = 0.0;
    for (std::size_t i = 0; i < spec.centers.size(); ++i) {
        score += (logp[i] / denom) * (sab * spec.centers[i] - x) / var;
    }
    return -std::sqrt(1.0 - ab) * score;
}

// ---------------------------------------------------------------------------
// TinyMlp
// ---------------------------------------------------------------------------

namespace {

constexpr int kTimeFeatures = 11;

struct MlpLayout {
    int in, h1, h2;
    std::size_t w1, b1, w2, b2, w3, b3, total;

    MlpLayout(int in_, int h1_, int h2_) : in(in_), h1(h1_), h2(h2_) {
        w1 = 0;
        b1 = w1 + static_cast<std::size_t>(h1) * in;
        w2 = b1 + h1;
        b2 = w2 + static_cast<std::size_t>(h2) * h1;
        w3 = b2 + h2;
        b3 = w3 + h2;
        total = b3 + 1;
    }
};

} // namespace

std::vector<double> TinyMlp::time_features(int t, int t_train) {
    const double tau = static_cast<double>(t) / t_train;
    const double pi = std::numbers::pi;
    std::vector<double> f{tau};
    for (double freq : {1.0, 2.0, 4.0, 8.0, 16.0}) {
        f.push_back(std::sin(freq * pi * tau));
        f.push_back(std::cos(freq * pi * tau));
    }
    return f;
}

TinyMlp TinyMlp::seeded(int t_train_, int h1_, int h2_, uint64_t seed, double x_scale_) {
    TinyMlp m;
    m.in_dim = 1 + kTimeFeatures;
    m.h1 = h1_;
    m.h2 = h2_;
    m.t_train = t_train_;
    m.x_scale = x_scale_;
    const MlpLayout lay(m.in_dim, m.h1, m.h2);
    m.theta.assign(lay.total, 0.0);
    auto rng = stream_rng(seed, "toy.init");
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = lay.w1; i < lay.b1; ++i) m.theta[i] = dist(rng) / std::sqrt(m.in_dim);
    for (std::size_t i = lay.w2; i < lay.b2; ++i) m.theta[i] = dist(rng) / std::sqrt(m.h1);
    for (std::size_t i = lay.w3; i < lay.b3; ++i) m.theta[i] = dist(rng) / std::sqrt(m.h2);
    return m;
}

double TinyMlp::eps(double x, int t) const {
    const MlpLayout lay(in_dim, h1, h2);
    std::vector<double> in(static_cast<std::size_t>(in_dim));
    in[0] = x / x_scale;
    const auto tf = time_features(t, t_train);
    std::copy(tf.begin(), tf.end(), in.begin() + 1);

    std::vector<double> z1(static_cast<std::size_t>(h1));
    for (int i = 0; i < h1; ++i) {
        double a = theta[lay.b1 + i];
        const double* w = &theta[lay.w1 + static_cast<std::size_t>(i) * in_dim];
        for (int j = 0; j < in_dim; ++j) a += w[j] * in[j];
        z1[i] = std::tanh(a);
    }
    std::vector<double> z2(static_cast<std::size_t>(h2));
    for (int i = 0; i < h2; ++i) {
        double a = theta[lay.b2 + i];
        const double* w = &theta[lay.w2 + static_cast<std::size_t>(i) * h1];
        for (int j = 0; j < h1; ++j) a += w[j] * z1[j];
        z2[i] = std::tanh(a);
    }
    double out = theta[lay.b3];
    for (int j = 0; j < h2; ++j) out += theta[lay.w3 + j] * z2[j];
    return out;
}

double TinyMlp::loss_and_grad(const std::vector<double>& x_t, const std::vector<int>& t,
                              const std::vector<double>& eps_target,
                              std::vector<double>* grad) const {
    const MlpLayout lay(in_dim, h1, h2);
    if (grad) grad->assign(lay.total, 0.0);
    const std::size_t batch = x_t.size();
    if (t.size() != batch || eps_target.size() != batch || batch == 0) {
        throw ConfigError("loss_and_grad: inconsistent batch");
    }
    const double inv_b = 1.0 / static_cast<double>(batch);

    double loss = 0.0;
    std::vector<double> in(static_cast<std::size_t>(in_dim));
    std::vector<double> z1(static_cast<std::size_t>(h1)), z2(static_cast<std::size_t>(h2));
    std::vector<double> d1(static_cast<std::size_t>(h1)), d2(static_cast<std::size_t>(h2));

    for (std::size_t s = 0; s < batch; ++s) {
        in[0] = x_t[s] / x_scale;
        const auto tf = time_features(t[s], t_train);
        std::copy(tf.begin(), tf.end(), in.begin() + 1);

        for (int i = 0; i < h1; ++i) {
            double a = theta[lay.b1 + i];
            const double* w = &theta[lay.w1 + static_cast<std::size_t>(i) * in_dim];
            for (int j = 0; j < in_dim; ++j) a += w[j] * in[j];
            z1[i] = std::tanh(a);
        }
        for (int i = 0; i < h2; ++i) {
            double a = theta[lay.b2 + i];
            const double* w = &theta[lay.w2 + static_cast<std::size_t>(i) * h1];
            for (int j = 0; j < h1; ++j) a += w[j] * z1[j];
            z2[i] = std::tanh(a);
        }
        double out = theta[lay.b3];
        for (int j = 0; j < h2; ++j) out += theta[lay.w3 + j] * z2[j];

        const double err = out - eps_target[s];
        loss += err * err * inv_b;
        if (!grad) continue;

        const double g_out = 2.0 * err * inv_b;
        auto& g = *grad;
        g[lay.b3] += g_out;
        for (int j = 0; j < h2; ++j) {
            g[lay.w3 + j] += g_out * z2[j];
            d2[j] = g_out * theta[lay.w3 + j] * (1.0 - z2[j] * z2[j]);
        }
        std::fill(d1.begin(), d1.end(), 0.0);
        for (int i = 0; i < h2; ++i) {
            const double di = d2[i];
            if (di == 0.0) continue;
            g[lay.b2 + i] += di;
            double* gw = &g[lay.w2 + static_cast<std::size_t>(i) * h1];
            const double* w = &theta[lay.w2 + static_cast<std::size_t>(i) * h1];
            for (int j = 0; j < h1; ++j) {
                gw[j] += di * z1[j];
                d1[j] += di * w[j];
            }
        }
        for (int i = 0; i < h1; ++i) {
            const double di = d1[i] * (1.0 - z1[i] * z1[i]);
            g[lay.b1 + i] += di;
            double* gw = &g[lay.w1 + static_cast<std::size_t>(i) * in_dim];
            for (int j = 0; j < in_dim; ++j) gw[j] += di * in[j];
        }
    }
    return loss;
}

TinyMlp train_toy_denoiser(const MixtureSpec& spec, const NoiseSchedule& schedule,
                           const ToyTrainConfig& cfg, uint64_t seed) {
    if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("train_toy_denoiser: bad config");
    double spread = 1.0;
    for (double c : spec.centers) spread = std::max(spread, std::abs(c) + 3.0 * spec.stddev);
    TinyMlp net = TinyMlp::seeded(schedule.t_train, cfg.hidden1, cfg.hidden2, seed, spread);

    auto rng = stream_rng(seed, "toy.train");
    std::uniform_int_distribution<int> t_dist(1, schedule.t_train);
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<double> velocity(net.param_count(), 0.0);
    std::vector<double> grad;
    std::vector<double> x_t(static_cast<std::size_t>(cfg.batch));
    std::vector<int> ts(static_cast<std::size_t>(cfg.batch));
    std::vector<double> target(static_cast<std::size_t>(cfg.batch));

    for (int step = 0; step < cfg.steps; ++step) {
        for (int s = 0; s < cfg.batch; ++s) {
            const double x0 = spec.sample(rng);
            ts[s] = t_dist(rng);
            target[s] = noise(rng);
            x_t[s] = schedule.forward_noise(x0, ts[s], target[s]);
        }
        const double loss = net.loss_and_grad(x_t, ts, target, &grad);
        if (!std::isfinite(loss)) {
            throw NumericError("toy training diverged (NaN loss) at step " +
                               std::to_string(step) + ", seed " + std::to_string(seed));
        }
        for (std::size_t i = 0; i < net.theta.size(); ++i) {
            velocity[i] = cfg.momentum * velocity[i] - cfg.lr * grad[i];
            net.theta[i] += velocity[i];
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Sampling and classification
// ---------------------------------------------------------------------------

std::vector<ToySampleRecord> sample_and_classify(const EpsFn& model,
                                                 const NoiseSchedule& schedule,
                                                 const MixtureSpec& spec,
                                                 const ToySamplerConfig& cfg,
                                                 uint64_t master_seed) {
    const int k_steps = schedule.num_steps();
    std::vector<ToySampleRecord> records(static_cast<std::size_t>(std::max(cfg.samples, 0)));

    parallel_for(records.size(), [&](std::size_t i) {
        auto rng = stream_rng(master_seed, "toy.traj." + std::to_string(i));
        std::normal_distribution<double> normal(0.0, 1.0);

        double x = normal(rng);
        TrajectoryWindow window(cfg.detector.window, 1);
        std::vector<std::vector<double>> trace;
        bool flagged = false;

        for (int k = 1; k <= k_steps; ++k) {
            const int t = schedule.step_timestep(k);
            const bool in_win = k > k_steps - cfg.detector.kappa;
            const std::optional<double> sigma2 = window.variance(); // causal

            const double eps_hat = model(x, t);
            // Unconditional testbed: detected risk (omega raised above omega0)
            // engages the nearest-mode conditional score through the
            // guided-noise blend (cond = point target at the mode center,
            // uncond = the model).
            double eps_tilde = eps_hat;
            if (cfg.schedule_omega) {
                const double omega = dynamic_omega(sigma2.value_or(0.0), cfg.guidance, in_win,
                                                   sigma2.has_value());
                const double w = omega > cfg.guidance.omega0 ? 1.0 : 0.0;
                if (w > 0.0) {
                    const double ab = schedule.alpha_bar(t);
                    const double x0_raw = schedule.predict_x0(x, t, eps_hat);
                    double nearest = spec.centers.front();
                    for (double c : spec.centers) {
                        if (std::abs(x0_raw - c) < std::abs(x0_raw - nearest)) nearest = c;
                    }
                    const double eps_target =
                        (x - std::sqrt(ab) * nearest) / std::sqrt(1.0 - ab);
                    eps_tilde = guided_noise(eps_target, eps_hat, 1.0, w);
                }
            }

            const double x0_hat = schedule.predict_x0(x, t, eps_tilde);
            if (in_win) {
                trace.push_back({x0_hat});
                if (hallucination_flag(sigma2, cfg.detector, in_win)) flagged = true;
            }
            const double step_vec[1] = {x0_hat};
            window.push(step_vec);

            const double noise = k == k_steps ? 0.0 : normal(rng);
            x = schedule.reverse_step(x, k, eps_tilde, noise);
        }

        ToySampleRecord rec;
        rec.final_x = x;
        rec.hal = hal_metric(trace);
        rec.in_support = spec.in_support(x, cfg.support_rel_eps);
        rec.flagged = flagged;
        rec.final_sigma2 = window.variance().value_or(0.0);
        records[i] = rec;
    }, cfg.threads);

    return records;
}

std::optional<double> hal_auc(const std::vector<ToySampleRecord>& records) {
    std::size_t n_pos = 0, n_neg = 0;
    for (const auto& r : records) (r.in_support ? n_neg : n_pos)++;
    if (n_pos < 5 || n_neg < 5) return std::nullopt;

    std::vector<std::pair<double, bool>> scored; // (hal, is_positive)
    scored.reserve(records.size());
    for (const auto& r : records) scored.emplace_back(r.hal, !r.in_support);
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Mann-Whitney with average ranks on ties.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < scored.size()) {
        std::size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // ranks are 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (scored[k].second) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double n_pos_d = static_cast<double>(n_pos);
    const double n_neg_d = static_cast<double>(n_neg);
    return (rank_sum_pos - n_pos_d * (n_pos_d + 1.0) / 2.0) / (n_pos_d * n_neg_d);
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

SyntheticScene make_synthetic_video(uint64_t seed, int frames, int height, int width) {
    if (frames < 1 || height < 1 || width < 1) {
        throw ConfigError("make_synthetic_video: bad dimensions");
    }
    auto rng = stream_rng(seed, "scene");
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SyntheticScene scene;
    scene.video = Video(frames, height, width);
    scene.mask = PixelMask(frames, height, width);

    // Static textured background.
    const double fx = 1.0 + 3.0 * unit(rng);
    const double fy = 1.0 + 3.0 * unit(rng);
    double phase[3];
    for (double& p : phase) p = 2.0 * std::numbers::pi * unit(rng);
    std::vector<double> grain(static_cast<std::size_t>(height) * width);
    for (double& g : grain) g = 2.0 * unit(rng) - 1.0;

    // Moving foreground disc, bouncing off the borders; radius scales with
    // the frame so small test scenes keep a small foreground.
    const double base = std::min(height, width);
    const double radius = base * (0.078 + 0.047 * unit(rng));
    double cx = radius + unit(rng) * (width - 2.0 * radius);
    double cy = radius + unit(rng) * (height - 2.0 * radius);
    double vx = (unit(rng) < 0.5 ? -1.0 : 1.0) * (1.5 + 2.0 * unit(rng));
    double vy = (unit(rng) < 0.5 ? -1.0 : 1.0) * (1.5 + 2.0 * unit(rng));
    double color[3];
    for (double& c : color) c = 0.55 + 0.4 * unit(rng);

    for (int f = 0; f < frames; ++f) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double tex = std::sin(2.0 * std::numbers::pi *
                                            (fx * x / width + fy * y / height));
                const double g = grain[static_cast<std::size_t>(y) * width + x];
                const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const bool inside = r2 <= radius * radius;
                scene.mask.at(f, y, x) = inside ? 1 : 0;
                for (int c = 0; c < 3; ++c) {
                    double val;
                    if (inside) {
                        const double shade = 1.0 - 0.3 * std::sqrt(r2) / radius;
                        val = color[c] * shade + 0.05 * std::sin(0.4 * f + c);
                    } else {
                        val = 0.45 + 0.25 * std::sin(tex * 2.0 + phase[c]) + 0.08 * g;
                    }
                    scene.video.at(c, f, y, x) = std::clamp(val, 0.0, 1.0);
                }
            }
        }
        cx += vx;
        cy += vy;
        if (cx < radius) { cx = 2.0 * radius - cx; vx = -vx; }
        if (cx > width - radius) { cx = 2.0 * (width - radius) - cx; vx = -vx; }
        if (cy < radius) { cy = 2.0 * radius - cy; vy = -vy; }
        if (cy > height - radius) { cy = 2.0 * (height - radius) - cy; vy = -vy; }
    }

    scene.target_desc = "recolor the moving disc, keep the textured background";
    return scene;
}

// ---------------------------------------------------------------------------
// TinyMlp serialization (KVLWGT1f, kind 2)
// ---------------------------------------------------------------------------

namespace {
constexpr uint32_t kWeightsVersion = 1;
constexpr uint32_t kKindMlp = 2;
} // namespace

void TinyMlp::save(const std::filesystem::path& path) const {
    binio::Writer w(path);
    w.magic("KVLWGT1f");
    w.u32(kWeightsVersion);
    w.u32(kKindMlp);
    w.u32(4);
    w.u32(static_cast<uint32_t>(in_dim));
    w.u32(static_cast<uint32_t>(h1));
    w.u32(static_cast<uint32_t>(h2));
    w.u32(static_cast<uint32_t>(t_train));
    w.u32(static_cast<uint32_t>(theta.size() + 1));
    w.u32(1);
    w.f32(static_cast<float>(x_scale));
    w.f32s(theta.data(), theta.size());
    w.close();
}

TinyMlp TinyMlp::load(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("KVLWGT1f");
    if (r.u32() != kWeightsVersion) throw IntegrityError("unsupported weights version");
    if (r.u32() != kKindMlp) throw IntegrityError("weights file is not a toy denoiser");
    if (r.u32() != 4) throw IntegrityError("bad meta block in weights file");
    TinyMlp m;
    m.in_dim = static_cast<int>(r.u32());
    m.h1 = static_cast<int>(r.u32());
    m.h2 = static_cast<int>(r.u32());
    m.t_train = static_cast<int>(r.u32());
    const MlpLayout lay(m.in_dim, m.h1, m.h2);
    const uint32_t n = r.u32();
    if (r.u32() != 1 || n != lay.total + 1) throw IntegrityError("bad parameter block");
    m.x_scale = r.f32();
    m.theta.resize(lay.total);
    r.f32s(m.theta.data(), m.theta.size());
    r.expect_eof();
    return m;
}

} // namespace kvlock
