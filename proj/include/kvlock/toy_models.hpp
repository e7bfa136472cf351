#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kvlock/guidance.hpp"
#include "kvlock/hallucination.hpp"
#include "kvlock/mask_pipeline.hpp"
#include "kvlock/scheduler.hpp"

namespace kvlock {

// 1-D Gaussian mixture with shared stddev.
struct MixtureSpec {
    std::vector<double> centers{-1.0, 1.0};
    double stddev = 0.05;
    std::vector<double> weights{0.5, 0.5};

    double density(double x) const;
    double max_density() const;
    // epsilon-support: q(x) > rel_eps * max density.
    bool in_support(double x, double rel_eps = 1e-6) const;
    double sample(std::mt19937_64& rng) const;
};

// Exact noise prediction from the closed-form score of the noised mixture.
double analytic_eps(double x, int t, const MixtureSpec& spec, const NoiseSchedule& schedule);

// Two-hidden-layer tanh MLP on (x / x_scale, timestep features), trained
// with manual backprop. Parameters live in one flat vector so
// finite-difference probes and SGD touch the same storage.
struct TinyMlp {
    int in_dim = 0, h1 = 0, h2 = 0;
    std::vector<double> theta;
    double x_scale = 1.0; // input normalization, set from the data spread

    static TinyMlp seeded(int t_train, int h1, int h2, uint64_t seed, double x_scale = 1.0);
    static std::vector<double> time_features(int t, int t_train);

    int t_train = 1000;
    std::size_t param_count() const { return theta.size(); }

    double eps(double x, int t) const;

    // Mean squared eps-prediction loss over the batch plus its gradient.
    double loss_and_grad(const std::vector<double>& x_t, const std::vector<int>& t,
                         const std::vector<double>& eps_target,
                         std::vector<double>* grad) const;

    void save(const std::filesystem::path& path) const;
    static TinyMlp load(const std::filesystem::path& path);
};

struct ToyTrainConfig {
    int steps = 20000;
    int batch = 64;
    double lr = 3e-3;
    double momentum = 0.9;
    int hidden1 = 64;
    int hidden2 = 64;
};

// SGD with momentum on the eps objective; NaN loss raises NumericError with
// the seed in the message.
TinyMlp train_toy_denoiser(const MixtureSpec& spec, const NoiseSchedule& schedule,
                           const ToyTrainConfig& cfg, uint64_t seed);

using EpsFn = std::function<double(double x, int t)>;

struct ToySampleRecord {
    double final_x = 0.0;
    double hal = 0.0;
    bool in_support = false;
    bool flagged = false;        // any in-window flag
    double final_sigma2 = 0.0;   // window variance after the last push
};

struct ToySamplerConfig {
    int samples = 2000;
    DetectorConfig detector;
    // Dynamic-omega intervention for the unconditional testbed:
    // eps_tilde = omega * eps_hat (zero unconditional branch), omega0 = 1.
    bool schedule_omega = false;
    GuidanceConfig guidance{.omega0 = 1.0};
    double support_rel_eps = 1e-6;
    int threads = 0; // 0 = library default
};

// Reverse-samples n trajectories, records the x0_hat trace over the final
// kappa steps, scores Hal, labels support membership by the mixture density.
std::vector<ToySampleRecord> sample_and_classify(const EpsFn& model, const NoiseSchedule& schedule,
                                                 const MixtureSpec& spec,
                                                 const ToySamplerConfig& cfg, uint64_t master_seed);

// Rank-based ROC AUC for hal scores against the hallucination label
// (positive = not in support). nullopt when either class has < 5 members.
std::optional<double> hal_auc(const std::vector<ToySampleRecord>& records);

struct SyntheticScene {
    Video video;
    PixelMask mask;
    std::string target_desc;
};

// Deterministic moving-blob scene: textured static background, moving
// foreground disc, exact per-frame mask.
SyntheticScene make_synthetic_video(uint64_t seed, int frames = 17, int height = 64,
                                    int width = 64);

} // namespace kvlock
