#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kvlock/attention.hpp"
#include "kvlock/guidance.hpp"
#include "kvlock/hallucination.hpp"
#include "kvlock/kv_bank.hpp"
#include "kvlock/metrics.hpp"
#include "kvlock/scheduler.hpp"
#include "kvlock/toy_models.hpp"

namespace kvlock {

// Flat key=value run configuration with section prefixes; defaults reproduce
// the full-model arm.
struct RunConfig {
    // paths.*
    std::filesystem::path video, mask, bank, weights, out;

    // schedule.*
    int t_train = 1000;
    double beta_min = 1e-4, beta_max = 0.02;
    int steps = 50;

    // model.*
    int layers = 4, heads = 2, head_dim = 16;

    // guidance.*
    double omega0 = 5.0, clamp_b = 2.0, eps_div = 1e-8;

    // detector.*
    double tau = 0.01;
    int window = 10, kappa = 20;

    // toggles.*
    bool kv_schedule = true;
    bool omega_schedule = true;
    bool s_star = true;
    bool global_detection = false;
    std::optional<double> fixed_alpha;
    bool replay_source = false;   // pin sampler state to the noised source (lock audit)
    bool use_source_cond = false; // edit with the source conditioning vector

    // toy.*
    ToyTrainConfig toy_train;
    int toy_samples = 2000;
    int toy_seeds = 3;

    // ablate.*
    int scenes = 5;

    // scene.* (gen)
    int scene_frames = 17, scene_height = 64, scene_width = 64;

    uint64_t seed = 42;

    NoiseSchedule make_noise_schedule() const;
    DitConfig dit_config() const;
    GuidanceConfig guidance_config() const;
    DetectorConfig detector_config() const;
    void validate() const;
};

RunConfig parse_config(const std::filesystem::path& path);
// "section.key=value" override, also used for --toggle NAME=BOOL.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

struct EditTraceRow {
    int step = 0;
    std::optional<double> sigma2; // causal value the step's decisions used
    double alpha = 0.0;
    bool flag = false;
    double s_star = 1.0;
    double omega = 0.0;
};

struct EditResult {
    Latent final_latent;
    Video edited;
    std::vector<EditTraceRow> trace;
    std::vector<Latent> x0_trace; // per-step predicted clean latent
    int flags_fired = 0;
    std::optional<double> final_sigma2; // after the last push
    double bg_ssim = 0.0, bg_psnr = 0.0;
};

struct EditOptions {
    GuidanceConfig guidance;
    DetectorConfig detector;
    bool kv_schedule = true;
    std::optional<double> fixed_alpha;
    bool global_detection = false;
    bool replay_source = false;
};

// The guided, injected sampling loop. Per-step order: causal sigma2 ->
// fusion rate -> CFG step (s*, dynamic omega) -> x0_hat -> detector push ->
// ancestral update. Noise streams derive from master_seed so arms sharing a
// seed share noise. Metrics are filled in by the caller (needs the videos).
EditResult edit_core(const DenoiserModel& model, const NoiseSchedule& schedule,
                     const Latent& z0_src, const LatentMask& lmask, const TokenMask& tmask,
                     const KvBank* bank, const std::vector<double>& cond,
                     const std::vector<double>& null_cond, const EditOptions& opt,
                     uint64_t master_seed);

std::vector<double> conditioning_vector(uint64_t master_seed, const std::string& name, int dim);

// Table-2 ablation arms plus the full model.
struct AblationArm {
    std::string name;
    bool kv_schedule = false, omega_schedule = false, s_star = false;
    std::optional<double> fixed_alpha;
    bool global_detection = false;
};
std::vector<AblationArm> ablation_arms();

struct AblationCell {
    double bg_ssim = 0.0, bg_psnr = 0.0;
    int flags_fired = 0;
    bool failed = false;
    std::string error;
};

struct AblationResult {
    std::vector<AblationArm> arms;
    std::vector<std::string> scene_names;
    std::vector<std::vector<AblationCell>> cells; // [arm][scene]
};

AblationResult run_ablation(const RunConfig& cfg);

// Toy hallucination experiment: per seed, train the MLP and sample two arms
// (scheduling off/on) over shared trajectory streams; one analytic-score
// control arm.
struct ToyArmSummary {
    std::vector<ToySampleRecord> records;
    std::optional<double> auc;
    double halluc_rate = 0.0;
    int flagged = 0;
    int flagged_still_above_tau = 0; // final-window sigma2 > tau
};

struct ToySeedReport {
    uint64_t seed = 0;
    ToyArmSummary plain, scheduled;
};

struct ToyExperimentReport {
    std::vector<ToySeedReport> seeds;
    ToyArmSummary analytic_control;
};

ToyExperimentReport run_toy_experiment(const RunConfig& cfg);

// CLI entry points; throw kvlock::Error subclasses on failure.
void cmd_gen(const RunConfig& cfg);
void cmd_cache(const RunConfig& cfg);
void cmd_edit(const RunConfig& cfg);
void cmd_toy(const RunConfig& cfg);
void cmd_ablate(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);

// Shortest round-trip decimal form, stable across runs (CSV determinism).
std::string format_double(double x);

} // namespace kvlock
