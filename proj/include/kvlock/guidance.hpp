#pragma once

#include <optional>
#include <vector>

#include "kvlock/attention.hpp"
#include "kvlock/hallucination.hpp"
#include "kvlock/tensor.hpp"

namespace kvlock {

struct GuidanceConfig {
    double omega0 = 5.0;  // base CFG scale
    double b = 2.0;       // clamp boundary for the dynamic scale
    double tau = 0.01;    // hallucination threshold
    int kappa = 20;       // active window: final kappa sampling steps
    double eps_div = 1e-8;
    bool enable_s_star = true;
    bool enable_dynamic_omega = true;
};

struct GuidanceState {
    int step = 0;
    double s_star = 1.0;
    double omega = 0.0;
    double sigma2 = 0.0; // value the decision used; NaN when undefined
    bool window_full = false;
    bool flag = false;
};

// Closed-form least-squares scale:
// s* = <eps_cond, eps_uncond> / (||eps_uncond||^2 + eps_div).
double optimal_scale(const Latent& eps_cond, const Latent& eps_uncond, double eps_div);

// (1 - omega) * s * eps_uncond + omega * eps_cond.
Latent guided_noise(const Latent& eps_cond, const Latent& eps_uncond, double s, double omega);
double guided_noise(double eps_cond, double eps_uncond, double s, double omega);

// omega0 * clamp(sigma2 / tau, 0, b) when risk is detected inside the active
// window (window full and sigma2 >= tau); omega0 otherwise.
double dynamic_omega(double sigma2, const GuidanceConfig& cfg, bool in_window, bool window_full);

// One guided denoising step: conditional + unconditional controlled forwards
// (injection applies to both branches), s*, dynamic omega, guided noise.
// sigma2 is the causal window variance available before this step.
std::pair<Latent, GuidanceState> cfg_step(const DenoiserModel& model, const Latent& x_t,
                                          int t, int step_index,
                                          const std::vector<double>& cond,
                                          const std::vector<double>& null_cond,
                                          const KvBank* bank, const InjectionPlan& plan,
                                          const GuidanceConfig& cfg,
                                          std::optional<double> sigma2);

} // namespace kvlock
