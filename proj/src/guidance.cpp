#include "kvlock/guidance.hpp"

#include <algorithm>
#include <cmath>

namespace kvlock {

double optimal_scale(const Latent& eps_cond, const Latent& eps_uncond, double eps_div) {
    require_same_shape(eps_cond, eps_uncond, "optimal_scale");
    double dot = 0.0, norm_sq = 0.0;
    for (std::size_t i = 0; i < eps_cond.v.size(); ++i) {
        dot += eps_cond.v[i] * eps_uncond.v[i];
        norm_sq += eps_uncond.v[i] * eps_uncond.v[i];
    }
    return dot / (norm_sq + eps_div);
}

double guided_noise(double eps_cond, double eps_uncond, double s, double omega) {
    return (1.0 - omega) * s * eps_uncond + omega * eps_cond;
}

Latent guided_noise(const Latent& eps_cond, const Latent& eps_uncond, double s, double omega) {
    require_same_shape(eps_cond, eps_uncond, "guided_noise");
    Latent out = eps_cond;
    const double u = (1.0 - omega) * s;
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        out.v[i] = u * eps_uncond.v[i] + omega * eps_cond.v[i];
    }
    return out;
}

double dynamic_omega(double sigma2, const GuidanceConfig& cfg, bool in_window,
                     bool window_full) {
    if (!(in_window && window_full && sigma2 >= cfg.tau)) return cfg.omega0;
    return cfg.omega0 * std::clamp(sigma2 / cfg.tau, 0.0, cfg.b);
}

std::pair<Latent, GuidanceState> cfg_step(const DenoiserModel& model, const Latent& x_t, int t,
                                          int step_index, const std::vector<double>& cond,
                                          const std::vector<double>& null_cond,
                                          const KvBank* bank, const InjectionPlan& plan,
                                          const GuidanceConfig& cfg,
                                          std::optional<double> sigma2) {
    const Latent eps_cond = controlled_forward(model, x_t, t, cond, bank, plan);
    const Latent eps_uncond = controlled_forward(model, x_t, t, null_cond, bank, plan);

    GuidanceState state;
    state.step = step_index;
    state.window_full = sigma2.has_value();
    state.sigma2 = sigma2.value_or(std::numeric_limits<double>::quiet_NaN());

    state.s_star = cfg.enable_s_star ? optimal_scale(eps_cond, eps_uncond, cfg.eps_div) : 1.0;
    state.omega = cfg.enable_dynamic_omega
                      ? dynamic_omega(sigma2.value_or(0.0), cfg, plan.active, sigma2.has_value())
                      : cfg.omega0;
    state.flag = sigma2.has_value() && plan.active && *sigma2 > cfg.tau;

    Latent eps = guided_noise(eps_cond, eps_uncond, state.s_star, state.omega);
    return {std::move(eps), state};
}

} // namespace kvlock
